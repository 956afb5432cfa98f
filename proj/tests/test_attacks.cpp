// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "smoothfat/attacks.hpp"

using namespace smoothfat;

namespace {

struct Fixture {
    ModelSpec spec = ModelSpec::mlp(12, {10}, 3);
    ModelParams<float> params = build_model(spec, 3);
    Dataset data = make_blobs(3, 8, 12, 0.6, 9);
};

void expect_in_ball_and_box(const Tensor& x, const Tensor& adv, double xi) {
    ASSERT_EQ(x.shape, adv.shape);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_LE(std::abs(double(adv[i]) - double(x[i])), xi + 1e-6);
        EXPECT_GE(adv[i], 0.0f);
        EXPECT_LE(adv[i], 1.0f);
    }
}

}  // namespace

TEST(Attacks, ProjectClampsToBallThenBox) {
    const std::vector<float> x{0.0f, 0.5f, 1.0f, 0.95f};
    const std::vector<float> d{-0.3f, 0.3f, 0.1f, 0.1f};
    const auto p = project(x, d, 0.2);
    EXPECT_FLOAT_EQ(p[0], 0.0f);   // box wins at 0
    EXPECT_FLOAT_EQ(p[1], 0.2f);   // ball
    EXPECT_FLOAT_EQ(p[2], 0.0f);   // box wins at 1
    EXPECT_NEAR(p[3], 0.05f, 1e-6);
}

TEST(Attacks, ProjectIsIdempotent) {
    Rng rng(4);
    std::vector<float> x(200), d(200);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = static_cast<float>(rng.uniform());
        d[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    const auto once = project(x, d, 0.1);
    EXPECT_EQ(project(x, once, 0.1), once);
}

TEST(Attacks, ApplyPerturbationClamps) {
    Tensor x({3}, {0.1f, 0.5f, 0.9f});
    const std::vector<float> d{-0.5f, 0.0f, 0.5f};
    const auto y = apply_perturbation(x, d);
    EXPECT_EQ(y.data, (std::vector<float>{0.0f, 0.5f, 1.0f}));
}

TEST(Attacks, InitStrategiesRespectBudget) {
    Fixture f;
    const auto batch = gather(f.data, {0, 5, 9, 17});
    const double xi = 0.1;
    for (auto s : {InitStrategy::zero, InitStrategy::rs, InitStrategy::bp, InitStrategy::mep}) {
        PerturbationStore store;
        Rng rng(1);
        const auto d0 = init_perturbation(s, batch, store, xi, rng);
        ASSERT_EQ(d0.size(), batch.images.size());
        for (std::size_t i = 0; i < d0.size(); ++i) {
            EXPECT_LE(std::abs(d0[i]), xi + 1e-7);
            EXPECT_GE(batch.images[i] + d0[i], -1e-7f);
            EXPECT_LE(batch.images[i] + d0[i], 1.0f + 1e-7f);
        }
        if (s != InitStrategy::rs)
            for (float v : d0) EXPECT_EQ(v, 0.0f) << to_string(s);
    }
}

TEST(Attacks, RandomStartIsSpreadOverTheBall) {
    Dataset d;
    d.classes = 2;
    d.images = Tensor({1, 1, 1, 4000}, std::vector<float>(4000, 0.5f));
    d.labels = {0};
    const auto batch = gather(d, {0});
    PerturbationStore store;
    Rng rng(2);
    const auto d0 = init_perturbation(InitStrategy::rs, batch, store, 0.2, rng);
    double mean = 0, m2 = 0;
    for (float v : d0) {
        mean += v;
        m2 += double(v) * v;
    }
    mean /= 4000.0;
    m2 /= 4000.0;
    EXPECT_NEAR(mean, 0.0, 0.01);
    EXPECT_NEAR(m2, 0.04 / 3.0, 0.001);  // variance of U(-a, a) is a^2 / 3
}

TEST(Attacks, BpReusesPreviousBatchAndFallsBackOnShapeChange) {
    Fixture f;
    const auto b1 = gather(f.data, {0, 1});
    const auto b2 = gather(f.data, {2, 3});
    const auto b3 = gather(f.data, {4});
    PerturbationStore store;
    Rng rng(0);
    std::vector<float> final_delta(b1.images.size(), 0.05f);
    update_store(store, b1, 0, final_delta, 0.3, 0.1, f.data.size());
    const auto d2 = init_perturbation(InitStrategy::bp, b2, store, 0.1, rng);
    EXPECT_EQ(d2, project(b2.images.data, final_delta, 0.1));
    const auto d3 = init_perturbation(InitStrategy::bp, b3, store, 0.1, rng);
    for (float v : d3) EXPECT_EQ(v, 0.0f);
    EXPECT_EQ(store.bp_fallbacks, 1u);
}

TEST(Attacks, MepMomentumAccumulatesPerSample) {
    Fixture f;
    const auto b = gather(f.data, {3});
    PerturbationStore store;
    Rng rng(0);
    const std::size_t n = b.images.size();
    std::vector<float> step(n, 0.02f);
    update_store(store, b, 0, step, 0.5, 0.1, f.data.size());
    update_store(store, b, 1, step, 0.5, 0.1, f.data.size());
    // m = 0.5 * 0.02 + 0.02 = 0.03
    const auto d0 = init_perturbation(InitStrategy::mep, b, store, 0.1, rng);
    const auto expected = project(b.images.data, std::vector<float>(n, 0.03f), 0.1);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(d0[i], expected[i], 1e-7);
    // other samples are untouched
    const auto other = gather(f.data, {4});
    for (float v : init_perturbation(InitStrategy::mep, other, store, 0.1, rng)) EXPECT_EQ(v, 0.0f);
}

TEST(Attacks, FgsmMovesEachPixelByXiWhereUnclamped) {
    Fixture f;
    const auto b = gather(f.data, {0, 1, 2, 3, 4, 5});
    const double xi = 0.05;
    std::vector<float> zero(b.images.size(), 0.0f);
    const auto r = fgsm(f.spec, f.params, b.images, b.labels, zero, xi);
    expect_in_ball_and_box(b.images, r.adversarial, xi);
    const auto g = input_gradient(f.spec, f.params, b.images, b.labels);
    for (std::size_t i = 0; i < zero.size(); ++i) {
        const float x = b.images[i];
        if (g.grad[i] == 0.0f || x - xi < 0.0f || x + xi > 1.0f) continue;
        EXPECT_NEAR(r.delta[i], g.grad[i] > 0 ? xi : -xi, 1e-6);
    }
}

TEST(Attacks, FgsmIncreasesLossOnAverage) {
    Fixture f;
    std::vector<std::size_t> all(f.data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto b = gather(f.data, all);
    std::vector<float> zero(b.images.size(), 0.0f);
    const auto before = input_gradient(f.spec, f.params, b.images, b.labels).losses;
    const auto r = fgsm(f.spec, f.params, b.images, b.labels, zero, 0.05);
    const auto after = input_gradient(f.spec, f.params, r.adversarial, b.labels).losses;
    double sb = 0, sa = 0;
    for (std::size_t i = 0; i < before.size(); ++i) {
        sb += before[i];
        sa += after[i];
    }
    EXPECT_GT(sa, sb);
}

TEST(Attacks, PgdOneStepEqualsFgsm) {
    Fixture f;
    const auto b = gather(f.data, {1, 7, 11});
    Rng rng(3);
    PerturbationStore store;
    const auto d0 = init_perturbation(InitStrategy::rs, b, store, 0.08, rng);
    const auto a = fgsm(f.spec, f.params, b.images, b.labels, d0, 0.08);
    const auto p = pgd(f.spec, f.params, b.images, b.labels, d0, 0.08, 0.08, 1);
    EXPECT_EQ(a.adversarial.data, p.adversarial.data);
    EXPECT_EQ(a.delta, p.delta);
}

TEST(Attacks, PgdZeroStepsReturnsStart) {
    Fixture f;
    const auto b = gather(f.data, {2});
    std::vector<float> d0(b.images.size(), 0.01f);
    const auto r = pgd(f.spec, f.params, b.images, b.labels, d0, 0.05, 0.01, 0);
    EXPECT_EQ(r.adversarial, apply_perturbation(b.images, d0));
}

TEST(Attacks, PgdStaysInBudgetForManySteps) {
    Fixture f;
    const auto b = gather(f.data, {0, 3, 6, 9, 12});
    std::vector<float> zero(b.images.size(), 0.0f);
    for (int steps : {1, 5, 50}) {
        const auto r = pgd(f.spec, f.params, b.images, b.labels, zero, 0.1, 0.03, steps);
        expect_in_ball_and_box(b.images, r.adversarial, 0.1);
    }
}

TEST(Attacks, ConfigValidation) {
    AttackConfig c;
    EXPECT_NO_THROW(c.validate());
    c.step = c.xi * 2;
    EXPECT_ANY_THROW(c.validate());
    c = AttackConfig{};
    c.steps = 0;
    EXPECT_ANY_THROW(c.validate());
    c = AttackConfig{};
    c.mep_momentum = 1.0;
    EXPECT_ANY_THROW(c.validate());
    EXPECT_EQ(parse_init_strategy("mep"), InitStrategy::mep);
    EXPECT_ANY_THROW(parse_init_strategy("bogus"));
}
