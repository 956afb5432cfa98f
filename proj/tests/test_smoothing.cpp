// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "smoothfat/smoothing.hpp"

using namespace smoothfat;

namespace {

EpochStats ready_stats(double u, double u_adv, double gamma) {
    EpochStats s;
    s.completed = 2;
    s.u_prev = u;
    s.u_adv_prev = u_adv;
    s.gamma = gamma;
    return s;
}

}  // namespace

TEST(Smoothing, StrideClampsIntoRange) {
    EXPECT_DOUBLE_EQ(convergence_stride(0.001, 0.02, 0.03), 0.02);
    EXPECT_DOUBLE_EQ(convergence_stride(0.025, 0.02, 0.03), 0.025);
    EXPECT_DOUBLE_EQ(convergence_stride(0.5, 0.02, 0.03), 0.03);
}

TEST(Smoothing, StrideIsMonotoneProperty) {
    std::mt19937_64 gen(1);
    std::uniform_real_distribution<double> u(0.0, 0.1);
    for (int i = 0; i < 1000; ++i) {
        double a = u(gen), b = u(gen);
        if (a > b) std::swap(a, b);
        const double ga = convergence_stride(a, 0.02, 0.03), gb = convergence_stride(b, 0.02, 0.03);
        EXPECT_LE(ga, gb);
        EXPECT_GE(ga, 0.02);
        EXPECT_LE(gb, 0.03);
    }
}

TEST(Smoothing, ConditionIsStrict) {
    EXPECT_FALSE(condition(1.25, 1.0, 0.25));
    EXPECT_TRUE(condition(1.2500001, 1.0, 0.25));
    EXPECT_TRUE(condition(0.7, 1.0, 0.25));
}

TEST(Smoothing, EpochStatsAreSizeWeighted) {
    SmoothConfig cfg;
    const std::vector<BatchRecord> e1{{3, 1.0, 2.0}, {1, 5.0, 6.0}};
    const auto s1 = update_epoch_stats(EpochStats{}, e1, cfg);
    EXPECT_EQ(s1.completed, 1);
    EXPECT_DOUBLE_EQ(*s1.u_prev, 2.0);
    EXPECT_DOUBLE_EQ(*s1.u_adv_prev, 3.0);
    EXPECT_FALSE(s1.d_prev.has_value());
    EXPECT_DOUBLE_EQ(s1.gamma, cfg.gamma_max);
    const std::vector<BatchRecord> e2{{4, 2.021, 2.5}};
    const auto s2 = update_epoch_stats(s1, e2, cfg);
    EXPECT_NEAR(*s2.d_prev, 0.021, 1e-12);
    EXPECT_NEAR(s2.gamma, 0.021, 1e-12);
    EXPECT_THROW(update_epoch_stats(s2, std::vector<BatchRecord>{}, cfg), std::invalid_argument);
}

TEST(Smoothing, WeightCenterIsRunningMean) {
    WeightCenter c;
    EXPECT_EQ(c.count(), 0u);
    c.add(std::vector<float>{1.0f, 2.0f});
    c.add(std::vector<float>{3.0f, 6.0f});
    c.add(std::vector<float>{5.0f, 1.0f});
    EXPECT_EQ(c.count(), 3u);
    EXPECT_NEAR(c.mean()[0], 3.0, 1e-12);
    EXPECT_NEAR(c.mean()[1], 3.0, 1e-12);
    EXPECT_THROW(c.add(std::vector<float>{1.0f}), ShapeError);
}

TEST(Smoothing, ExampleConstraintSelectsAndAverages) {
    const auto s = ready_stats(1.0, 2.0, 0.1);
    const std::vector<double> ben{1.05, 1.5, 0.5, 1.0};
    const std::vector<double> adv{2.0, 3.0, 2.5, 9.0};
    // selected: 1 and 2. w1 = 0.5, w2 = 1
    const double expected = (0.5 * 1.0 + 0.5 + 0.5 * 0.5 + 0.5) / 4.0;
    EXPECT_NEAR(loss_cs_example_value(adv, ben, s, 0.5, 1.0), expected, 1e-12);

    ad::Tape<double> t;
    auto a = t.leaf(TensorD({4}, adv));
    auto b = t.leaf(TensorD({4}, ben));
    auto term = loss_cs_example(a, b, s, 0.5, 1.0);
    EXPECT_EQ(term.selected, 2u);
    EXPECT_NEAR(term.loss.item(), expected, 1e-12);
    t.backward(term.loss);
    const auto gb = t.grad(b);
    EXPECT_EQ(gb.data, (std::vector<double>{0.0, 0.25, -0.25, 0.0}));
}

TEST(Smoothing, ConstraintInactiveBeforeStatsExist) {
    ad::Tape<double> t;
    auto a = t.leaf(TensorD({2}, {5.0, 5.0}));
    auto b = t.leaf(TensorD({2}, {5.0, 5.0}));
    EpochStats empty;
    EXPECT_EQ(loss_cs_example(a, b, empty, 1.0, 1.0).loss.item(), 0.0);
    EXPECT_EQ(loss_cs_batch(a, b, empty, 1.0, 1.0).selected, 0u);
    EXPECT_EQ(loss_cs_batch_value(5.0, 5.0, empty, 1.0, 1.0), 0.0);
}

TEST(Smoothing, BatchConstraintUsesBatchMeans) {
    const auto s = ready_stats(1.0, 2.0, 0.1);
    ad::Tape<double> t;
    auto a = t.leaf(TensorD({2}, {2.0, 4.0}));
    auto b = t.leaf(TensorD({2}, {1.0, 1.4}));  // mean 1.2 fires
    auto term = loss_cs_batch(a, b, s, 1.0, 1.0);
    EXPECT_EQ(term.selected, 2u);
    EXPECT_NEAR(term.loss.item(), 1.0 + 0.2, 1e-12);
    EXPECT_NEAR(loss_cs_batch_value(3.0, 1.2, s, 1.0, 1.0), 1.2, 1e-12);
    auto quiet = loss_cs_batch(a, t.leaf(TensorD({2}, {0.95, 1.05})), s, 1.0, 1.0);
    EXPECT_EQ(quiet.selected, 0u);
    EXPECT_EQ(quiet.loss.item(), 0.0);
}

TEST(Smoothing, BatchEqualsExampleOnSingletonsProperty) {
    std::mt19937_64 gen(2);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    for (int i = 0; i < 500; ++i) {
        const auto s = ready_stats(u(gen), u(gen), 0.03);
        const std::vector<double> adv{u(gen)}, ben{u(gen)};
        EXPECT_NEAR(loss_cs_example_value(adv, ben, s, 0.7, 1.0), loss_cs_batch_value(adv[0], ben[0], s, 0.7, 1.0),
                    1e-12);
    }
}

TEST(Smoothing, WeightCentralizationValueAndGradient) {
    WeightCenter c;
    c.add(std::vector<float>{0.0f, 0.0f});
    const std::vector<float> theta{3.0f, 4.0f};
    EXPECT_NEAR(weight_centralization_value(theta, c, 0.1), 0.5, 1e-12);
    ad::Tape<double> t;
    auto x = t.leaf(TensorD({2}, {3.0, 4.0}));
    auto y = weight_centralization(x, c, 0.1);
    EXPECT_NEAR(y.item(), 0.5, 1e-12);
    t.backward(y);
    EXPECT_NEAR(t.grad(x)[0], 0.06, 1e-12);
    EXPECT_NEAR(t.grad(x)[1], 0.08, 1e-12);
    EXPECT_EQ(weight_centralization_value(theta, WeightCenter{}, 0.1), 0.0);
}

TEST(Smoothing, CentralizationDescentProperty) {
    WeightCenter c;
    c.add(std::vector<float>{0.5f, -0.5f, 1.0f});
    std::vector<float> theta{2.0f, 1.0f, -1.0f};
    const double before = weight_centralization_value(theta, c, 0.1);
    ad::Tape<double> t;
    auto x = t.leaf(TensorD({3}, std::vector<double>(theta.begin(), theta.end())));
    t.backward(weight_centralization(x, c, 0.1));
    for (std::size_t i = 0; i < 3; ++i) theta[i] -= static_cast<float>(0.1 * t.grad(x)[i]);
    EXPECT_LT(weight_centralization_value(theta, c, 0.1), before);
}

TEST(Smoothing, MepLogitRegIsMeanSquaredDistance) {
    ad::Tape<double> t;
    auto a = t.leaf(TensorD({2, 2}, {1.0, 2.0, 3.0, 4.0}));
    auto b = t.leaf(TensorD({2, 2}, {0.0, 2.0, 3.0, 2.0}));
    EXPECT_NEAR(mep_logit_reg(a, b, 0.5).item(), 0.5 * (1.0 + 4.0) / 2.0, 1e-12);
}

TEST(Smoothing, ConfigRejectsConflicts) {
    SmoothConfig c;
    EXPECT_NO_THROW(c.validate());
    c.centralization = true;
    c.mep_logit_weight = 0.1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = SmoothConfig{};
    c.gamma_min = 0.05;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = SmoothConfig{};
    c.w2 = -1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    EXPECT_EQ(parse_smooth_variant("example"), SmoothVariant::example);
}

TEST(Smoothing, CosineHandlesZeroVectors) {
    EXPECT_FALSE(cosine(std::vector<float>{0, 0}, std::vector<float>{1, 0}).has_value());
    EXPECT_NEAR(*cosine(std::vector<float>{1, 0}, std::vector<float>{1, 1}), std::sqrt(0.5), 1e-7);
}
