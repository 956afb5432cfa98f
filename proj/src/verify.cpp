// SPDX-License-Identifier: Apache-2.0
#include "smoothfat/verify.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>

#include "smoothfat/attacks.hpp"
#include "smoothfat/autodiff.hpp"
#include "smoothfat/config.hpp"
#include "smoothfat/data.hpp"
#include "smoothfat/models.hpp"
#include "smoothfat/rng.hpp"
#include "smoothfat/smoothing.hpp"
#include "smoothfat/trainer.hpp"

namespace smoothfat {

namespace {

using ad::Tape;
using ad::Var;
using VarD = Var<double>;
using Builder = std::function<VarD(Tape<double>&, VarD)>;

constexpr double kFdStep = 1e-6;
constexpr double kFdTolerance = 1e-6;

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

PropertyResult finish(std::string name, double measured, double tolerance, const Timer& timer,
                      std::string detail = {}) {
    PropertyResult r;
    r.name = std::move(name);
    r.measured = measured;
    r.tolerance = tolerance;
    r.passed = std::isfinite(measured) && measured <= tolerance;
    r.detail = std::move(detail);
    r.seconds = timer.seconds();
    return r;
}

// Normal entries pushed at least `margin` away from zero so |.| and relu stay smooth.
TensorD random_tensor(Rng& rng, Shape shape, double margin = 0.0) {
    TensorD t(std::move(shape));
    for (double& v : t.data) {
        v = rng.normal();
        if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
    }
    return t;
}

std::vector<double> random_coefficients(Rng& rng, std::size_t n) {
    std::vector<double> c(n);
    for (double& v : c) v = rng.uniform(-1.0, 1.0);
    return c;
}

std::vector<int> random_labels(Rng& rng, std::size_t n, std::size_t k) {
    std::vector<int> y(n);
    for (int& v : y) v = static_cast<int>(rng.below(k));
    return y;
}

struct GradCase {
    std::string name;
    // Builds an instance: the point to differentiate at and the scalar function.
    std::function<std::pair<TensorD, Builder>(Rng&)> make;
};

std::vector<GradCase> gradient_cases() {
    std::vector<GradCase> cases;
    auto unary = [&](std::string name, Shape shape, double margin, std::function<VarD(VarD)> op) {
        cases.push_back({name, [=](Rng& rng) {
                             auto w = random_coefficients(rng, 1 << 12);
                             Builder f = [op, w](Tape<double>&, VarD x) {
                                 VarD y = op(x);
                                 if (y.value().size() == 1) return y;
                                 return ad::weighted_sum<double>(y, std::span<const double>(w.data(), y.value().size()));
                             };
                             return std::pair{random_tensor(rng, shape, margin), f};
                         }});
    };
    // Binary ops: x enters as the left or the right operand of a constant partner.
    auto binary = [&](std::string name, Shape xs, Shape cs, bool x_left,
                      std::function<VarD(VarD, VarD)> op) {
        cases.push_back({name, [=](Rng& rng) {
                             TensorD c = random_tensor(rng, cs);
                             auto w = random_coefficients(rng, 1 << 12);
                             Builder f = [op, c, w, x_left](Tape<double>& t, VarD x) {
                                 VarD k = t.constant(c);
                                 VarD y = x_left ? op(x, k) : op(k, x);
                                 if (y.value().size() == 1) return y;
                                 return ad::weighted_sum<double>(y, std::span<const double>(w.data(), y.value().size()));
                             };
                             return std::pair{random_tensor(rng, xs), f};
                         }});
    };

    binary("matmul.lhs", {3, 4}, {4, 2}, true, [](VarD a, VarD b) { return ad::matmul(a, b); });
    binary("matmul.rhs", {4, 2}, {3, 4}, false, [](VarD a, VarD b) { return ad::matmul(a, b); });
    binary("add", {3, 4}, {3, 4}, true, [](VarD a, VarD b) { return ad::add(a, b); });
    binary("sub.lhs", {3, 4}, {3, 4}, true, [](VarD a, VarD b) { return ad::sub(a, b); });
    binary("sub.rhs", {3, 4}, {3, 4}, false, [](VarD a, VarD b) { return ad::sub(a, b); });
    binary("add_row.input", {3, 4}, {4}, true, [](VarD a, VarD b) { return ad::add_row(a, b); });
    binary("add_row.bias", {4}, {3, 4}, false, [](VarD a, VarD b) { return ad::add_row(a, b); });
    unary("scale", {5}, 0.0, [](VarD a) { return ad::scale(a, -1.7); });
    unary("add_scalar", {5}, 0.0, [](VarD a) { return ad::add_scalar(a, 0.3); });
    unary("relu", {3, 5}, 0.05, [](VarD a) { return ad::relu(a); });
    unary("abs", {3, 5}, 0.05, [](VarD a) { return ad::abs(a); });
    unary("sum", {3, 5}, 0.0, [](VarD a) { return ad::sum(a); });
    unary("mean", {3, 5}, 0.0, [](VarD a) { return ad::mean(a); });
    binary("squared_distance", {2, 3}, {2, 3}, true, [](VarD a, VarD b) { return ad::squared_distance(a, b); });
    unary("pnorm.p1", {6}, 0.05, [](VarD a) { return ad::pnorm(a, 1.0); });
    unary("pnorm.p2", {6}, 0.0, [](VarD a) { return ad::pnorm(a, 2.0); });
    unary("pnorm.p3", {6}, 0.05, [](VarD a) { return ad::pnorm(a, 3.0); });
    unary("reshape", {2, 6}, 0.0, [](VarD a) { return ad::reshape(a, {3, 4}); });
    unary("mean_pool2", {2, 4, 4, 2}, 0.0, [](VarD a) { return ad::mean_pool2(a); });
    unary("concat_flat", {2, 3}, 0.0, [](VarD a) {
        std::vector<VarD> parts{a, ad::scale(a, 2.0), a};
        return ad::concat_flat<double>(parts);
    });
    cases.push_back({"softmax_cross_entropy", [](Rng& rng) {
                         auto labels = random_labels(rng, 4, 3);
                         auto w = random_coefficients(rng, 4);
                         Builder f = [labels, w](Tape<double>&, VarD x) {
                             return ad::weighted_sum<double>(ad::softmax_cross_entropy(x, labels), w);
                         };
                         return std::pair{random_tensor(rng, {4, 3}), f};
                     }});
    for (int which = 0; which < 3; ++which) {
        static const char* names[] = {"conv3x3.input", "conv3x3.weight", "conv3x3.bias"};
        cases.push_back({names[which], [which](Rng& rng) {
                             const Shape in{2, 4, 4, 3}, wt{27, 2}, bs{2};
                             TensorD a = random_tensor(rng, in), b = random_tensor(rng, wt), c = random_tensor(rng, bs);
                             auto w = random_coefficients(rng, 2 * 4 * 4 * 2);
                             Builder f = [=](Tape<double>& t, VarD x) {
                                 VarD i = which == 0 ? x : t.constant(a);
                                 VarD k = which == 1 ? x : t.constant(b);
                                 VarD o = which == 2 ? x : t.constant(c);
                                 return ad::weighted_sum<double>(ad::conv3x3(i, k, o), w);
                             };
                             return std::pair{which == 0 ? a : which == 1 ? b : c, f};
                         }});
    }
    cases.push_back({"weighted_sum", [](Rng& rng) {
                         auto w = random_coefficients(rng, 7);
                         Builder f = [w](Tape<double>&, VarD x) { return ad::weighted_sum<double>(x, w); };
                         return std::pair{random_tensor(rng, {7}), f};
                     }});

    // Regularizers. Per-sample losses come from cross-entropy of x so the chain is exercised;
    // instances too close to a kink or to the selection boundary are nudged by resampling.
    auto cs_case = [&](std::string name, bool batch_variant) {
        cases.push_back({name, [batch_variant](Rng& rng) {
                             const std::size_t n = 6;
                             auto labels = random_labels(rng, n, 3);
                             TensorD shift = random_tensor(rng, {n, 3});
                             for (int attempt = 0;; ++attempt) {
                                 TensorD x = random_tensor(rng, {n, 3});
                                 Tape<double> probe;
                                 auto ben = probe.value(ad::softmax_cross_entropy(probe.constant(x), labels));
                                 auto adv = probe.value(ad::softmax_cross_entropy(
                                     ad::add(probe.constant(x), probe.constant(shift)), labels));
                                 double ben_mean = 0.0, adv_mean = 0.0;
                                 for (std::size_t i = 0; i < n; ++i) ben_mean += ben.data[i] / n, adv_mean += adv.data[i] / n;
                                 EpochStats stats;
                                 stats.u_prev = ben_mean + rng.uniform(-0.3, 0.3);
                                 stats.u_adv_prev = adv_mean + rng.uniform(-0.3, 0.3);
                                 stats.gamma = batch_variant ? 0.01 : 0.1;
                                 bool smooth = true;
                                 auto away = [](double v) { return std::abs(v) > 1e-3; };
                                 if (batch_variant) {
                                     smooth = away(ben_mean - *stats.u_prev) && away(adv_mean - *stats.u_adv_prev) &&
                                              std::abs(ben_mean - *stats.u_prev) > stats.gamma + 1e-3;
                                 } else {
                                     for (std::size_t i = 0; i < n; ++i) {
                                         const double db = std::abs(ben.data[i] - *stats.u_prev);
                                         smooth = smooth && away(db) && away(adv.data[i] - *stats.u_adv_prev) &&
                                                  std::abs(db - stats.gamma) > 1e-3;
                                     }
                                 }
                                 if (!smooth && attempt < 100) continue;
                                 Builder f = [=](Tape<double>& t, VarD v) {
                                     VarD b = ad::softmax_cross_entropy(v, labels);
                                     VarD a = ad::softmax_cross_entropy(ad::add(v, t.constant(shift)), labels);
                                     auto term = batch_variant ? loss_cs_batch(a, b, stats, 0.5, 1.0)
                                                               : loss_cs_example(a, b, stats, 0.5, 1.0);
                                     return term.loss;
                                 };
                                 return std::pair{x, f};
                             }
                         }});
    };
    cs_case("loss_cs_example", false);
    cs_case("loss_cs_batch", true);
    cases.push_back({"weight_centralization", [](Rng& rng) {
                         WeightCenter center;
                         const std::size_t k = 1 + rng.below(3);
                         for (std::size_t i = 0; i < k; ++i) {
                             std::vector<float> flat(8);
                             for (float& v : flat) v = static_cast<float>(rng.normal());
                             center.add(flat);
                         }
                         Builder f = [center](Tape<double>&, VarD x) { return weight_centralization(x, center, 0.1); };
                         return std::pair{random_tensor(rng, {8}), f};
                     }});
    for (int side = 0; side < 2; ++side) {
        cases.push_back({side == 0 ? "mep_logit_reg.adv" : "mep_logit_reg.init", [side](Rng& rng) {
                             TensorD other = random_tensor(rng, {4, 3});
                             Builder f = [other, side](Tape<double>& t, VarD x) {
                                 VarD o = t.constant(other);
                                 return side == 0 ? mep_logit_reg(x, o, 0.7) : mep_logit_reg(o, x, 0.7);
                             };
                             return std::pair{random_tensor(rng, {4, 3}), f};
                         }});
    }
    // Whole models, differentiated w.r.t. their input.
    for (int kind = 0; kind < 2; ++kind) {
        cases.push_back({kind == 0 ? "model.mlp" : "model.cnn", [kind](Rng& rng) {
                             const ModelSpec spec = kind == 0 ? ModelSpec::mlp(6, {5}, 3)
                                                              : ModelSpec::cnn({4, 4, 1}, {2, 3}, 2);
                             const auto params = build_model(spec, rng.below(1u << 30)).cast<double>();
                             const std::size_t n = 2;
                             auto labels = random_labels(rng, n, spec.classes);
                             auto w = random_coefficients(rng, n);
                             Shape shape{n};
                             for (std::size_t d : spec.input_shape) shape.push_back(d);
                             TensorD x(shape);
                             for (double& v : x.data) v = rng.uniform(0.05, 0.95);
                             Builder f = [spec, params, labels, w](Tape<double>& t, VarD v) {
                                 auto vars = bind_params(t, params, false);
                                 return ad::weighted_sum<double>(
                                     ad::softmax_cross_entropy(forward<double>(spec, vars, v), labels), w);
                             };
                             return std::pair{x, f};
                         }});
    }
    return cases;
}

double ce_double(std::span<const double> logits, int label) {
    double m = *std::max_element(logits.begin(), logits.end()), s = 0.0;
    for (double z : logits) s += std::exp(z - m);
    return m + std::log(s) - logits[static_cast<std::size_t>(label)];
}

// Double-precision cross-entropy of a float model at one input.
double model_loss(const ModelSpec& spec, const ModelParams<double>& params, std::span<const double> x, int label) {
    Tape<double> t;
    auto vars = bind_params(t, params, false);
    Shape shape{1};
    for (std::size_t d : spec.input_shape) shape.push_back(d);
    auto logits = t.value(forward<double>(spec, vars, t.constant(TensorD(shape, std::vector<double>(x.begin(), x.end())))));
    return ce_double(logits.data, label);
}

Tensor random_images(Rng& rng, Shape shape) {
    Tensor t(std::move(shape));
    for (float& v : t.data) {
        const double u = rng.uniform();
        v = u < 0.1 ? 0.0f : u < 0.2 ? 1.0f : static_cast<float>(rng.uniform());
    }
    return t;
}

}  // namespace

std::vector<PropertyResult> verify_gradients(const VerifyOptions& options) {
    std::vector<PropertyResult> out;
    for (const auto& gc : gradient_cases()) {
        Timer timer;
        Rng rng({options.seed, std::hash<std::string>{}(gc.name)});
        double worst = 0.0;
        for (std::size_t i = 0; i < options.gradient_instances; ++i) {
            auto [point, f] = gc.make(rng);
            double err;
            try {
                err = ad::finite_difference_check<double>(f, point, kFdStep);
            } catch (const std::exception&) {
                err = std::numeric_limits<double>::infinity();
            }
            worst = std::max(worst, std::isnan(err) ? std::numeric_limits<double>::infinity() : err);
        }
        out.push_back(finish("gradient." + gc.name, worst, kFdTolerance, timer,
                             fmt::format("{} instances, central differences h={:g}", options.gradient_instances,
                                         kFdStep)));
    }
    return out;
}

std::vector<PropertyResult> verify_budget_box(const VerifyOptions& options) {
    Timer timer;
    Rng rng({options.seed, 0xb0c5ull});
    const ModelSpec mlp = ModelSpec::mlp(64, {16}, 3);
    const ModelSpec cnn = ModelSpec::cnn({8, 8, 1}, {4, 4}, 3);
    const double budgets[] = {8.0 / 255.0, 16.0 / 255.0, 64.0 / 255.0};
    const std::size_t n_data = 200, batch = 50;

    std::size_t examples = 0, violations = 0;
    double worst_excess = -1.0;
    int round = 0;
    while (examples < options.box_examples) {
        const bool use_cnn = round % 2 == 1;
        const ModelSpec& spec = use_cnn ? cnn : mlp;
        const double xi = budgets[round % 3];
        const auto params = build_model(spec, options.seed + static_cast<std::uint64_t>(round));
        Dataset data;
        data.classes = 3;
        data.images = random_images(rng, {n_data, 8, 8, 1});
        data.labels = random_labels(rng, n_data, 3);
        for (InitStrategy init : {InitStrategy::zero, InitStrategy::rs, InitStrategy::bp, InitStrategy::mep}) {
            PerturbationStore store;
            for (int epoch = 1; epoch <= 2; ++epoch) {
                const auto plan = batch_indices(n_data, BatchPlan{options.seed, batch}, epoch);
                for (std::size_t b = 0; b < plan.size(); ++b) {
                    const Batch bt = gather(data, plan[b]);
                    Rng drng({options.seed, static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(epoch), b});
                    const auto delta0 = init_perturbation(init, bt, store, xi, drng);
                    std::vector<AttackResult> results;
                    results.push_back(fgsm(spec, params, bt.images, bt.labels, delta0, xi));
                    results.push_back(pgd(spec, params, bt.images, bt.labels, delta0, xi, xi / 4.0, 10));
                    results.push_back(pgd(spec, params, bt.images, bt.labels, delta0, xi, xi / 4.0, 50));
                    // the starting point itself is emitted by PGD-0
                    results.push_back(pgd(spec, params, bt.images, bt.labels, delta0, xi, xi / 4.0, 0));
                    const std::size_t d = spec.input_size();
                    for (const auto& r : results) {
                        for (std::size_t i = 0; i < bt.size(); ++i) {
                            bool ok = true;
                            for (std::size_t k = 0; k < d; ++k) {
                                const double x = bt.images.data[i * d + k];
                                const double xa = r.adversarial.data[i * d + k];
                                const double excess = std::abs(xa - x) - xi;
                                worst_excess = std::max(worst_excess, excess);
                                if (excess > 1e-6 || !(xa >= 0.0 && xa <= 1.0)) ok = false;
                            }
                            violations += !ok;
                            ++examples;
                        }
                    }
                    update_store(store, bt, b, results[0].delta, 0.3, xi, n_data);
                }
            }
        }
        ++round;
    }
    return {finish("attack.budget_and_box", static_cast<double>(violations), 0.0, timer,
                   fmt::format("{} examples, {} violations, max(|x'-x|-xi)={:.3g}", examples, violations,
                               worst_excess))};
}

std::vector<PropertyResult> verify_attack_oracles(const VerifyOptions& options) {
    std::vector<PropertyResult> out;
    {
        Timer timer;
        Rng rng({options.seed, 0xf65ull});
        std::size_t mismatches = 0, total = 0;
        for (int trial = 0; trial < 8; ++trial) {
            const ModelSpec spec = trial % 2 ? ModelSpec::cnn({8, 8, 1}, {4, 4}, 3) : ModelSpec::mlp(64, {16}, 3);
            const auto params = build_model(spec, options.seed + static_cast<std::uint64_t>(trial));
            const Tensor x = random_images(rng, {20, 8, 8, 1});
            const auto y = random_labels(rng, 20, 3);
            const double xi = 16.0 / 255.0;
            std::vector<float> delta0(x.size(), 0.0f);
            if (trial >= 4)  // same nonzero start for both
                for (std::size_t i = 0; i < delta0.size(); ++i) delta0[i] = static_cast<float>(rng.uniform(-xi, xi));
            delta0 = project(x.data, delta0, xi);
            const auto a = fgsm(spec, params, x, y, delta0, xi);
            const auto b = pgd(spec, params, x, y, delta0, xi, xi, 1);
            mismatches += !(a.adversarial == b.adversarial) || a.delta != b.delta;
            ++total;
        }
        out.push_back(finish("attack.pgd1_equals_fgsm", static_cast<double>(mismatches), 0.0, timer,
                             fmt::format("{} bitwise comparisons", total)));
    }
    {
        // Two-class linear model: the loss depends on x only through (w_other - w_label) . x,
        // so the worst case in the box-clipped ball moves every coordinate by xi toward that sign.
        Timer timer;
        Rng rng({options.seed, 0x11eaull});
        double worst = 0.0;
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t dim = 20;
            const ModelSpec spec = ModelSpec::mlp(dim, {}, 2);
            const auto params = build_model(spec, options.seed * 31 + static_cast<std::uint64_t>(trial));
            const auto pd = params.cast<double>();
            const Tensor x = random_images(rng, {4, 1, 1, dim});
            const auto y = random_labels(rng, 4, 2);
            const double xi = (4.0 + 12.0 * rng.uniform()) / 255.0;
            const auto r = pgd(spec, params, x, y, std::vector<float>(x.size(), 0.0f), xi, xi / 4.0, 10);
            const auto& w = params.tensors[0].value.data;  // [dim, 2]
            for (std::size_t i = 0; i < 4; ++i) {
                const int lab = y[i], other = 1 - y[i];
                std::vector<double> worst_x(dim), pgd_x(dim);
                for (std::size_t k = 0; k < dim; ++k) {
                    const double dir = static_cast<double>(w[k * 2 + static_cast<std::size_t>(other)]) -
                                       static_cast<double>(w[k * 2 + static_cast<std::size_t>(lab)]);
                    const double xk = x.data[i * dim + k];
                    const double s = dir > 0 ? 1.0 : dir < 0 ? -1.0 : 0.0;
                    worst_x[k] = std::clamp(xk + s * static_cast<double>(static_cast<float>(xi)), 0.0, 1.0);
                    pgd_x[k] = r.adversarial.data[i * dim + k];
                }
                worst = std::max(worst, std::abs(model_loss(spec, pd, worst_x, lab) - model_loss(spec, pd, pgd_x, lab)));
            }
        }
        out.push_back(finish("attack.linear_worst_case", worst, 1e-6, timer,
                             "PGD-10 (step xi/4) vs closed-form corner, 20 models x 4 samples"));
    }
    {
        Timer timer;
        Rng rng({options.seed, 0x2b1ull});
        double worst = -std::numeric_limits<double>::infinity();
        const int grid = 41;
        for (int trial = 0; trial < 10; ++trial) {
            const ModelSpec spec = ModelSpec::mlp(2, {8}, 2);
            const auto params = build_model(spec, options.seed * 17 + static_cast<std::uint64_t>(trial));
            const auto pd = params.cast<double>();
            const double xi = 16.0 / 255.0;
            Tensor x({1, 1, 1, 2}, {static_cast<float>(rng.uniform(0.2, 0.8)), static_cast<float>(rng.uniform(0.2, 0.8))});
            const std::vector<int> y{static_cast<int>(rng.below(2))};
            const auto r = pgd(spec, params, x, y, std::vector<float>(2, 0.0f), xi, xi / 4.0, 10);
            const std::vector<double> px{r.adversarial.data[0], r.adversarial.data[1]};
            const double pgd_loss = model_loss(spec, pd, px, y[0]);
            double best = -std::numeric_limits<double>::infinity();
            for (int a = 0; a < grid; ++a)
                for (int b = 0; b < grid; ++b) {
                    const double da = -xi + 2.0 * xi * a / (grid - 1), db = -xi + 2.0 * xi * b / (grid - 1);
                    const std::vector<double> g{std::clamp(x.data[0] + da, 0.0, 1.0), std::clamp(x.data[1] + db, 0.0, 1.0)};
                    best = std::max(best, model_loss(spec, pd, g, y[0]));
                }
            worst = std::max(worst, best - pgd_loss);
        }
        out.push_back(finish("attack.grid_2pixel", worst, 1e-3, timer,
                             "grid best minus PGD-10 loss over a 41x41 grid, 10 models"));
    }
    return out;
}

std::vector<PropertyResult> verify_stride_condition(const VerifyOptions& options) {
    std::vector<PropertyResult> out;
    Rng rng({options.seed, 0x57dull});
    {
        Timer timer;
        std::size_t failures = 0;
        for (int trial = 0; trial < 1000; ++trial) {
            double lo = rng.uniform(0.0, 0.1), hi = lo + rng.uniform(0.0, 0.1);
            std::vector<double> d(20);
            for (double& v : d) v = rng.uniform(0.0, 0.3);
            std::sort(d.begin(), d.end());
            double prev = -1.0;
            for (double v : d) {
                const double g = convergence_stride(v, lo, hi);
                failures += g < lo || g > hi || g < prev;
                prev = g;
            }
        }
        out.push_back(finish("smoothing.stride_range_monotone", static_cast<double>(failures), 0.0, timer,
                             "1000 random bound pairs x 20 sorted d values"));
    }
    {
        Timer timer;
        std::size_t failures = 0;
        double worst = 0.0;
        for (int trial = 0; trial < 500; ++trial) {
            const std::size_t n = 1 + rng.below(32);
            EpochStats stats;
            stats.u_prev = rng.uniform(0.2, 2.0);
            stats.u_adv_prev = rng.uniform(0.2, 2.0);
            stats.gamma = rng.uniform(0.0, 0.5);
            std::vector<double> ben(n), adv(n);
            for (std::size_t i = 0; i < n; ++i) {
                ben[i] = rng.uniform(0.0, 3.0);
                adv[i] = rng.uniform(0.0, 3.0);
            }
            if (trial % 10 == 0) ben[0] = *stats.u_prev + stats.gamma;  // boundary: not selected
            Tape<double> t;
            auto term = loss_cs_example(t.constant(TensorD({n}, adv)), t.constant(TensorD({n}, ben)), stats, 0.5, 1.0);
            std::size_t expect = 0;
            double expect_loss = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (std::abs(ben[i] - *stats.u_prev) > stats.gamma) {
                    ++expect;
                    expect_loss += 0.5 * std::abs(adv[i] - *stats.u_adv_prev) + std::abs(ben[i] - *stats.u_prev);
                }
            expect_loss /= static_cast<double>(n);
            failures += term.selected != expect;
            worst = std::max(worst, std::abs(term.loss.item() - expect_loss));
        }
        out.push_back(finish("smoothing.condition_selects_exactly", static_cast<double>(failures), 0.0, timer,
                             fmt::format("500 fixtures, max loss deviation {:.3g}", worst)));
    }
    {
        Timer timer;
        double worst = 0.0;
        std::size_t fired = 0;
        for (int trial = 0; trial < 500; ++trial) {
            EpochStats stats;
            stats.u_prev = rng.uniform(0.2, 2.0);
            stats.u_adv_prev = rng.uniform(0.2, 2.0);
            stats.gamma = rng.uniform(0.0, 0.3);
            double ben = *stats.u_prev + (rng.uniform() < 0.5 ? -1 : 1) * (stats.gamma + rng.uniform(0.01, 1.0));
            ben = std::max(ben, 0.0);
            const double adv = rng.uniform(0.0, 3.0);
            if (!condition(ben, *stats.u_prev, stats.gamma)) continue;
            const double w1 = rng.uniform(0.0, 1.5), w2 = rng.uniform(0.0, 1.5);
            Tape<double> t;
            auto a = t.constant(TensorD({1}, {adv}));
            auto b = t.constant(TensorD({1}, {ben}));
            const auto ex = loss_cs_example(a, b, stats, w1, w2);
            const auto bt = loss_cs_batch(a, b, stats, w1, w2);
            worst = std::max(worst, std::abs(ex.loss.item() - bt.loss.item()));
            ++fired;
        }
        out.push_back(finish("smoothing.batch_equals_example_singleton", worst, 1e-12, timer,
                             fmt::format("{} singleton batches with the condition firing", fired)));
    }
    return out;
}

std::vector<PropertyResult> verify_bookkeeping(const VerifyOptions& options) {
    Timer timer;
    TrainConfig cfg;
    cfg.model = ModelSpec::mlp(16, {12}, 3);
    cfg.attack.xi = 32.0 / 255.0;
    cfg.attack.step = cfg.attack.xi;
    cfg.smooth.variant = SmoothVariant::batch;
    cfg.smooth.centralization = true;
    cfg.epochs = static_cast<int>(options.bookkeeping_epochs);
    cfg.batch_size = 48;  // 300 samples: a partial final batch every epoch
    cfg.lr = 0.05;
    cfg.lr_decay_epochs = {};
    cfg.eval_samples = 60;
    cfg.eval_steps = 2;
    cfg.seed = options.seed;
    DataConfig data;
    data.kind = DataKind::blobs;
    data.classes = 3;
    data.per_class = 100;
    data.test_per_class = 20;
    data.dimension = 16;
    data.separation = 0.4;
    data.noise = 0.2;
    data.seed = options.seed;
    const Dataset train = load_train_data(data), test = load_test_data(data);

    std::vector<std::vector<BatchTelemetry>> batches(1);
    std::vector<std::vector<float>> flats;
    double err_u = 0.0, err_d = 0.0, err_gamma = 0.0, err_center = 0.0;
    std::optional<double> prev_u;
    TrainHooks hooks;
    hooks.on_batch = [&](const BatchTelemetry& t) { batches.back().push_back(t); };
    hooks.on_epoch = [&](int, std::span<const BatchRecord>, const EpochStats& stats, const ModelParams<float>& params,
                         const WeightCenter& center) {
        double n = 0.0, sb = 0.0, sa = 0.0;
        for (const auto& t : batches.back()) {
            n += static_cast<double>(t.size);
            sb += static_cast<double>(t.size) * t.ben_mean;
            sa += static_cast<double>(t.size) * t.adv_mean;
        }
        const double u = sb / n, ua = sa / n;
        err_u = std::max({err_u, std::abs(*stats.u_prev - u), std::abs(*stats.u_adv_prev - ua)});
        if (prev_u) {
            const double d = std::abs(u - *prev_u);
            err_d = std::max(err_d, std::abs(*stats.d_prev - d));
            err_gamma = std::max(err_gamma, std::abs(stats.gamma - std::clamp(d, cfg.smooth.gamma_min, cfg.smooth.gamma_max)));
        } else {
            err_gamma = std::max(err_gamma, std::abs(stats.gamma - cfg.smooth.gamma_max));
        }
        prev_u = u;
        flats.push_back(params.flatten());
        for (std::size_t k = 0; k < flats.back().size(); ++k) {
            double m = 0.0;
            for (const auto& f : flats) m += f[k];
            m /= static_cast<double>(flats.size());
            err_center = std::max(err_center, std::abs(center.mean()[k] - m));
        }
        if (center.count() != flats.size()) err_center = std::numeric_limits<double>::infinity();
        batches.emplace_back();
    };
    run(cfg, train, test, hooks);
    const std::string detail = fmt::format("{} epochs", cfg.epochs);
    return {finish("bookkeeping.epoch_means", err_u, 1e-9, timer, detail),
            finish("bookkeeping.loss_drift", err_d, 1e-9, timer, detail),
            finish("bookkeeping.stride", err_gamma, 1e-9, timer, detail),
            finish("bookkeeping.weight_center", err_center, 1e-6, timer, detail)};
}

std::vector<PropertyResult> verify_config_determinism(const VerifyOptions& options) {
    std::vector<PropertyResult> out;
    {
        Timer timer;
        nlohmann::json doc = {{"data", {{"kind", "blobs"}, {"classes", 2}, {"dimension", 4}}},
                              {"model", {{"kind", "mlp"}, {"input_shape", {1, 1, 4}}, {"hidden", {4}}, {"classes", 2}}},
                              {"smooth", {{"centralization", true}, {"mep_logit_weight", 0.5}}}};
        int rejected = 0;
        try {
            parse_experiment(doc);
        } catch (const ConfigError&) {
            ++rejected;
        }
        SmoothConfig sc;
        sc.centralization = true;
        sc.mep_logit_weight = 0.5;
        try {
            sc.validate();
        } catch (const std::invalid_argument&) {
            ++rejected;
        }
        out.push_back(finish("config.mutual_exclusion", static_cast<double>(2 - rejected), 0.0, timer,
                             "centralization + MEP logit regularizer rejected by config and by SmoothConfig"));
    }
    {
        Timer timer;
        TrainConfig cfg;
        cfg.model = ModelSpec::mlp(16, {8}, 2);
        cfg.attack.xi = 32.0 / 255.0;
        cfg.attack.step = cfg.attack.xi;
        cfg.attack.init = InitStrategy::mep;
        cfg.smooth.variant = SmoothVariant::example;
        cfg.smooth.mep_logit_weight = 0.3;
        cfg.epochs = 4;
        cfg.batch_size = 32;
        cfg.eval_samples = 50;
        cfg.eval_steps = 3;
        cfg.seed = options.seed;
        const Dataset train = make_blobs(2, 60, 16, 0.5, options.seed), test = make_blobs(2, 25, 16, 0.5, options.seed);
        auto csv = [&] {
            std::string s = csv_log_header() + "\n";
            for (const auto& row : run(cfg, train, test).log) s += csv_log_line(row) + "\n";
            return s;
        };
        const std::string a = csv(), b = csv();
        out.push_back(finish("trainer.bit_identical_logs", a == b ? 0.0 : 1.0, 0.0, timer,
                             fmt::format("{} bytes compared", a.size())));
    }
    return out;
}

std::vector<PropertyResult> verify_schedule(const VerifyOptions&) {
    Timer timer;
    const std::vector<int> decay{100, 105};
    const std::pair<int, double> expect[] = {{1, 0.1}, {99, 0.1}, {100, 0.01}, {104, 0.01}, {105, 0.001}, {110, 0.001}};
    double worst = 0.0;
    for (auto [epoch, lr] : expect) worst = std::max(worst, std::abs(lr_at(epoch, 0.1, decay, 0.1) - lr) / lr);
    return {finish("trainer.lr_schedule", worst, 1e-12, timer, "base 0.1, decay x0.1 at epochs 100 and 105")};
}

std::vector<PropertyResult> run_verify_suite(const VerifyOptions& options) {
    std::vector<PropertyResult> all;
    for (auto* fn : {verify_gradients, verify_budget_box, verify_attack_oracles, verify_stride_condition,
                     verify_bookkeeping, verify_config_determinism, verify_schedule}) {
        auto part = fn(options);
        all.insert(all.end(), part.begin(), part.end());
    }
    return all;
}

std::string format_result(const PropertyResult& r) {
    return fmt::format("{} {:<42} measured={:<10.3g} tol={:<8.3g} {:.2f}s  {}", r.passed ? "PASS" : "FAIL", r.name,
                       r.measured, r.tolerance, r.seconds, r.detail);
}

}  // namespace smoothfat
