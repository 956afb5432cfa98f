// SPDX-License-Identifier: Apache-2.0
#include "smoothfat/attacks.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace smoothfat {

namespace {

float sgn(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

void check_inputs(const Tensor& x, std::span<const int> y, std::span<const float> delta0, double xi) {
    if (x.rank() < 2 || x.shape[0] != y.size())
        throw ShapeError("attack: images " + to_string(x.shape) + " do not match " + std::to_string(y.size()) +
                         " labels");
    if (delta0.size() != x.size())
        throw ShapeError("attack: delta0 has " + std::to_string(delta0.size()) + " values for images " +
                         to_string(x.shape));
    if (!(xi > 0.0 && xi <= 1.0)) throw std::invalid_argument("attack: xi must lie in (0, 1]");
}

/// delta <- project(delta + stride * sgn(grad L at x + delta)).
void signed_step(const ModelSpec& spec, const ModelParams<float>& params, const Tensor& x, std::span<const int> y,
                 std::vector<float>& delta, double xi, double stride) {
    const InputGradient g = input_gradient(spec, params, apply_perturbation(x, delta), y);
    if (!all_finite<float>(g.grad)) throw NonFiniteError("attack: non-finite input gradient");
    const float s = static_cast<float>(stride);
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += s * sgn(g.grad[i]);
    delta = project(x.data, delta, xi);
}

}  // namespace

std::string to_string(InitStrategy s) {
    switch (s) {
        case InitStrategy::zero: return "zero";
        case InitStrategy::rs: return "rs";
        case InitStrategy::bp: return "bp";
        case InitStrategy::mep: return "mep";
    }
    return "?";
}

InitStrategy parse_init_strategy(const std::string& name) {
    if (name == "zero") return InitStrategy::zero;
    if (name == "rs") return InitStrategy::rs;
    if (name == "bp") return InitStrategy::bp;
    if (name == "mep") return InitStrategy::mep;
    throw std::invalid_argument("unknown init strategy '" + name + "'");
}

void AttackConfig::validate() const {
    if (!(xi > 0.0 && xi <= 1.0)) throw std::invalid_argument("attack: xi must lie in (0, 1]");
    if (!(step > 0.0 && step <= xi)) throw std::invalid_argument("attack: step must lie in (0, xi]");
    if (steps < 1) throw std::invalid_argument("attack: steps must be >= 1");
    if (!(mep_momentum >= 0.0 && mep_momentum < 1.0)) throw std::invalid_argument("attack: mep momentum must lie in [0, 1)");
}

std::vector<float> project(std::span<const float> x, std::span<const float> delta, double xi) {
    if (x.size() != delta.size()) throw ShapeError("project: x and delta differ in size");
    const float r = static_cast<float>(xi);
    std::vector<float> out(delta.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float d = std::clamp(delta[i], -r, r);
        out[i] = std::clamp(d, -x[i], 1.0f - x[i]);
    }
    return out;
}

Tensor apply_perturbation(const Tensor& x, std::span<const float> delta) {
    if (delta.size() != x.size()) throw ShapeError("apply_perturbation: size mismatch");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = std::clamp(x.data[i] + delta[i], 0.0f, 1.0f);
    return out;
}

std::vector<float> init_perturbation(InitStrategy strategy, const Batch& batch, PerturbationStore& store,
                                     double xi, Rng& rng) {
    const std::size_t n = batch.images.size();
    std::vector<float> delta(n, 0.0f);
    switch (strategy) {
        case InitStrategy::zero:
            return delta;
        case InitStrategy::rs:
            for (float& d : delta) d = static_cast<float>(rng.uniform(-xi, xi));
            break;
        case InitStrategy::bp:
            if (store.bp_batch && store.bp_delta.size() == n) {
                delta = store.bp_delta;
            } else if (store.bp_batch) {
                ++store.bp_fallbacks;
                spdlog::debug("bp init: stored perturbation has {} values, batch needs {}; using zero",
                              store.bp_delta.size(), n);
            }
            break;
        case InitStrategy::mep: {
            const std::size_t stride = n / batch.size();
            if (store.mep_state.empty()) break;
            if (store.sample_size != stride) throw ShapeError("mep init: sample size changed");
            for (std::size_t i = 0; i < batch.size(); ++i)
                std::copy_n(store.mep_state.begin() + static_cast<std::ptrdiff_t>(batch.indices[i] * stride), stride,
                            delta.begin() + static_cast<std::ptrdiff_t>(i * stride));
            break;
        }
    }
    return project(batch.images.data, delta, xi);
}

void update_store(PerturbationStore& store, const Batch& batch, std::size_t batch_ordinal,
                  std::span<const float> delta_final, double mu, double xi, std::size_t dataset_size) {
    if (delta_final.size() != batch.images.size()) throw ShapeError("update_store: delta does not match batch");
    store.bp_batch = batch_ordinal;
    store.bp_delta.assign(delta_final.begin(), delta_final.end());

    const std::size_t stride = delta_final.size() / batch.size();
    if (store.mep_state.empty()) {
        store.sample_size = stride;
        store.mep_state.assign(dataset_size * stride, 0.0f);
    }
    if (store.sample_size != stride) throw ShapeError("update_store: sample size changed");
    const float m = static_cast<float>(mu);
    const float r = static_cast<float>(xi);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        float* state = store.mep_state.data() + batch.indices[i] * stride;
        const float* d = delta_final.data() + i * stride;
        for (std::size_t j = 0; j < stride; ++j) state[j] = std::clamp(m * state[j] + d[j], -r, r);
    }
}

InputGradient input_gradient(const ModelSpec& spec, const ModelParams<float>& params, const Tensor& images,
                             std::span<const int> labels) {
    ad::Tape<float> tape;
    auto vars = bind_params(tape, params, false);
    auto x = tape.leaf(images, true);
    auto losses = ad::softmax_cross_entropy(forward<float>(spec, vars, x), labels);
    tape.backward(ad::sum(losses));
    auto lv = losses.value();
    return {tape.grad(x).data, std::vector<float>(lv.begin(), lv.end())};
}

AttackResult fgsm(const ModelSpec& spec, const ModelParams<float>& params, const Tensor& x,
                  std::span<const int> y, std::span<const float> delta0, double xi) {
    check_inputs(x, y, delta0, xi);
    std::vector<float> delta(delta0.begin(), delta0.end());
    signed_step(spec, params, x, y, delta, xi, xi);
    Tensor adv = apply_perturbation(x, delta);
    return {std::move(adv), std::move(delta)};
}

AttackResult pgd(const ModelSpec& spec, const ModelParams<float>& params, const Tensor& x, std::span<const int> y,
                 std::span<const float> delta0, double xi, double step, int steps) {
    check_inputs(x, y, delta0, xi);
    if (!(step > 0.0)) throw std::invalid_argument("pgd: step must be positive");
    if (steps < 0) throw std::invalid_argument("pgd: steps must be >= 0");
    std::vector<float> delta(delta0.begin(), delta0.end());
    for (int s = 0; s < steps; ++s) signed_step(spec, params, x, y, delta, xi, step);
    Tensor adv = apply_perturbation(x, delta);
    return {std::move(adv), std::move(delta)};
}

}  // namespace smoothfat
