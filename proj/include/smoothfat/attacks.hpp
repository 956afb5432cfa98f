// SPDX-License-Identifier: Apache-2.0
//
// l-infinity adversarial examples: FGSM and PGD with pluggable starting
// perturbations. Perturbations are kept inside the xi-ball and the image box
// [0, 1]; emitted images are clamped to [0, 1] exactly.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smoothfat/data.hpp"
#include "smoothfat/models.hpp"
#include "smoothfat/rng.hpp"

namespace smoothfat {

enum class InitStrategy { zero, rs, bp, mep };

std::string to_string(InitStrategy s);
InitStrategy parse_init_strategy(const std::string& name);

struct AttackConfig {
    double xi = 16.0 / 255.0;  ///< l-inf budget in pixel units
    double step = 16.0 / 255.0;
    int steps = 1;
    InitStrategy init = InitStrategy::rs;
    double mep_momentum = 0.3;

    void validate() const;
};

/// clamp(delta, -xi, xi), then clamp so that x + delta lies in [0, 1]. Idempotent.
std::vector<float> project(std::span<const float> x, std::span<const float> delta, double xi);

/// x + delta clamped to [0, 1].
Tensor apply_perturbation(const Tensor& x, std::span<const float> delta);

/// Starting perturbations carried across batches and epochs.
struct PerturbationStore {
    // Previous batch's final perturbation (BP).
    std::optional<std::size_t> bp_batch;
    std::vector<float> bp_delta;
    // Per-sample momentum of final perturbations (MEP), allocated on first use.
    std::vector<float> mep_state;
    std::size_t sample_size = 0;
    std::size_t bp_fallbacks = 0;

    void reset() { *this = PerturbationStore{}; }
};

/// delta_0 for a batch. zero -> 0; rs -> U(-xi, xi) i.i.d.; bp -> stored previous-batch
/// perturbation (zero on first use or shape mismatch); mep -> momentum of the batch's samples.
/// Always projected into the ball and the box around the batch images.
std::vector<float> init_perturbation(InitStrategy strategy, const Batch& batch, PerturbationStore& store,
                                     double xi, Rng& rng);

/// bp slot <- delta_final; m_i <- clamp(mu * m_i + delta_final_i, -xi, xi).
void update_store(PerturbationStore& store, const Batch& batch, std::size_t batch_ordinal,
                  std::span<const float> delta_final, double mu, double xi, std::size_t dataset_size);

/// Gradient of the summed cross-entropy w.r.t. the input images. Parameters are constants.
struct InputGradient {
    std::vector<float> grad;
    std::vector<float> losses;
};
InputGradient input_gradient(const ModelSpec& spec, const ModelParams<float>& params, const Tensor& images,
                             std::span<const int> labels);

struct AttackResult {
    Tensor adversarial;
    std::vector<float> delta;
};

/// x' = x + project(delta0 + xi * sgn(grad L at x + delta0)).
AttackResult fgsm(const ModelSpec& spec, const ModelParams<float>& params, const Tensor& x,
                  std::span<const int> y, std::span<const float> delta0, double xi);

/// `steps` iterations of delta <- project(delta + step * sgn(grad L at x + delta)).
AttackResult pgd(const ModelSpec& spec, const ModelParams<float>& params, const Tensor& x, std::span<const int> y,
                 std::span<const float> delta0, double xi, double step, int steps);

}  // namespace smoothfat
