// SPDX-License-Identifier: Apache-2.0
//
// Fast adversarial training loop with loss-convergence smoothing.
//
// Per batch: starting perturbation from the init strategy, FGSM against the
// current (frozen) weights, forward on benign and adversarial inputs, composite
// objective = mean adversarial cross-entropy + smoothing constraint + optional
// weight centralization or MEP logit regularizer, then one SGD step.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "smoothfat/attacks.hpp"
#include "smoothfat/data.hpp"
#include "smoothfat/models.hpp"
#include "smoothfat/smoothing.hpp"

namespace smoothfat {

class TrainingAbort : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct OverfitDetector {
    int window = 3;
    double threshold = 0.2;
    double ben_fraction = 0.8;
};

struct TrainConfig {
    ModelSpec model;
    AttackConfig attack;
    SmoothConfig smooth;
    OverfitDetector detector;
    int epochs = 30;
    std::size_t batch_size = 128;
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::vector<int> lr_decay_epochs{24, 27};
    double lr_decay_factor = 0.1;
    std::uint64_t seed = 0;
    std::size_t eval_samples = 1000;  ///< held-out subset evaluated every epoch
    int eval_steps = 10;
    double eval_step = 0.0;  ///< PGD stride for per-epoch evaluation; 0 means xi / 4
    bool log_wall_time = false;
    std::size_t threads = 1;

    void validate() const;
};

struct RunLogRow {
    int epoch = 0;
    double ben_loss = 0.0;  ///< u_t
    double adv_loss = 0.0;  ///< u'_t
    std::optional<double> gamma;
    double selected_frac = 0.0;
    double train_ben_acc = 0.0;
    double eval_ben_acc = 0.0;
    double eval_adv_acc = 0.0;
    std::optional<double> grad_align;
    double lr = 0.0;
    double seconds = 0.0;
};

struct BatchTelemetry {
    int epoch = 0;
    std::size_t batch = 0;
    std::size_t size = 0;
    double ben_mean = 0.0;
    double adv_mean = 0.0;   ///< mean adversarial cross-entropy, the base objective
    double constraint = 0.0;
    double centralization = 0.0;
    double mep_reg = 0.0;
    double total = 0.0;
    std::size_t selected = 0;
    bool params_frozen = true;  ///< flat parameters unchanged by attack generation
};

/// Observers for tests and instrumentation.
struct TrainHooks {
    std::function<void(const BatchTelemetry&)> on_batch;
    std::function<void(int epoch, std::span<const BatchRecord>, const EpochStats&, const ModelParams<float>&,
                       const WeightCenter&)>
        on_epoch;
};

struct TrainState {
    ModelParams<float> params;
    std::vector<std::vector<float>> velocity;
    EpochStats stats;
    PerturbationStore store;
    WeightCenter center;
};

/// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
void sgd_step(std::span<float> params, std::span<const float> grads, std::span<float> velocity, double lr,
              double momentum, double weight_decay);

/// Base rate multiplied by `factor` once for every decay epoch <= epoch (1-based).
double lr_at(int epoch, double base_lr, std::span<const int> decay_epochs, double factor);
double lr_at(int epoch, const TrainConfig& config);

TrainState init_state(const TrainConfig& config);

RunLogRow train_epoch(TrainState& state, const Dataset& train, const Dataset& eval_subset, const TrainConfig& config,
                      int epoch, const TrainHooks& hooks = {});

struct DetectorVerdict {
    bool collapsed = false;
    int epoch = 0;  ///< first epoch of the collapsed window
};

/// Collapse: eval adv-acc below threshold * max(earlier adv-acc) for `window` consecutive
/// epochs while eval ben-acc stays >= ben_fraction * its running max.
DetectorVerdict detect_overfit(std::span<const RunLogRow> history, const OverfitDetector& detector);

struct RunResult {
    ModelParams<float> final_params;
    ModelParams<float> best_params;
    int best_epoch = 0;
    std::vector<RunLogRow> log;
    DetectorVerdict verdict;
};

/// Fixed held-out subset: the first `count` samples of a seed-independent permutation.
Dataset eval_subset(const Dataset& test, std::size_t count);

RunResult run(const TrainConfig& config, const Dataset& train, const Dataset& test, const TrainHooks& hooks = {});

std::string csv_log_header();
std::string csv_log_line(const RunLogRow& row);
void write_csv_log(const std::filesystem::path& path, std::span<const RunLogRow> rows);

}  // namespace smoothfat
