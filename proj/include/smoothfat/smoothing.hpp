// SPDX-License-Identifier: Apache-2.0
//
// Loss-convergence smoothing for fast adversarial training.
//
// Between adjacent epochs the benign and adversarial classification losses are
// tied to the previous epoch's dataset means u_{t-1} and u'_{t-1}. A sample (or
// batch) is constrained only when its benign loss drifts from u_{t-1} by more
// than the convergence stride gamma_t = clamp(d_{t-1}, gamma_min, gamma_max),
// where d_{t-1} = |u_{t-1} - u_{t-2}|.
#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smoothfat/autodiff.hpp"
#include "smoothfat/models.hpp"

namespace smoothfat {

enum class SmoothVariant { none, example, batch };

std::string to_string(SmoothVariant v);
SmoothVariant parse_smooth_variant(const std::string& name);

struct SmoothConfig {
    SmoothVariant variant = SmoothVariant::batch;
    double w1 = 0.0;  ///< weight on adversarial-loss drift
    double w2 = 1.0;  ///< weight on benign-loss drift
    double w3 = 0.1;  ///< weight-centralization coefficient
    double gamma_min = 0.02;
    double gamma_max = 0.03;
    bool centralization = false;
    double mep_logit_weight = 0.0;

    /// Rejects out-of-range weights, inverted stride bounds, and centralization
    /// combined with the MEP logit regularizer.
    void validate() const;
};

/// Per-batch bookkeeping used to form epoch means.
struct BatchRecord {
    std::size_t size = 0;
    double ben_mean = 0.0;
    double adv_mean = 0.0;
};

/// Statistics carried from the completed epochs into the next one.
struct EpochStats {
    int completed = 0;                 ///< number of finished epochs
    std::optional<double> u_prev;      ///< mean benign loss of the last epoch
    std::optional<double> u_adv_prev;  ///< mean adversarial loss of the last epoch
    std::optional<double> d_prev;      ///< |u_{t-1} - u_{t-2}|
    double gamma = 0.0;                ///< stride for the next epoch, valid when u_prev is set

    bool constraint_ready() const { return u_prev.has_value(); }
};

/// gamma = min(max(d, gamma_min), gamma_max).
double convergence_stride(double d_prev, double gamma_min, double gamma_max);

/// |loss - u_prev| > gamma (strict).
inline bool condition(double loss, double u_prev, double gamma) { return std::abs(loss - u_prev) > gamma; }

/// Size-weighted epoch means; the stride for the next epoch is gamma_max while d is undefined.
EpochStats update_epoch_stats(const EpochStats& stats, std::span<const BatchRecord> records,
                              const SmoothConfig& config);

/// Running mean of flat parameter vectors of completed epochs.
class WeightCenter {
public:
    void add(std::span<const float> flat);
    std::size_t count() const { return count_; }
    const std::vector<double>& mean() const { return mean_; }

private:
    std::vector<double> mean_;
    std::size_t count_ = 0;
};

template <class T>
struct ConstraintTerm {
    ad::Var<T> loss;            ///< scalar on the tape (constant 0 when nothing is selected)
    std::size_t selected = 0;   ///< samples that received the constraint
};

/// Example-based constraint: (1/n) * sum over selected i of
/// w1 |adv_i - u'_{t-1}| + w2 |ben_i - u_{t-1}|, selecting |ben_i - u_{t-1}| > gamma.
template <class T>
ConstraintTerm<T> loss_cs_example(ad::Var<T> adv_losses, ad::Var<T> ben_losses, const EpochStats& stats,
                                  double w1, double w2);

/// Batch-based constraint on the batch means u'_B, u_B; fires when |u_B - u_{t-1}| > gamma.
template <class T>
ConstraintTerm<T> loss_cs_batch(ad::Var<T> adv_losses, ad::Var<T> ben_losses, const EpochStats& stats,
                                double w1, double w2);

/// Plain-value forms of the constraints.
double loss_cs_example_value(std::span<const double> adv_losses, std::span<const double> ben_losses,
                             const EpochStats& stats, double w1, double w2);
double loss_cs_batch_value(double adv_mean, double ben_mean, const EpochStats& stats, double w1, double w2);

/// w3 * ||theta - mean(phi)||_2; a constant 0 when the center is empty.
template <class T>
ad::Var<T> weight_centralization(ad::Var<T> flat_params, const WeightCenter& center, double w3);

double weight_centralization_value(std::span<const float> flat_params, const WeightCenter& center, double w3);

/// weight * (1/n) * sum_i ||logits_adv_i - logits_init_i||^2.
template <class T>
ad::Var<T> mep_logit_reg(ad::Var<T> logits_adv, ad::Var<T> logits_init, double weight);

/// Cosine between the input gradients at x and x + delta0 (flattened over the batch).
/// Diagnostic only. Empty when either gradient norm is below 1e-12.
std::optional<double> grad_align_metric(const ModelSpec& spec, const ModelParams<float>& params, const Tensor& x,
                                        std::span<const int> y, std::span<const float> delta0);

/// Cosine of two vectors; empty when either norm is below 1e-12.
std::optional<double> cosine(std::span<const float> a, std::span<const float> b);

}  // namespace smoothfat
