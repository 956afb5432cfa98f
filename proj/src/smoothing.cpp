// SPDX-License-Identifier: Apache-2.0
#include "smoothfat/smoothing.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "smoothfat/attacks.hpp"

namespace smoothfat {

std::string to_string(SmoothVariant v) {
    switch (v) {
        case SmoothVariant::none: return "none";
        case SmoothVariant::example: return "example";
        case SmoothVariant::batch: return "batch";
    }
    return "?";
}

SmoothVariant parse_smooth_variant(const std::string& name) {
    if (name == "none") return SmoothVariant::none;
    if (name == "example") return SmoothVariant::example;
    if (name == "batch") return SmoothVariant::batch;
    throw std::invalid_argument("unknown smoothing variant '" + name + "'");
}

void SmoothConfig::validate() const {
    auto in_range = [](double w) { return w >= 0.0 && w <= 1.5; };
    if (!in_range(w1) || !in_range(w2)) throw std::invalid_argument("smooth: w1 and w2 must lie in [0, 1.5]");
    if (!(w3 >= 0.0)) throw std::invalid_argument("smooth: w3 must be non-negative");
    if (!(gamma_min >= 0.0 && gamma_min <= gamma_max)) throw std::invalid_argument("smooth: need 0 <= gamma_min <= gamma_max");
    if (!(mep_logit_weight >= 0.0)) throw std::invalid_argument("smooth: mep logit weight must be non-negative");
    if (centralization && mep_logit_weight > 0.0)
        throw std::invalid_argument("smooth: weight centralization and the MEP logit regularizer are mutually exclusive");
}

double convergence_stride(double d_prev, double gamma_min, double gamma_max) {
    return std::min(std::max(d_prev, gamma_min), gamma_max);
}

EpochStats update_epoch_stats(const EpochStats& stats, std::span<const BatchRecord> records,
                              const SmoothConfig& config) {
    double total = 0.0, ben = 0.0, adv = 0.0;
    for (const BatchRecord& r : records) {
        total += static_cast<double>(r.size);
        ben += static_cast<double>(r.size) * r.ben_mean;
        adv += static_cast<double>(r.size) * r.adv_mean;
    }
    if (records.empty() || total == 0.0) throw std::invalid_argument("update_epoch_stats: empty epoch");
    EpochStats next;
    next.completed = stats.completed + 1;
    next.u_prev = ben / total;
    next.u_adv_prev = adv / total;
    if (stats.u_prev) {
        next.d_prev = std::abs(*next.u_prev - *stats.u_prev);
        next.gamma = convergence_stride(*next.d_prev, config.gamma_min, config.gamma_max);
    } else {
        next.gamma = config.gamma_max;
    }
    return next;
}

void WeightCenter::add(std::span<const float> flat) {
    if (count_ == 0) mean_.assign(flat.size(), 0.0);
    if (flat.size() != mean_.size()) throw ShapeError("WeightCenter: parameter count changed");
    ++count_;
    const double inv = 1.0 / static_cast<double>(count_);
    for (std::size_t i = 0; i < flat.size(); ++i) mean_[i] += (static_cast<double>(flat[i]) - mean_[i]) * inv;
}

template <class T>
ConstraintTerm<T> loss_cs_example(ad::Var<T> adv_losses, ad::Var<T> ben_losses, const EpochStats& stats,
                                  double w1, double w2) {
    auto& tape = ben_losses.tape();
    if (adv_losses.shape() != ben_losses.shape() || ben_losses.shape().size() != 1)
        throw ShapeError("loss_cs_example: loss vectors " + to_string(adv_losses.shape()) + " and " +
                         to_string(ben_losses.shape()) + " differ");
    ConstraintTerm<T> term{tape.constant(BasicTensor<T>::scalar(T{0})), 0};
    if (!stats.constraint_ready()) return term;
    const double u = *stats.u_prev;
    const double u_adv = *stats.u_adv_prev;
    auto ben = ben_losses.value();
    const std::size_t n = ben.size();
    std::vector<T> mask(n, T{0});
    for (std::size_t i = 0; i < n; ++i)
        if (condition(static_cast<double>(ben[i]), u, stats.gamma)) {
            mask[i] = T{1} / static_cast<T>(n);
            ++term.selected;
        }
    if (term.selected == 0) return term;
    ad::Var<T> total = ad::scale(ad::weighted_sum<T>(ad::abs(ad::add_scalar(ben_losses, static_cast<T>(-u))), mask),
                                 static_cast<T>(w2));
    if (w1 != 0.0) {
        auto adv_term = ad::weighted_sum<T>(ad::abs(ad::add_scalar(adv_losses, static_cast<T>(-u_adv))), mask);
        total = ad::add(total, ad::scale(adv_term, static_cast<T>(w1)));
    }
    term.loss = total;
    return term;
}

template <class T>
ConstraintTerm<T> loss_cs_batch(ad::Var<T> adv_losses, ad::Var<T> ben_losses, const EpochStats& stats,
                                double w1, double w2) {
    auto& tape = ben_losses.tape();
    if (adv_losses.shape() != ben_losses.shape() || ben_losses.shape().size() != 1)
        throw ShapeError("loss_cs_batch: loss vectors " + to_string(adv_losses.shape()) + " and " +
                         to_string(ben_losses.shape()) + " differ");
    ConstraintTerm<T> term{tape.constant(BasicTensor<T>::scalar(T{0})), 0};
    if (!stats.constraint_ready()) return term;
    const double u = *stats.u_prev;
    const double u_adv = *stats.u_adv_prev;
    ad::Var<T> ben_mean = ad::mean(ben_losses);
    if (!condition(static_cast<double>(ben_mean.item()), u, stats.gamma)) return term;
    term.selected = ben_losses.shape()[0];
    ad::Var<T> total = ad::scale(ad::abs(ad::add_scalar(ben_mean, static_cast<T>(-u))), static_cast<T>(w2));
    if (w1 != 0.0) {
        auto adv_term = ad::abs(ad::add_scalar(ad::mean(adv_losses), static_cast<T>(-u_adv)));
        total = ad::add(total, ad::scale(adv_term, static_cast<T>(w1)));
    }
    term.loss = total;
    return term;
}

double loss_cs_example_value(std::span<const double> adv_losses, std::span<const double> ben_losses,
                             const EpochStats& stats, double w1, double w2) {
    if (adv_losses.size() != ben_losses.size()) throw ShapeError("loss_cs_example_value: size mismatch");
    if (!stats.constraint_ready() || ben_losses.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < ben_losses.size(); ++i)
        if (condition(ben_losses[i], *stats.u_prev, stats.gamma))
            total += w1 * std::abs(adv_losses[i] - *stats.u_adv_prev) + w2 * std::abs(ben_losses[i] - *stats.u_prev);
    return total / static_cast<double>(ben_losses.size());
}

double loss_cs_batch_value(double adv_mean, double ben_mean, const EpochStats& stats, double w1, double w2) {
    if (!stats.constraint_ready() || !condition(ben_mean, *stats.u_prev, stats.gamma)) return 0.0;
    return w1 * std::abs(adv_mean - *stats.u_adv_prev) + w2 * std::abs(ben_mean - *stats.u_prev);
}

template <class T>
ad::Var<T> weight_centralization(ad::Var<T> flat_params, const WeightCenter& center, double w3) {
    auto& tape = flat_params.tape();
    if (center.count() == 0) {
        spdlog::debug("weight centralization inactive: no completed epochs");
        return tape.constant(BasicTensor<T>::scalar(T{0}));
    }
    const auto& m = center.mean();
    if (m.size() != flat_params.value().size()) throw ShapeError("weight_centralization: center size mismatch");
    auto c = tape.constant(BasicTensor<T>(flat_params.shape(), std::vector<T>(m.begin(), m.end())));
    return ad::scale(ad::pnorm(ad::sub(flat_params, c), T{2}), static_cast<T>(w3));
}

double weight_centralization_value(std::span<const float> flat_params, const WeightCenter& center, double w3) {
    if (center.count() == 0) return 0.0;
    const auto& m = center.mean();
    if (m.size() != flat_params.size()) throw ShapeError("weight_centralization_value: center size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double d = static_cast<double>(flat_params[i]) - m[i];
        s += d * d;
    }
    return w3 * std::sqrt(s);
}

template <class T>
ad::Var<T> mep_logit_reg(ad::Var<T> logits_adv, ad::Var<T> logits_init, double weight) {
    if (logits_adv.shape() != logits_init.shape() || logits_adv.shape().size() != 2)
        throw ShapeError("mep_logit_reg: logits " + to_string(logits_adv.shape()) + " and " +
                         to_string(logits_init.shape()) + " differ");
    const T n = static_cast<T>(logits_adv.shape()[0]);
    return ad::scale(ad::squared_distance(logits_adv, logits_init), static_cast<T>(weight) / n);
}

std::optional<double> cosine(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw ShapeError("cosine: size mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < 1e-12 || nb < 1e-12) return std::nullopt;
    return std::clamp(dot / (na * nb), -1.0, 1.0);
}

std::optional<double> grad_align_metric(const ModelSpec& spec, const ModelParams<float>& params, const Tensor& x,
                                        std::span<const int> y, std::span<const float> delta0) {
    const auto clean = input_gradient(spec, params, x, y);
    const auto shifted = input_gradient(spec, params, apply_perturbation(x, delta0), y);
    auto c = cosine(clean.grad, shifted.grad);
    if (!c) spdlog::debug("grad-align metric undefined: vanishing input gradient");
    return c;
}

template ConstraintTerm<float> loss_cs_example(ad::Var<float>, ad::Var<float>, const EpochStats&, double, double);
template ConstraintTerm<double> loss_cs_example(ad::Var<double>, ad::Var<double>, const EpochStats&, double, double);
template ConstraintTerm<float> loss_cs_batch(ad::Var<float>, ad::Var<float>, const EpochStats&, double, double);
template ConstraintTerm<double> loss_cs_batch(ad::Var<double>, ad::Var<double>, const EpochStats&, double, double);
template ad::Var<float> weight_centralization(ad::Var<float>, const WeightCenter&, double);
template ad::Var<double> weight_centralization(ad::Var<double>, const WeightCenter&, double);
template ad::Var<float> mep_logit_reg(ad::Var<float>, ad::Var<float>, double);
template ad::Var<double> mep_logit_reg(ad::Var<double>, ad::Var<double>, double);

}  // namespace smoothfat
