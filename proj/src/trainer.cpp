// SPDX-License-Identifier: Apache-2.0
#include "smoothfat/trainer.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "smoothfat/eval.hpp"
#include "smoothfat/rng.hpp"

namespace smoothfat {

namespace {

constexpr std::uint64_t kDeltaTag = 0x64656c7461ull;
constexpr std::uint64_t kEvalSubsetSeed = 0x6576616cull;

std::string format_optional(const std::optional<double>& v) { return v ? fmt::format("{:.9g}", *v) : "nan"; }

double eval_stride(const TrainConfig& config) {
    return config.eval_step > 0.0 ? config.eval_step : config.attack.xi / 4.0;
}

}  // namespace

void TrainConfig::validate() const {
    model.validate();
    attack.validate();
    smooth.validate();
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train: momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("train: weight decay must be non-negative");
    for (std::size_t i = 1; i < lr_decay_epochs.size(); ++i)
        if (lr_decay_epochs[i] <= lr_decay_epochs[i - 1])
            throw std::invalid_argument("train: lr decay epochs must be strictly increasing");
    if (!(lr_decay_factor > 0.0)) throw std::invalid_argument("train: lr decay factor must be positive");
    if (eval_samples < 1) throw std::invalid_argument("train: eval samples must be >= 1");
    if (eval_steps < 1) throw std::invalid_argument("train: eval steps must be >= 1");
    if (eval_step < 0.0 || eval_step > attack.xi) throw std::invalid_argument("train: eval step must lie in [0, xi]");
    if (!(detector.threshold > 0.0 && detector.threshold < 1.0))
        throw std::invalid_argument("detector: threshold must lie in (0, 1)");
    if (detector.window < 1) throw std::invalid_argument("detector: window must be >= 1");
}

void sgd_step(std::span<float> params, std::span<const float> grads, std::span<float> velocity, double lr,
              double momentum, double weight_decay) {
    if (params.size() != grads.size() || params.size() != velocity.size())
        throw ShapeError("sgd_step: parameter, gradient and velocity sizes differ");
    const float m = static_cast<float>(momentum);
    const float wd = static_cast<float>(weight_decay);
    const float rate = static_cast<float>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const float v = m * velocity[i] + grads[i] + wd * params[i];
        const float p = params[i] - rate * v;
        if (!std::isfinite(v) || !std::isfinite(p))
            throw TrainingAbort("sgd_step: non-finite update at parameter " + std::to_string(i));
        velocity[i] = v;
        params[i] = p;
    }
}

double lr_at(int epoch, double base_lr, std::span<const int> decay_epochs, double factor) {
    if (epoch < 1) throw std::invalid_argument("lr_at: epochs are 1-based");
    double lr = base_lr;
    for (int e : decay_epochs)
        if (epoch >= e) lr *= factor;
    return lr;
}

double lr_at(int epoch, const TrainConfig& config) {
    return lr_at(epoch, config.lr, config.lr_decay_epochs, config.lr_decay_factor);
}

TrainState init_state(const TrainConfig& config) {
    TrainState state;
    state.params = build_model(config.model, config.seed);
    for (const auto& t : state.params.tensors) state.velocity.emplace_back(t.value.size(), 0.0f);
    return state;
}

RunLogRow train_epoch(TrainState& state, const Dataset& train, const Dataset& eval_set, const TrainConfig& config,
                      int epoch, const TrainHooks& hooks) {
    const auto started = std::chrono::steady_clock::now();
    const ModelSpec& spec = config.model;
    const AttackConfig& atk = config.attack;
    const SmoothConfig& sm = config.smooth;
    const double lr = lr_at(epoch, config);
    const bool constrained = sm.variant != SmoothVariant::none && state.stats.constraint_ready();

    RunLogRow row;
    row.epoch = epoch;
    row.lr = lr;
    if (state.stats.constraint_ready()) row.gamma = state.stats.gamma;

    std::vector<BatchRecord> records;
    std::size_t selected = 0, seen = 0, ben_correct = 0;
    const auto plan_batches = batch_indices(train.size(), BatchPlan{config.seed, config.batch_size}, epoch);
    for (std::size_t b = 0; b < plan_batches.size(); ++b) {
        const Batch batch = gather(train, plan_batches[b]);
        Rng rng({config.seed, static_cast<std::uint64_t>(epoch), b, kDeltaTag});
        const std::vector<float> delta0 = init_perturbation(atk.init, batch, state.store, atk.xi, rng);

        std::vector<float> before;
        if (hooks.on_batch) before = state.params.flatten();
        const bool single_step = atk.steps == 1 && atk.step == atk.xi;
        const AttackResult attack =
            single_step ? fgsm(spec, state.params, batch.images, batch.labels, delta0, atk.xi)
                        : pgd(spec, state.params, batch.images, batch.labels, delta0, atk.xi, atk.step, atk.steps);
        BatchTelemetry tel;
        if (hooks.on_batch) tel.params_frozen = before == state.params.flatten();

        if (b == 0) row.grad_align = grad_align_metric(spec, state.params, batch.images, batch.labels, delta0);

        ad::Tape<float> tape;
        const auto vars = bind_params(tape, state.params, true);
        const auto ben_logits = forward<float>(spec, vars, tape.constant(batch.images));
        const auto adv_logits = forward<float>(spec, vars, tape.constant(attack.adversarial));
        const auto ben_losses = ad::softmax_cross_entropy(ben_logits, batch.labels);
        const auto adv_losses = ad::softmax_cross_entropy(adv_logits, batch.labels);
        const auto adv_ce = ad::mean(adv_losses);
        auto total = adv_ce;

        tel.epoch = epoch;
        tel.batch = b;
        tel.size = batch.size();
        tel.adv_mean = adv_ce.item();
        tel.ben_mean = ad::mean(ben_losses).item();

        if (constrained) {
            const auto term = sm.variant == SmoothVariant::example
                                  ? loss_cs_example(adv_losses, ben_losses, state.stats, sm.w1, sm.w2)
                                  : loss_cs_batch(adv_losses, ben_losses, state.stats, sm.w1, sm.w2);
            tel.selected = term.selected;
            tel.constraint = term.loss.item();
            if (term.selected > 0) total = ad::add(total, term.loss);
        }
        if (sm.centralization && state.center.count() > 0) {
            const auto wc = weight_centralization(ad::concat_flat<float>(vars), state.center, sm.w3);
            tel.centralization = wc.item();
            total = ad::add(total, wc);
        }
        if (sm.mep_logit_weight > 0.0) {
            const auto init_logits = forward<float>(spec, vars, tape.constant(apply_perturbation(batch.images, delta0)));
            const auto reg = mep_logit_reg(adv_logits, init_logits, sm.mep_logit_weight);
            tel.mep_reg = reg.item();
            total = ad::add(total, reg);
        }
        tel.total = total.item();
        if (!std::isfinite(tel.total))
            throw TrainingAbort(fmt::format("non-finite loss at epoch {} batch {}", epoch, b));

        tape.backward(total);
        for (std::size_t k = 0; k < vars.size(); ++k) {
            const auto g = tape.grad(vars[k]);
            sgd_step(state.params.tensors[k].value.data, g.data, state.velocity[k], lr, config.momentum,
                     config.weight_decay);
        }
        update_store(state.store, batch, b, attack.delta, atk.mep_momentum, atk.xi, train.size());

        const auto pred = argmax_rows(tape.value(ben_logits));
        for (std::size_t i = 0; i < pred.size(); ++i) ben_correct += pred[i] == batch.labels[i];
        records.push_back({batch.size(), tel.ben_mean, tel.adv_mean});
        selected += tel.selected;
        seen += batch.size();
        if (hooks.on_batch) hooks.on_batch(tel);
    }

    state.stats = update_epoch_stats(state.stats, records, sm);
    state.center.add(state.params.flatten());
    if (hooks.on_epoch) hooks.on_epoch(epoch, records, state.stats, state.params, state.center);

    row.ben_loss = *state.stats.u_prev;
    row.adv_loss = *state.stats.u_adv_prev;
    row.selected_frac = static_cast<double>(selected) / static_cast<double>(seen);
    row.train_ben_acc = static_cast<double>(ben_correct) / static_cast<double>(seen);

    const EvalAttack pgd_eval{"pgd" + std::to_string(config.eval_steps), false, config.eval_steps, eval_stride(config)};
    const EvalReport report = evaluate(spec, state.params, eval_set, {pgd_eval}, atk.xi, config.threads);
    row.eval_ben_acc = report.at("clean");
    row.eval_adv_acc = report.at(pgd_eval.name);

    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (config.log_wall_time) row.seconds = elapsed;
    spdlog::info("epoch {:3d}  ben_loss {:.4f}  adv_loss {:.4f}  sel {:.3f}  ben_acc {:.4f}  adv_acc {:.4f}  ({:.1f}s)",
                 epoch, row.ben_loss, row.adv_loss, row.selected_frac, row.eval_ben_acc, row.eval_adv_acc, elapsed);
    return row;
}

DetectorVerdict detect_overfit(std::span<const RunLogRow> history, const OverfitDetector& detector) {
    if (history.empty()) throw std::invalid_argument("detect_overfit: empty history");
    double adv_max = -1.0, ben_max = 0.0;
    int streak = 0;
    for (std::size_t i = 0; i < history.size(); ++i) {
        const RunLogRow& r = history[i];
        ben_max = std::max(ben_max, r.eval_ben_acc);
        const bool dropped = adv_max > 0.0 && r.eval_adv_acc < detector.threshold * adv_max;
        const bool ben_ok = r.eval_ben_acc >= detector.ben_fraction * ben_max;
        streak = dropped && ben_ok ? streak + 1 : 0;
        if (streak >= detector.window)
            return {true, history[i + 1 - static_cast<std::size_t>(streak)].epoch};
        adv_max = std::max(adv_max, r.eval_adv_acc);
    }
    return {};
}

Dataset eval_subset(const Dataset& test, std::size_t count) {
    count = std::min(count, test.size());
    auto perm = epoch_permutation(test.size(), BatchPlan{kEvalSubsetSeed, 1}, 0);
    perm.resize(count);
    return test.subset(perm);
}

RunResult run(const TrainConfig& config, const Dataset& train, const Dataset& test, const TrainHooks& hooks) {
    config.validate();
    train.validate();
    if (train.sample_size() != config.model.input_size())
        throw std::invalid_argument("train: dataset samples do not match the model input shape");
    if (train.classes != config.model.classes) throw std::invalid_argument("train: class count mismatch");
    const Dataset held_out = eval_subset(test, config.eval_samples);

    TrainState state = init_state(config);
    RunResult result;
    double best_adv = -1.0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        RunLogRow row = train_epoch(state, train, held_out, config, epoch, hooks);
        if (row.eval_adv_acc > best_adv) {
            best_adv = row.eval_adv_acc;
            result.best_params = state.params;
            result.best_epoch = epoch;
        }
        result.log.push_back(row);
    }
    result.final_params = state.params;
    result.verdict = detect_overfit(result.log, config.detector);
    return result;
}

std::string csv_log_header() {
    return "epoch,ben_loss,adv_loss,gamma,selected_frac,train_ben_acc,eval_ben_acc,eval_adv_acc,grad_align,lr,seconds";
}

std::string csv_log_line(const RunLogRow& r) {
    return fmt::format("{},{:.9g},{:.9g},{},{:.9g},{:.9g},{:.9g},{:.9g},{},{:.9g},{:.3f}", r.epoch, r.ben_loss,
                       r.adv_loss, format_optional(r.gamma), r.selected_frac, r.train_ben_acc, r.eval_ben_acc,
                       r.eval_adv_acc, format_optional(r.grad_align), r.lr, r.seconds);
}

void write_csv_log(const std::filesystem::path& path, std::span<const RunLogRow> rows) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << csv_log_header() << '\n';
    for (const auto& r : rows) os << csv_log_line(r) << '\n';
}

}  // namespace smoothfat
