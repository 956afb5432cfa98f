// SPDX-License-Identifier: Apache-2.0
#include "smoothfat/experiment.hpp"

#include <spdlog/spdlog.h>

#include <fstream>

namespace smoothfat {

namespace {

nlohmann::json row_json(const RunLogRow& r) {
    nlohmann::json j{{"epoch", r.epoch},
                     {"ben_loss", r.ben_loss},
                     {"adv_loss", r.adv_loss},
                     {"selected_frac", r.selected_frac},
                     {"train_ben_acc", r.train_ben_acc},
                     {"eval_ben_acc", r.eval_ben_acc},
                     {"eval_adv_acc", r.eval_adv_acc},
                     {"lr", r.lr}};
    j["gamma"] = r.gamma ? nlohmann::json(*r.gamma) : nlohmann::json(nullptr);
    j["grad_align"] = r.grad_align ? nlohmann::json(*r.grad_align) : nlohmann::json(nullptr);
    return j;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

const char* mode_name(AggregateMode m) {
    switch (m) {
        case AggregateMode::mbest: return "mbest";
        case AggregateMode::mfinal: return "mfinal";
        case AggregateMode::best: return "best";
    }
    return "?";
}

}  // namespace

nlohmann::json run_summary(const ExperimentConfig& config, const SeedOutcome& run) {
    nlohmann::json j;
    j["seed"] = run.seed;
    j["epochs"] = run.log.size();
    j["best_epoch"] = run.best_epoch;
    j["best"] = row_json(run.log.at(static_cast<std::size_t>(run.best_epoch - 1)));
    j["final"] = row_json(run.log.back());
    j["detector"] = {{"collapsed", run.verdict.collapsed},
                     {"epoch", run.verdict.collapsed ? nlohmann::json(run.verdict.epoch) : nlohmann::json(nullptr)},
                     {"window", config.train.detector.window},
                     {"threshold", config.train.detector.threshold}};
    j["evaluation"] = {{"best", to_json(run.evaluation.best)}, {"final", to_json(run.evaluation.final)}};
    j["overrides"] = config.overrides;
    j["config"] = config.resolved;
    return j;
}

ExperimentOutcome run_experiment(const ExperimentConfig& config) {
    const Dataset train = load_train_data(config.data);
    const Dataset test = load_test_data(config.data);
    const Dataset held_out = eval_subset(test, config.eval.samples);
    const auto attacks = parse_attack_list(config.eval.attacks, config.train.attack.xi, config.eval.pgd_step);
    std::filesystem::create_directories(config.output_dir);

    ExperimentOutcome outcome;
    std::vector<RunEvaluation> evaluations;
    for (int r = 0; r < config.repeats; ++r) {
        TrainConfig tc = config.train;
        tc.seed = config.train.seed + static_cast<std::uint64_t>(r);
        spdlog::info("run {}/{} seed {}", r + 1, config.repeats, tc.seed);
        RunResult result = run(tc, train, test);

        SeedOutcome so;
        so.seed = tc.seed;
        so.log = result.log;
        so.best_epoch = result.best_epoch;
        so.verdict = result.verdict;
        so.directory = config.output_dir / ("seed-" + std::to_string(tc.seed));
        std::filesystem::create_directories(so.directory);

        so.evaluation.best = evaluate(tc.model, result.best_params, held_out, attacks, tc.attack.xi, tc.threads);
        so.evaluation.best.checkpoint = "best";
        so.evaluation.final = evaluate(tc.model, result.final_params, held_out, attacks, tc.attack.xi, tc.threads);
        so.evaluation.final.checkpoint = "final";

        write_csv_log(so.directory / "log.csv", so.log);
        write_checkpoint(so.directory / "best.ckpt",
                         {tc.model, tc.seed, result.best_epoch, {{"checkpoint", "best"}, {"xi", tc.attack.xi}}, result.best_params});
        write_checkpoint(so.directory / "final.ckpt",
                         {tc.model, tc.seed, static_cast<int>(so.log.size()), {{"checkpoint", "final"}, {"xi", tc.attack.xi}},
                          result.final_params});
        write_json(so.directory / "summary.json", run_summary(config, so));
        evaluations.push_back(so.evaluation);
        outcome.runs.push_back(std::move(so));
    }

    std::ofstream table(config.output_dir / "table.csv");
    table << csv_table_header() << '\n';
    nlohmann::json agg;
    agg["repeats"] = config.repeats;
    agg["seeds"] = nlohmann::json::array();
    for (const auto& so : outcome.runs)
        agg["seeds"].push_back({{"seed", so.seed},
                                {"collapsed", so.verdict.collapsed},
                                {"best_epoch", so.best_epoch},
                                {"log", (std::filesystem::path(so.directory.filename()) / "log.csv").generic_string()}});
    for (AggregateMode mode : {AggregateMode::mbest, AggregateMode::mfinal, AggregateMode::best}) {
        const EvalReport report = aggregate(evaluations, mode);
        agg[mode_name(mode)] = to_json(report);
        table << csv_table_row(mode_name(mode), report) << '\n';
    }
    write_json(config.output_dir / "aggregate.json", agg);
    outcome.aggregate = agg;
    return outcome;
}

}  // namespace smoothfat
