// SPDX-License-Identifier: Apache-2.0
//
// Multi-seed experiment driver behind `smoothfat train`.
//
// Layout of output_dir:
//   seed-<s>/log.csv, seed-<s>/best.ckpt, seed-<s>/final.ckpt, seed-<s>/summary.json
//   aggregate.json   mbest / mfinal / best reports over the repeats
//   table.csv        one row per aggregate mode
#pragma once

#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "smoothfat/config.hpp"
#include "smoothfat/eval.hpp"
#include "smoothfat/trainer.hpp"

namespace smoothfat {

struct SeedOutcome {
    std::uint64_t seed = 0;
    std::vector<RunLogRow> log;
    int best_epoch = 0;
    DetectorVerdict verdict;
    RunEvaluation evaluation;
    std::filesystem::path directory;
};

struct ExperimentOutcome {
    std::vector<SeedOutcome> runs;
    nlohmann::json aggregate;
};

nlohmann::json run_summary(const ExperimentConfig& config, const SeedOutcome& run);

/// Trains `repeats` seeds (seed, seed + 1, ...) and writes every artifact.
ExperimentOutcome run_experiment(const ExperimentConfig& config);

}  // namespace smoothfat
