// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "smoothfat/data.hpp"
#include "smoothfat/models.hpp"

namespace smoothfat {

/// Evaluation attack; always started from delta0 = 0. steps == 0 means clean input.
struct EvalAttack {
    std::string name;
    bool fgsm = false;
    int steps = 0;
    double step = 0.0;
};

/// Parses "clean,fgsm,pgd10,pgd-20,..." against budget xi; PGD stride defaults to xi/4.
std::vector<EvalAttack> parse_attack_list(const std::string& list, double xi, double pgd_step = 0.0);

struct EvalReport {
    std::size_t samples = 0;
    double xi = 0.0;
    std::string checkpoint;
    std::vector<std::string> order;              ///< attack names in evaluation order, "clean" first
    std::map<std::string, std::size_t> correct;  ///< per attack
    std::map<std::string, double> accuracy;      ///< correct / samples

    double at(const std::string& name) const { return accuracy.at(name); }
};

/// Accuracy of argmax predictions (ties to the lowest class) on clean and attacked inputs.
EvalReport evaluate(const ModelSpec& spec, const ModelParams<float>& params, const Dataset& dataset,
                    const std::vector<EvalAttack>& attacks, double xi, std::size_t threads = 1,
                    std::size_t chunk = 250);

enum class AggregateMode { mbest, mfinal, best };

/// Evaluations of one training run at its best and final checkpoints.
struct RunEvaluation {
    EvalReport best;
    EvalReport final;
};

/// mbest: mean of best reports; mfinal: mean of final reports; best: per-attack max of best reports.
EvalReport aggregate(const std::vector<RunEvaluation>& runs, AggregateMode mode);

nlohmann::json to_json(const EvalReport& report);

/// "method,clean,FGSM,PGD-10,PGD-20,PGD-50" style row; missing attacks are left empty.
std::string csv_table_header();
std::string csv_table_row(const std::string& method, const EvalReport& report);

}  // namespace smoothfat
