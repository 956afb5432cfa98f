// SPDX-License-Identifier: Apache-2.0
#include "smoothfat/eval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "smoothfat/attacks.hpp"
#include "smoothfat/parallel.hpp"

namespace smoothfat {

namespace {

std::string trim(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
    const auto pred = argmax_rows(logits);
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) n += pred[i] == labels[i];
    return n;
}

}  // namespace

std::vector<EvalAttack> parse_attack_list(const std::string& list, double xi, double pgd_step) {
    if (pgd_step <= 0.0) pgd_step = xi / 4.0;
    std::vector<EvalAttack> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        std::string lower;
        for (char c : item) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (lower.empty()) continue;
        if (lower == "clean") continue;  // always reported
        if (lower == "fgsm") {
            out.push_back({"fgsm", true, 1, xi});
            continue;
        }
        if (lower.rfind("pgd", 0) == 0) {
            std::string digits = lower.substr(3);
            if (!digits.empty() && digits[0] == '-') digits.erase(0, 1);
            if (digits.empty() || !std::all_of(digits.begin(), digits.end(), ::isdigit))
                throw std::invalid_argument("bad attack name '" + item + "'");
            const int steps = std::stoi(digits);
            if (steps < 1) throw std::invalid_argument("bad attack name '" + item + "'");
            out.push_back({"pgd" + std::to_string(steps), false, steps, pgd_step});
            continue;
        }
        throw std::invalid_argument("unknown attack '" + item + "'");
    }
    return out;
}

EvalReport evaluate(const ModelSpec& spec, const ModelParams<float>& params, const Dataset& dataset,
                    const std::vector<EvalAttack>& attacks, double xi, std::size_t threads, std::size_t chunk) {
    dataset.validate();
    EvalReport report;
    report.samples = dataset.size();
    report.xi = xi;
    report.order.push_back("clean");
    for (const auto& a : attacks) report.order.push_back(a.name);

    const std::size_t chunks = (dataset.size() + chunk - 1) / chunk;
    std::vector<std::vector<std::size_t>> correct(chunks, std::vector<std::size_t>(report.order.size(), 0));
    parallel_for(chunks, threads, [&](std::size_t c) {
        std::vector<std::size_t> idx;
        for (std::size_t i = c * chunk; i < std::min(dataset.size(), (c + 1) * chunk); ++i) idx.push_back(i);
        const Batch batch = gather(dataset, idx);
        correct[c][0] = count_correct(predict_logits(spec, params, batch.images), batch.labels);
        const std::vector<float> zero(batch.images.size(), 0.0f);
        for (std::size_t a = 0; a < attacks.size(); ++a) {
            const EvalAttack& atk = attacks[a];
            const AttackResult r = atk.fgsm ? fgsm(spec, params, batch.images, batch.labels, zero, xi)
                                            : pgd(spec, params, batch.images, batch.labels, zero, xi, atk.step, atk.steps);
            correct[c][a + 1] = count_correct(predict_logits(spec, params, r.adversarial), batch.labels);
        }
    });
    for (std::size_t k = 0; k < report.order.size(); ++k) {
        std::size_t total = 0;
        for (const auto& row : correct) total += row[k];
        report.correct[report.order[k]] = total;
        report.accuracy[report.order[k]] = static_cast<double>(total) / static_cast<double>(report.samples);
    }
    return report;
}

EvalReport aggregate(const std::vector<RunEvaluation>& runs, AggregateMode mode) {
    if (runs.empty()) throw std::invalid_argument("aggregate: no runs");
    auto pick = [&](const RunEvaluation& r) -> const EvalReport& { return mode == AggregateMode::mfinal ? r.final : r.best; };
    EvalReport out;
    const EvalReport& first = pick(runs.front());
    out.order = first.order;
    out.xi = first.xi;
    out.samples = first.samples;
    out.checkpoint = mode == AggregateMode::mbest ? "mbest" : (mode == AggregateMode::mfinal ? "mfinal" : "best");
    for (const auto& name : out.order) {
        double acc = 0.0;
        std::size_t correct = 0;
        for (const auto& r : runs) {
            const double v = pick(r).accuracy.at(name);
            if (mode == AggregateMode::best) {
                if (v >= acc) {
                    acc = v;
                    correct = pick(r).correct.at(name);
                }
            } else {
                acc += v;
            }
        }
        if (mode != AggregateMode::best) {
            acc /= static_cast<double>(runs.size());
            correct = static_cast<std::size_t>(std::llround(acc * static_cast<double>(out.samples)));
        }
        out.accuracy[name] = acc;
        out.correct[name] = correct;
    }
    return out;
}

nlohmann::json to_json(const EvalReport& report) {
    nlohmann::json j;
    j["samples"] = report.samples;
    j["xi"] = report.xi;
    if (!report.checkpoint.empty()) j["checkpoint"] = report.checkpoint;
    nlohmann::json acc = nlohmann::json::array();
    for (const auto& name : report.order) {
        acc.push_back({{"attack", name},
                       {"correct", report.correct.at(name)},
                       {"accuracy", report.accuracy.at(name)},
                       {"accuracy_text", fmt::format("{:.6f}", report.accuracy.at(name))}});
    }
    j["results"] = acc;
    return j;
}

std::string csv_table_header() { return "method,clean,FGSM,PGD-10,PGD-20,PGD-50"; }

std::string csv_table_row(const std::string& method, const EvalReport& report) {
    std::string row = method;
    for (const char* name : {"clean", "fgsm", "pgd10", "pgd20", "pgd50"}) {
        row += ',';
        if (auto it = report.accuracy.find(name); it != report.accuracy.end()) row += fmt::format("{:.6f}", it->second);
    }
    return row;
}

}  // namespace smoothfat
