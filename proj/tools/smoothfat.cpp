// SPDX-License-Identifier: Apache-2.0
//
// smoothfat train --config PATH [--set key=value | --key=value]...
// smoothfat eval  --ckpt PATH --data IMAGES [--labels LABELS] --attacks LIST
// smoothfat verify [--inject-fault relu-sign] [--full]
//
// Exit codes: 0 ok, 1 verification failure, 2 config or input error, 3 runtime abort.
#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>
#include <regex>

#include "smoothfat/autodiff.hpp"
#include "smoothfat/config.hpp"
#include "smoothfat/eval.hpp"
#include "smoothfat/experiment.hpp"
#include "smoothfat/parallel.hpp"
#include "smoothfat/verify.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kInputError = 2;
constexpr int kAbort = 3;

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
    smoothfat::ExperimentConfig cfg;
    try {
        cfg = smoothfat::load_experiment(config_path, overrides);
    } catch (const smoothfat::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kInputError;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kInputError;
    }
    if (cfg.train.threads <= 1) cfg.train.threads = smoothfat::thread_budget();
    try {
        const auto outcome = smoothfat::run_experiment(cfg);
        std::cout << outcome.aggregate.dump(2) << '\n';
    } catch (const smoothfat::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kInputError;
    } catch (const smoothfat::TrainingAbort& e) {
        std::cerr << "training aborted: " << e.what() << '\n';
        return kAbort;
    } catch (const std::invalid_argument& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kInputError;
    }
    return kOk;
}

std::string default_labels(const std::string& images) {
    static const std::regex pattern("images-idx3");
    const std::string guess = std::regex_replace(images, pattern, "labels-idx1");
    if (guess == images) throw smoothfat::DataError("cannot derive a label file name from " + images + "; pass --labels");
    return guess;
}

int cmd_eval(const std::string& ckpt_path, const std::string& images, std::string labels, const std::string& attacks,
             double xi_override, std::size_t samples) {
    try {
        const auto ckpt = smoothfat::read_checkpoint(ckpt_path);
        if (labels.empty()) labels = default_labels(images);
        auto data = smoothfat::load_idx(images, labels, ckpt.spec.classes);
        if (samples > 0) data = smoothfat::eval_subset(data, samples);
        double xi = xi_override;
        if (xi <= 0.0) xi = ckpt.extra.value("xi", 0.0);
        if (xi <= 0.0) throw smoothfat::DataError("checkpoint does not record xi; pass --xi");
        const auto list = smoothfat::parse_attack_list(attacks, xi);
        auto report = smoothfat::evaluate(ckpt.spec, ckpt.params, data, list, xi, smoothfat::thread_budget());
        report.checkpoint = ckpt_path;
        std::cout << smoothfat::to_json(report).dump(2) << '\n';
    } catch (const smoothfat::CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << '\n';
        return kInputError;
    } catch (const smoothfat::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kInputError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kInputError;
    }
    return kOk;
}

int cmd_verify(const std::string& fault, bool full) {
    if (fault == "relu-sign") {
        smoothfat::ad::inject_fault(smoothfat::ad::Fault::relu_backward_sign_flip);
    } else if (!fault.empty()) {
        std::cerr << "unknown fault '" << fault << "'\n";
        return kInputError;
    }
    smoothfat::VerifyOptions options;
    if (full) {
        options.gradient_instances = 10;
        options.box_examples = 100000;
    }
    const auto results = smoothfat::run_verify_suite(options);
    std::size_t failed = 0;
    for (const auto& r : results) {
        std::cout << smoothfat::format_result(r) << '\n';
        failed += !r.passed;
    }
    std::cout << results.size() - failed << "/" << results.size() << " properties passed\n";
    for (const auto& r : results)
        if (!r.passed) std::cout << "failing property: " << r.name << '\n';
    return failed == 0 ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fast adversarial training with loss-convergence smoothing"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off");

    std::string config_path;
    std::vector<std::string> overrides;
    auto* train = app.add_subcommand("train", "Train one or more seeds from a JSON config");
    train->add_option("--config", config_path, "Experiment config (JSON)")->required();
    train->add_option("--set", overrides, "Override a config value, e.g. --set smooth.variant=none");
    train->allow_extras();  // --smooth.variant=none is shorthand for --set smooth.variant=none

    std::string ckpt, images, labels, attacks = "clean";
    double xi = 0.0;
    std::size_t samples = 0;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on an IDX dataset");
    eval->add_option("--ckpt", ckpt, "Checkpoint file")->required();
    eval->add_option("--data", images, "IDX image file")->required();
    eval->add_option("--labels", labels, "IDX label file (derived from --data when omitted)");
    eval->add_option("--attacks", attacks, "Comma-separated list: clean,fgsm,pgd10,pgd20,pgd50");
    eval->add_option("--xi", xi, "Perturbation budget; defaults to the value stored in the checkpoint");
    eval->add_option("--samples", samples, "Evaluate a fixed subset of this size");

    std::string fault;
    bool full = false;
    auto* verify = app.add_subcommand("verify", "Run the built-in property checks");
    verify->add_option("--inject-fault", fault, "Deliberately break a primitive (relu-sign)");
    verify->add_flag("--full", full, "Use acceptance-size instance counts");

    for (auto* sub : {train, eval, verify}) sub->add_option("--log-level", log_level, "Same as the global option");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInputError;
    }
    spdlog::set_level(spdlog::level::from_str(log_level));
    spdlog::set_pattern("[%l] %v");

    try {
        if (*train) {
            for (const auto& extra : train->remaining()) {
                if (extra.rfind("--", 0) != 0 || extra.find('=') == std::string::npos) {
                    std::cerr << "unexpected argument '" << extra << "'\n";
                    return kInputError;
                }
                overrides.push_back(extra.substr(2));
            }
            return cmd_train(config_path, overrides);
        }
        if (*eval) return cmd_eval(ckpt, images, labels, attacks, xi, samples);
        if (*verify) return cmd_verify(fault, full);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kAbort;
    }
    return kOk;
}
