// SPDX-License-Identifier: Apache-2.0
//
// One PASS/FAIL line per acceptance criterion. Exit status 0 only if all pass.
//
//   acceptance [--config configs/mnist2_cnn.json] [--skip-demo] [--only N] [--known-failure N]
//
// --known-failure lists criteria that are reported as FAIL but do not change the
// exit status; every other failure still does.
#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>

#include "smoothfat/config.hpp"
#include "smoothfat/trainer.hpp"
#include "smoothfat/verify.hpp"

using namespace smoothfat;

namespace {

struct Line {
    int id;
    std::string title;
    bool passed;
    std::string detail;
};

std::vector<Line> lines;

void report(int id, const std::string& title, bool passed, const std::string& detail) {
    lines.push_back({id, title, passed, detail});
    std::cout << fmt::format("{} [{}] {}: {}", passed ? "PASS" : "FAIL", id, title, detail) << std::endl;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// Folds a group of property results into one criterion line.
void report_group(int id, const std::string& title, const std::vector<PropertyResult>& results, double seconds,
                  double time_limit, const std::string& extra = {}) {
    bool ok = !results.empty() && seconds < time_limit;
    std::string failing;
    for (const auto& r : results) {
        spdlog::debug("{}", format_result(r));
        if (!r.passed) {
            ok = false;
            failing += (failing.empty() ? "" : ", ") + r.name + fmt::format(" (measured {:.3g} > tol {:.3g})", r.measured, r.tolerance);
        }
    }
    std::string detail = fmt::format("{} properties, {:.1f}s (limit {:.0f}s)", results.size(), seconds, time_limit);
    if (!extra.empty()) detail += ", " + extra;
    if (!failing.empty()) detail += "; failing: " + failing;
    report(id, title, ok, detail);
}

struct DemoRun {
    std::uint64_t seed;
    std::vector<RunLogRow> log;
    DetectorVerdict verdict;
};

void smoothing_demo(const std::filesystem::path& config_path) {
    const auto started = std::chrono::steady_clock::now();
    ExperimentConfig base;
    try {
        base = load_experiment(config_path);
    } catch (const std::exception& e) {
        report(6, "smoothing demonstration", false, std::string("cannot load demo config: ") + e.what());
        return;
    }
    const Dataset train = load_train_data(base.data);
    const Dataset test = load_test_data(base.data);
    const double xi = base.train.attack.xi;
    const bool setup_ok = train.size() == 2000 && test.size() == 1000 && base.train.model.kind == ModelKind::cnn &&
                          std::abs(xi - 64.0 / 255.0) < 1e-12 && base.train.epochs == 30 && base.repeats == 3 &&
                          base.train.smooth.w1 == 0.0 && base.train.smooth.w2 == 1.0;

    auto train_variant = [&](SmoothVariant variant) {
        std::vector<DemoRun> runs;
        for (int r = 0; r < base.repeats; ++r) {
            TrainConfig tc = base.train;
            tc.smooth.variant = variant;
            tc.attack.init = InitStrategy::rs;
            tc.seed = base.train.seed + static_cast<std::uint64_t>(r);
            const auto t0 = std::chrono::steady_clock::now();
            RunResult res = run(tc, train, test);
            std::string curve;
            for (const auto& row : res.log) curve += fmt::format(" {:.2f}", row.eval_adv_acc);
            std::cout << fmt::format("  {} seed {} ({:.0f}s) collapsed={} adv-acc:{}", to_string(variant), tc.seed,
                                     seconds_since(t0), res.verdict.collapsed, curve)
                      << std::endl;
            runs.push_back({tc.seed, std::move(res.log), res.verdict});
        }
        return runs;
    };
    const auto baseline = train_variant(SmoothVariant::none);
    const auto smoothed = train_variant(SmoothVariant::batch);
    const double elapsed = seconds_since(started);

    int base_collapsed = 0, smooth_collapsed = 0;
    double collapsed_adv = 0.0, base_final = 0.0, smooth_final = 0.0;
    for (const auto& r : baseline) {
        base_final += r.log.back().eval_adv_acc / static_cast<double>(baseline.size());
        if (r.verdict.collapsed) {
            ++base_collapsed;
            collapsed_adv += r.log.back().eval_adv_acc;
        }
    }
    for (const auto& r : smoothed) {
        smooth_collapsed += r.verdict.collapsed;
        smooth_final += r.log.back().eval_adv_acc / static_cast<double>(smoothed.size());
    }
    // With no collapsed baseline seed there is no collapsed accuracy; fall back to the mean final one.
    const double reference = base_collapsed > 0 ? collapsed_adv / base_collapsed : base_final;

    const double gamma_max = base.train.smooth.gamma_max;
    std::size_t epochs_checked = 0, violations = 0;
    for (const auto& r : smoothed)
        for (std::size_t t = 1; t < r.log.size(); ++t) {
            ++epochs_checked;
            violations += std::abs(r.log[t].adv_loss - r.log[t - 1].adv_loss) > gamma_max + 0.05;
        }
    const double violation_frac = epochs_checked ? static_cast<double>(violations) / epochs_checked : 1.0;

    const bool a = base_collapsed >= 1;
    const bool b = smooth_collapsed == 0 && smooth_final >= reference + 0.15;
    const bool c = violation_frac <= 0.10;
    const bool timely = elapsed < 1800.0;
    report(6, "smoothing demonstration", setup_ok && a && b && c && timely,
           fmt::format("(a) baseline collapsed {}/{} [need >=1]; (b) B-RS collapsed {}/{} [need 0], final PGD-10 "
                       "{:.3f} vs baseline {} {:.3f} + 0.15; (c) drift violations {}/{} = {:.3f} [need <=0.10]; "
                       "setup {}; {:.0f}s (limit 1800s)",
                       base_collapsed, baseline.size(), smooth_collapsed, smoothed.size(), smooth_final,
                       base_collapsed > 0 ? "collapsed" : "final (none collapsed)", reference, violations,
                       epochs_checked, violation_frac, setup_ok ? "ok" : "MISMATCH", elapsed));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string config = SMOOTHFAT_DEMO_CONFIG;
    bool skip_demo = false;
    std::vector<int> only, known;
    std::size_t gradient_instances = 5;
    app.add_option("--config", config, "Config of the smoothing demonstration");
    app.add_flag("--skip-demo", skip_demo, "Skip the training demonstration (criterion 6)");
    app.add_option("--only", only, "Run only these criteria");
    app.add_option("--known-failure", known, "Criteria whose failure does not affect the exit status");
    app.add_option("--gradient-instances", gradient_instances, "Random instances per differentiable op");
    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::warn);

    auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
    VerifyOptions options;
    options.gradient_instances = gradient_instances;
    options.box_examples = 100000;
    options.bookkeeping_epochs = 20;

    if (wanted(1)) {
        const auto t = std::chrono::steady_clock::now();
        const auto r = verify_gradients(options);
        const std::size_t instances = r.size() * options.gradient_instances;
        auto results = r;
        if (instances < 100) results.push_back({"gradient.instance_count", false, double(instances), 100.0, "", 0.0});
        report_group(1, "gradient fidelity", results, seconds_since(t), 120.0,
                     fmt::format("{} instances, rel err <= 1e-6", instances));
    }
    if (wanted(2)) {
        const auto t = std::chrono::steady_clock::now();
        const auto r = verify_budget_box(options);
        report_group(2, "budget/box exactness", r, seconds_since(t), 300.0, r.empty() ? "" : r[0].detail);
    }
    if (wanted(3)) {
        const auto t = std::chrono::steady_clock::now();
        report_group(3, "oracle equivalences", verify_attack_oracles(options), seconds_since(t), 600.0);
    }
    if (wanted(4)) {
        const auto t = std::chrono::steady_clock::now();
        report_group(4, "stride and condition properties", verify_stride_condition(options), seconds_since(t), 600.0);
    }
    if (wanted(5)) {
        const auto t = std::chrono::steady_clock::now();
        report_group(5, "bookkeeping oracles", verify_bookkeeping(options), seconds_since(t), 600.0,
                     "20-epoch run, 1e-9 / 1e-6");
    }
    if (wanted(6)) {
        if (skip_demo)
            std::cout << "SKIP [6] smoothing demonstration: --skip-demo" << std::endl;
        else
            smoothing_demo(config);
    }
    if (wanted(7)) {
        const auto t = std::chrono::steady_clock::now();
        report_group(7, "mutual exclusion and determinism", verify_config_determinism(options), seconds_since(t),
                     600.0);
    }
    if (wanted(8)) {
        const auto t = std::chrono::steady_clock::now();
        report_group(8, "schedule fidelity", verify_schedule(options), seconds_since(t), 60.0,
                     "0.1 -> 0.01 at 100 -> 0.001 at 105");
    }

    std::size_t failed = 0, unexpected = 0;
    for (const auto& l : lines) {
        if (l.passed) continue;
        ++failed;
        if (std::find(known.begin(), known.end(), l.id) == known.end()) ++unexpected;
    }
    std::cout << fmt::format("{}/{} criteria passed", lines.size() - failed, lines.size());
    if (failed > unexpected) std::cout << fmt::format(" ({} known failure(s) not counted in the exit status)", failed - unexpected);
    std::cout << std::endl;
    return unexpected == 0 ? 0 : 1;
}
