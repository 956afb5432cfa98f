// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "smoothfat/experiment.hpp"

using namespace smoothfat;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

ExperimentConfig small_experiment(const fs::path& out) {
    auto doc = nlohmann::json::parse(R"({
        "model": {"kind": "mlp", "input_shape": [6], "hidden": [8], "classes": 2},
        "data": {"kind": "blobs", "classes": 2, "per_class": 24, "test_per_class": 12, "dimension": 6},
        "attack": {"xi": 0.05},
        "train": {"epochs": 3, "batch_size": 16, "lr": 0.05, "eval_samples": 24},
        "eval": {"attacks": "clean,fgsm,pgd10", "samples": 24},
        "repeats": 2
    })");
    doc["output_dir"] = out.string();
    return parse_experiment(doc);
}

}  // namespace

TEST(Experiment, WritesEveryArtifact) {
    const auto out = fs::temp_directory_path() / "smoothfat-test-experiment";
    fs::remove_all(out);
    const auto cfg = small_experiment(out);
    const auto outcome = run_experiment(cfg);
    ASSERT_EQ(outcome.runs.size(), 2u);
    for (const char* seed : {"seed-0", "seed-1"})
        for (const char* f : {"log.csv", "best.ckpt", "final.ckpt", "summary.json"})
            EXPECT_TRUE(fs::exists(out / seed / f)) << seed << "/" << f;
    EXPECT_TRUE(fs::exists(out / "aggregate.json"));
    EXPECT_TRUE(fs::exists(out / "table.csv"));

    const auto log = slurp(out / "seed-0" / "log.csv");
    EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 4);  // header + 3 epochs

    const auto agg = nlohmann::json::parse(slurp(out / "aggregate.json"));
    EXPECT_EQ(agg.at("repeats"), 2);
    for (const char* mode : {"mbest", "mfinal", "best"}) EXPECT_TRUE(agg.contains(mode));

    const auto final_ckpt = read_checkpoint(out / "seed-1" / "final.ckpt");
    EXPECT_EQ(final_ckpt.seed, 1u);
    EXPECT_EQ(final_ckpt.epoch, 3);
    EXPECT_EQ(final_ckpt.extra.at("checkpoint"), "final");

    const auto summary = nlohmann::json::parse(slurp(out / "seed-0" / "summary.json"));
    EXPECT_EQ(summary.at("epochs"), 3);
    EXPECT_TRUE(summary.at("detector").contains("collapsed"));
}

TEST(Experiment, RerunProducesIdenticalLogs) {
    const auto a = fs::temp_directory_path() / "smoothfat-test-exp-a";
    const auto b = fs::temp_directory_path() / "smoothfat-test-exp-b";
    fs::remove_all(a);
    fs::remove_all(b);
    run_experiment(small_experiment(a));
    run_experiment(small_experiment(b));
    EXPECT_EQ(slurp(a / "seed-0" / "log.csv"), slurp(b / "seed-0" / "log.csv"));
    EXPECT_EQ(slurp(a / "seed-1" / "log.csv"), slurp(b / "seed-1" / "log.csv"));
}
