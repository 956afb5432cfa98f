// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "smoothfat/config.hpp"

using namespace smoothfat;
using nlohmann::json;

namespace {

json blobs_doc() {
    return json::parse(R"({
        "model": {"kind": "mlp", "input_shape": [8], "hidden": [16], "classes": 2},
        "data": {"kind": "blobs", "classes": 2, "per_class": 20, "test_per_class": 10, "dimension": 8},
        "attack": {"xi": "16/255"},
        "smooth": {"variant": "batch", "gamma_max": 0.03},
        "train": {"epochs": 2, "batch_size": 8, "lr": 0.05}
    })");
}

std::string error_path(const json& doc) {
    try {
        parse_experiment(doc);
    } catch (const ConfigError& e) {
        return e.path();
    }
    return "<no error>";
}

}  // namespace

TEST(Config, ParsesDefaultsAndFractions) {
    const auto cfg = parse_experiment(blobs_doc());
    EXPECT_NEAR(cfg.train.attack.xi, 16.0 / 255.0, 1e-15);
    EXPECT_DOUBLE_EQ(cfg.train.attack.step, cfg.train.attack.xi);
    EXPECT_EQ(cfg.train.smooth.variant, SmoothVariant::batch);
    EXPECT_NEAR(cfg.train.smooth.gamma_min, 0.02, 1e-15);
    EXPECT_EQ(cfg.train.epochs, 2);
    EXPECT_EQ(cfg.repeats, 3);
    EXPECT_EQ(cfg.data.kind, DataKind::blobs);
}

TEST(Config, ParseFraction) {
    EXPECT_DOUBLE_EQ(parse_fraction(json(0.5), "x"), 0.5);
    EXPECT_DOUBLE_EQ(parse_fraction(json("64/255"), "x"), 64.0 / 255.0);
    EXPECT_DOUBLE_EQ(parse_fraction(json("0.25"), "x"), 0.25);
    EXPECT_THROW(parse_fraction(json("1/0"), "x"), ConfigError);
    EXPECT_THROW(parse_fraction(json("abc"), "x"), ConfigError);
    EXPECT_THROW(parse_fraction(json(true), "x"), ConfigError);
}

TEST(Config, UnknownKeysAndBadValuesNameTheirPath) {
    auto doc = blobs_doc();
    doc["smooth"]["gamma_maxx"] = 1;
    EXPECT_EQ(error_path(doc), "smooth.gamma_maxx");
    doc = blobs_doc();
    doc["train"]["epochs"] = "ten";
    EXPECT_EQ(error_path(doc), "train.epochs");
    doc = blobs_doc();
    doc["smooth"]["variant"] = "sideways";
    EXPECT_EQ(error_path(doc), "smooth.variant");
    doc = blobs_doc();
    doc.erase("data");
    EXPECT_EQ(error_path(doc), "data");
    doc = blobs_doc();
    doc["model"]["classes"] = 3;
    EXPECT_EQ(error_path(doc), "model.classes");
    doc = blobs_doc();
    doc["data"]["dimension"] = 9;
    EXPECT_EQ(error_path(doc), "model.input_shape");
    doc = blobs_doc();
    doc["eval"] = {{"attacks", "clean,cw"}};
    EXPECT_EQ(error_path(doc), "eval.attacks");
}

TEST(Config, CentralizationAndMepRegularizerAreMutuallyExclusive) {
    auto doc = blobs_doc();
    doc["smooth"]["centralization"] = true;
    doc["smooth"]["mep_logit_weight"] = 0.5;
    EXPECT_EQ(error_path(doc), "smooth");
    doc["smooth"]["mep_logit_weight"] = 0.0;
    EXPECT_NO_THROW(parse_experiment(doc));
}

TEST(Config, GammaRatio) {
    auto doc = blobs_doc();
    doc["smooth"]["gamma_ratio"] = 2.0;
    EXPECT_NEAR(parse_experiment(doc).train.smooth.gamma_min, 0.015, 1e-15);
    doc["smooth"]["gamma_min"] = 0.01;
    EXPECT_EQ(error_path(doc), "smooth.gamma_ratio");
}

TEST(Config, OverridesParseJsonOrKeepStrings) {
    auto doc = blobs_doc();
    apply_override(doc, "smooth.variant=none");
    apply_override(doc, "train.epochs=5");
    apply_override(doc, "train.lr_decay_epochs=[3,4]");
    apply_override(doc, "attack.xi=8/255");
    EXPECT_EQ(doc["smooth"]["variant"], "none");
    EXPECT_EQ(doc["train"]["epochs"], 5);
    const auto cfg = parse_experiment(doc);
    EXPECT_EQ(cfg.train.lr_decay_epochs, (std::vector<int>{3, 4}));
    EXPECT_NEAR(cfg.train.attack.xi, 8.0 / 255.0, 1e-15);
    EXPECT_THROW(apply_override(doc, "novalue"), ConfigError);
    EXPECT_THROW(apply_override(doc, "a..b=1"), ConfigError);
}

TEST(Config, BlobsTrainAndTestShareCentersButDiffer) {
    const auto cfg = parse_experiment(blobs_doc());
    const auto train = load_train_data(cfg.data);
    const auto test = load_test_data(cfg.data);
    EXPECT_EQ(train.size(), 40u);
    EXPECT_EQ(test.size(), 20u);
    EXPECT_NE(train.images.data, std::vector<float>(test.images.data.begin(), test.images.data.end()));
}

TEST(Config, LoadResolvesRelativePathsAgainstConfigDir) {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "smoothfat-test-config";
    fs::create_directories(dir);
    json doc = json::parse(R"({
        "model": {"kind": "cnn", "input_shape": [28, 28, 1], "channels": [8, 16], "classes": 2},
        "data": {"classes": 2, "train_images": "a", "train_labels": "b", "test_images": "c", "test_labels": "d"},
        "output_dir": "out"
    })");
    std::ofstream(dir / "exp.json") << doc.dump();
    const auto cfg = load_experiment(dir / "exp.json", {"repeats=1"});
    EXPECT_EQ(cfg.data.train_images, dir / "a");
    EXPECT_EQ(cfg.output_dir, dir / "out");
    EXPECT_EQ(cfg.repeats, 1);
    EXPECT_EQ(cfg.overrides, (std::vector<std::string>{"repeats=1"}));
    EXPECT_THROW(load_experiment(dir / "missing.json"), ConfigError);
}
