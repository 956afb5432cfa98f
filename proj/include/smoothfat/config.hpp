// SPDX-License-Identifier: Apache-2.0
//
// JSON experiment configuration. Unknown keys and out-of-range values are
// errors that name the offending path, e.g. "smooth.gamma_max".
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "smoothfat/data.hpp"
#include "smoothfat/trainer.hpp"

namespace smoothfat {

class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string path, const std::string& message)
        : std::runtime_error(path.empty() ? message : path + ": " + message), path_(std::move(path)) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

enum class DataKind { idx, blobs };

struct DataConfig {
    DataKind kind = DataKind::idx;
    std::size_t classes = 10;
    // idx
    std::filesystem::path train_images, train_labels, test_images, test_labels;
    std::size_t train_limit = 0;  ///< 0 keeps every sample
    std::size_t test_limit = 0;
    // blobs
    std::size_t per_class = 100;
    std::size_t test_per_class = 100;
    std::size_t dimension = 16;
    double separation = 1.0;
    double noise = 0.1;
    std::uint64_t seed = 0;
};

struct EvalConfig {
    std::string attacks = "clean,fgsm,pgd10,pgd20,pgd50";
    std::size_t samples = 1000;
    double pgd_step = 0.0;  ///< 0 means xi / 4
};

struct ExperimentConfig {
    TrainConfig train;
    DataConfig data;
    EvalConfig eval;
    int repeats = 3;
    std::filesystem::path output_dir = "runs";
    std::vector<std::string> overrides;  ///< as given, in order
    nlohmann::json resolved;             ///< document after overrides, echoed into run summaries
};

/// Sets a dotted key ("smooth.variant") to a value. The value is parsed as JSON
/// when possible and kept as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Validates and converts a document. Relative data paths resolve against `base_dir`.
ExperimentConfig parse_experiment(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});

ExperimentConfig load_experiment(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Accepts a number or a "a/b" fraction string.
double parse_fraction(const nlohmann::json& value, const std::string& path);

Dataset load_train_data(const DataConfig& config);
Dataset load_test_data(const DataConfig& config);

}  // namespace smoothfat
