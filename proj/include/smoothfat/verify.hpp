// SPDX-License-Identifier: Apache-2.0
//
// Built-in property checks run by `smoothfat verify` and the acceptance suite.
// Each property is compared against an oracle that does not reuse the code
// under test: central differences for gradients, closed forms and exhaustive
// grids for attacks, explicit recomputation for bookkeeping.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace smoothfat {

struct PropertyResult {
    std::string name;
    bool passed = false;
    double measured = 0.0;   ///< worst observed error, count or difference
    double tolerance = 0.0;  ///< pass threshold for `measured`
    std::string detail;
    double seconds = 0.0;
};

struct VerifyOptions {
    std::size_t gradient_instances = 5;    ///< random instances per differentiable op
    std::size_t box_examples = 20000;      ///< adversarial examples checked for budget and box
    std::size_t bookkeeping_epochs = 20;
    std::uint64_t seed = 7;
};

std::vector<PropertyResult> verify_gradients(const VerifyOptions& options);
std::vector<PropertyResult> verify_budget_box(const VerifyOptions& options);
std::vector<PropertyResult> verify_attack_oracles(const VerifyOptions& options);
std::vector<PropertyResult> verify_stride_condition(const VerifyOptions& options);
std::vector<PropertyResult> verify_bookkeeping(const VerifyOptions& options);
std::vector<PropertyResult> verify_config_determinism(const VerifyOptions& options);
std::vector<PropertyResult> verify_schedule(const VerifyOptions& options);

std::vector<PropertyResult> run_verify_suite(const VerifyOptions& options);

/// "PASS name  measured=... tol=...  detail".
std::string format_result(const PropertyResult& result);

}  // namespace smoothfat
