// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include "smoothfat/autodiff.hpp"
#include "smoothfat/tensor.hpp"

namespace smoothfat {

enum class ModelKind { mlp, cnn };

/// Architecture of a small classifier.
///
/// mlp: input flattened, dense layers of `hidden` widths with relu, dense -> classes.
/// cnn: one 3x3 conv + relu per entry of `channels`, two 2x2 mean pools, dense -> classes.
/// Inputs are channels-last, `input_shape` = {h, w, c}.
struct ModelSpec {
    ModelKind kind = ModelKind::mlp;
    Shape input_shape{28, 28, 1};
    std::vector<std::size_t> hidden{256};
    std::vector<std::size_t> channels{8, 16};
    std::size_t classes = 10;

    void validate() const;
    std::size_t input_size() const { return numel(input_shape); }

    static ModelSpec mlp(std::size_t inputs, std::vector<std::size_t> hidden, std::size_t classes);
    static ModelSpec cnn(Shape input_shape, std::vector<std::size_t> channels, std::size_t classes);

    bool operator==(const ModelSpec&) const = default;
};

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

template <class T>
struct NamedTensor {
    std::string name;
    BasicTensor<T> value;
};

/// Ordered parameter tensors. The flat view concatenates them in declaration order.
template <class T>
struct ModelParams {
    std::vector<NamedTensor<T>> tensors;

    std::size_t flat_size() const;
    std::vector<T> flatten() const;
    /// Overwrites values from a flat vector; rejects a length mismatch.
    void unflatten(std::span<const T> flat);

    template <class U>
    ModelParams<U> cast() const {
        ModelParams<U> out;
        for (const auto& t : tensors) out.tensors.push_back({t.name, t.value.template cast<U>()});
        return out;
    }
};

/// Declared parameter layout (names and shapes) of a spec, zero-filled.
template <class T>
ModelParams<T> zero_params(const ModelSpec& spec);

/// He-normal weights (std = sqrt(2 / fan_in)), zero biases. Deterministic in `seed`.
ModelParams<float> build_model(const ModelSpec& spec, std::uint64_t seed);

/// Parameters recorded on a tape.
template <class T>
std::vector<ad::Var<T>> bind_params(ad::Tape<T>& tape, const ModelParams<T>& params, bool requires_grad);

/// Logits [n, classes] for images [n, h, w, c] (or [n, features] for mlp).
template <class T>
ad::Var<T> forward(const ModelSpec& spec, std::span<const ad::Var<T>> params, ad::Var<T> images);

/// Logits without recording gradients, for evaluation.
Tensor predict_logits(const ModelSpec& spec, const ModelParams<float>& params, const Tensor& images);

/// Argmax per row, ties to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

struct Checkpoint {
    ModelSpec spec;
    std::uint64_t seed = 0;
    int epoch = 0;
    nlohmann::json extra = nlohmann::json::object();
    ModelParams<float> params;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// "SFATCKPT", u64 little-endian header length, JSON header, flat f32 little-endian.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace smoothfat
