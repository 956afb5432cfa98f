// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "smoothfat/tensor.hpp"

namespace smoothfat {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Images [n, h, w, c] with pixels in [0, 1]; labels in [0, classes).
struct Dataset {
    Tensor images;
    std::vector<int> labels;
    std::size_t classes = 0;

    std::size_t size() const { return labels.size(); }
    Shape sample_shape() const { return Shape(images.shape.begin() + 1, images.shape.end()); }
    std::size_t sample_size() const { return numel(sample_shape()); }
    void validate() const;
    Dataset subset(std::span<const std::size_t> indices) const;
};

/// Reads an IDX3 image file (magic 0x00000803) and IDX1 label file (0x00000801).
/// Bytes are scaled by 1/255. Errors carry the file name and byte offset.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t classes);

/// Writes the dataset in IDX format; pixels are rounded to the nearest byte.
void write_idx(const Dataset& dataset, const std::filesystem::path& images, const std::filesystem::path& labels);

/// Gaussian blobs around distinct corners of a hypercube centred at 0.5.
/// Class centres differ by at least `separation` in l2; noise std is `noise`.
Dataset make_blobs(std::size_t classes, std::size_t per_class, std::size_t dimension, double separation,
                   std::uint64_t seed, double noise = 0.1);

struct BatchPlan {
    std::uint64_t seed = 0;
    std::size_t batch_size = 128;
};

/// Permutation of [0, n) for an epoch; a pure function of (seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, const BatchPlan& plan, int epoch);

/// Index sets of each batch, in order. The final partial batch is kept.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, const BatchPlan& plan, int epoch);

struct Batch {
    std::vector<std::size_t> indices;
    Tensor images;
    std::vector<int> labels;
    std::size_t size() const { return labels.size(); }
};

Batch gather(const Dataset& dataset, std::vector<std::size_t> indices);

/// Materialized batches of an epoch.
std::vector<Batch> batches(const Dataset& dataset, const BatchPlan& plan, int epoch);

}  // namespace smoothfat
