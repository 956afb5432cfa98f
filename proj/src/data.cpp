// SPDX-License-Identifier: Apache-2.0
#include "smoothfat/data.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <string>

#include "smoothfat/rng.hpp"

namespace smoothfat {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError(path.string() + ": cannot open");
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

struct Reader {
    const std::vector<unsigned char>& bytes;
    const std::filesystem::path& path;
    std::size_t pos = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw DataError(path.string() + ": offset " + std::to_string(pos) + ": " + what);
    }

    std::uint32_t u32_be() {
        if (bytes.size() - pos < 4) fail("truncated header");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | bytes[pos + i];
        pos += 4;
        return v;
    }
};

void put_u32_be(std::ostream& os, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                           static_cast<char>(v)};
    os.write(bytes, 4);
}

}  // namespace

void Dataset::validate() const {
    if (labels.empty()) throw DataError("dataset is empty");
    if (images.rank() < 2 || images.shape[0] != labels.size())
        throw DataError("dataset: images " + to_string(images.shape) + " do not match " +
                        std::to_string(labels.size()) + " labels");
    if (classes < 2) throw DataError("dataset: class count must be >= 2");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
            throw DataError("dataset: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                            " outside [0, " + std::to_string(classes) + ")");
    for (float v : images.data)
        if (!(v >= 0.0f && v <= 1.0f)) throw DataError("dataset: pixel outside [0, 1]");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.classes = classes;
    Shape shape = images.shape;
    shape[0] = indices.size();
    const std::size_t stride = sample_size();
    std::vector<float> data(indices.size() * stride);
    out.labels.resize(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        std::copy_n(images.data.begin() + static_cast<std::ptrdiff_t>(indices[i] * stride), stride,
                    data.begin() + static_cast<std::ptrdiff_t>(i * stride));
        out.labels[i] = labels[indices[i]];
    }
    out.images = Tensor(std::move(shape), std::move(data));
    return out;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t classes) {
    const auto image_bytes = read_all(images);
    const auto label_bytes = read_all(labels);

    Reader ir{image_bytes, images};
    if (const auto magic = ir.u32_be(); magic != kImageMagic) {
        ir.pos = 0;
        ir.fail(fmt::format("bad magic {:#010x}, expected 0x00000803", magic));
    }
    const std::size_t count = ir.u32_be();
    const std::size_t rows = ir.u32_be();
    const std::size_t cols = ir.u32_be();
    if (count == 0 || rows == 0 || cols == 0) ir.fail("zero dimension");
    if (image_bytes.size() - ir.pos < count * rows * cols)
        ir.fail("truncated: need " + std::to_string(count * rows * cols) + " pixel bytes, have " +
                std::to_string(image_bytes.size() - ir.pos));

    Reader lr{label_bytes, labels};
    if (const auto magic = lr.u32_be(); magic != kLabelMagic) {
        lr.pos = 0;
        lr.fail(fmt::format("bad magic {:#010x}, expected 0x00000801", magic));
    }
    const std::size_t label_count = lr.u32_be();
    if (label_count != count)
        lr.fail("count mismatch: " + std::to_string(label_count) + " labels for " + std::to_string(count) + " images");
    if (label_bytes.size() - lr.pos < count) lr.fail("truncated: need " + std::to_string(count) + " label bytes");

    Dataset ds;
    ds.classes = classes;
    std::vector<float> pixels(count * rows * cols);
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<float>(image_bytes[ir.pos + i]) / 255.0f;
    ds.images = Tensor({count, rows, cols, 1}, std::move(pixels));
    ds.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const int label = label_bytes[lr.pos + i];
        if (static_cast<std::size_t>(label) >= classes) {
            lr.pos += i;
            lr.fail("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
        }
        ds.labels[i] = label;
    }
    return ds;
}

void write_idx(const Dataset& dataset, const std::filesystem::path& images, const std::filesystem::path& labels) {
    dataset.validate();
    const auto sample = dataset.sample_shape();
    std::size_t rows = 1, cols = 1;
    if (sample.size() == 3 && sample[2] == 1) {
        rows = sample[0];
        cols = sample[1];
    } else {
        cols = dataset.sample_size();
    }
    std::ofstream is(images, std::ios::binary);
    if (!is) throw DataError(images.string() + ": cannot open for writing");
    put_u32_be(is, kImageMagic);
    put_u32_be(is, static_cast<std::uint32_t>(dataset.size()));
    put_u32_be(is, static_cast<std::uint32_t>(rows));
    put_u32_be(is, static_cast<std::uint32_t>(cols));
    std::vector<char> pixels(dataset.images.size());
    for (std::size_t i = 0; i < pixels.size(); ++i)
        pixels[i] = static_cast<char>(static_cast<unsigned char>(std::lround(dataset.images.data[i] * 255.0f)));
    is.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));

    std::ofstream ls(labels, std::ios::binary);
    if (!ls) throw DataError(labels.string() + ": cannot open for writing");
    put_u32_be(ls, kLabelMagic);
    put_u32_be(ls, static_cast<std::uint32_t>(dataset.size()));
    for (int label : dataset.labels) ls.put(static_cast<char>(label));
    if (!is || !ls) throw DataError("write_idx: write failed");
}

Dataset make_blobs(std::size_t classes, std::size_t per_class, std::size_t dimension, double separation,
                   std::uint64_t seed, double noise) {
    if (!(separation > 0.0)) throw std::invalid_argument("make_blobs: separation must be positive");
    if (classes < 2 || per_class == 0 || dimension == 0) throw std::invalid_argument("make_blobs: empty dataset");
    if (dimension < 63 && (std::uint64_t{1} << dimension) < classes)
        throw std::invalid_argument("make_blobs: dimension too small for distinct class corners");

    Rng rng({seed, 0x626c6f6273ull});
    // Distinct sign patterns; two patterns differ in at least one coordinate, so centres
    // 0.5 + s * separation / 2 are at least `separation` apart.
    std::set<std::vector<int>> seen;
    std::vector<std::vector<int>> patterns;
    while (patterns.size() < classes) {
        std::vector<int> p(dimension);
        for (int& s : p) s = rng.uniform() < 0.5 ? -1 : 1;
        if (seen.insert(p).second) patterns.push_back(std::move(p));
    }

    Dataset ds;
    ds.classes = classes;
    const std::size_t n = classes * per_class;
    std::vector<float> pixels(n * dimension);
    ds.labels.resize(n);
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t i = 0; i < per_class; ++i) {
            const std::size_t row = c * per_class + i;
            ds.labels[row] = static_cast<int>(c);
            for (std::size_t d = 0; d < dimension; ++d) {
                const double v = 0.5 + patterns[c][d] * separation / 2.0 + noise * rng.normal();
                pixels[row * dimension + d] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    ds.images = Tensor({n, 1, 1, dimension}, std::move(pixels));
    return ds;
}

std::vector<std::size_t> epoch_permutation(std::size_t n, const BatchPlan& plan, int epoch) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng({plan.seed, static_cast<std::uint64_t>(epoch), 0x7065726dull});
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    return perm;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, const BatchPlan& plan, int epoch) {
    if (plan.batch_size == 0) throw std::invalid_argument("batch size must be positive");
    const auto perm = epoch_permutation(n, plan, epoch);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += plan.batch_size) {
        const std::size_t end = std::min(n, start + plan.batch_size);
        out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start), perm.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

Batch gather(const Dataset& dataset, std::vector<std::size_t> indices) {
    Dataset sub = dataset.subset(indices);
    return Batch{std::move(indices), std::move(sub.images), std::move(sub.labels)};
}

std::vector<Batch> batches(const Dataset& dataset, const BatchPlan& plan, int epoch) {
    std::vector<Batch> out;
    for (auto& idx : batch_indices(dataset.size(), plan, epoch)) out.push_back(gather(dataset, std::move(idx)));
    return out;
}

}  // namespace smoothfat
