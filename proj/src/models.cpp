// SPDX-License-Identifier: Apache-2.0
#include "smoothfat/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "smoothfat/rng.hpp"

namespace smoothfat {

namespace {

constexpr char kMagic[8] = {'S', 'F', 'A', 'T', 'C', 'K', 'P', 'T'};

std::size_t pooled_size(const ModelSpec& spec) {
    return (spec.input_shape[0] / 4) * (spec.input_shape[1] / 4) * spec.channels.back();
}

void put_u64_le(std::ostream& os, std::uint64_t v) {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t get_u64_le(const unsigned char* bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
}

}  // namespace

void ModelSpec::validate() const {
    if (classes < 2) throw std::invalid_argument("model: class count must be >= 2");
    if (input_shape.empty()) throw std::invalid_argument("model: empty input shape");
    for (std::size_t d : input_shape)
        if (d == 0) throw std::invalid_argument("model: input dimensions must be positive");
    if (kind == ModelKind::mlp) {
        for (std::size_t h : hidden)
            if (h == 0) throw std::invalid_argument("model: hidden widths must be positive");
    } else {
        if (input_shape.size() != 3) throw std::invalid_argument("model: cnn input shape must be {h, w, c}");
        if (input_shape[0] % 4 != 0 || input_shape[1] % 4 != 0)
            throw std::invalid_argument("model: cnn input height and width must be divisible by 4");
        if (channels.empty()) throw std::invalid_argument("model: cnn needs at least one conv layer");
        for (std::size_t c : channels)
            if (c == 0) throw std::invalid_argument("model: conv channel counts must be positive");
    }
}

ModelSpec ModelSpec::mlp(std::size_t inputs, std::vector<std::size_t> hidden, std::size_t classes) {
    ModelSpec s;
    s.kind = ModelKind::mlp;
    s.input_shape = {1, 1, inputs};
    s.hidden = std::move(hidden);
    s.classes = classes;
    s.validate();
    return s;
}

ModelSpec ModelSpec::cnn(Shape input_shape, std::vector<std::size_t> channels, std::size_t classes) {
    ModelSpec s;
    s.kind = ModelKind::cnn;
    s.input_shape = std::move(input_shape);
    s.channels = std::move(channels);
    s.classes = classes;
    s.validate();
    return s;
}

nlohmann::json to_json(const ModelSpec& spec) {
    nlohmann::json j;
    j["kind"] = spec.kind == ModelKind::mlp ? "mlp" : "cnn";
    j["input_shape"] = spec.input_shape;
    j["classes"] = spec.classes;
    if (spec.kind == ModelKind::mlp)
        j["hidden"] = spec.hidden;
    else
        j["channels"] = spec.channels;
    return j;
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
    ModelSpec s;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "mlp")
        s.kind = ModelKind::mlp;
    else if (kind == "cnn")
        s.kind = ModelKind::cnn;
    else
        throw std::invalid_argument("model: unknown kind '" + kind + "'");
    s.input_shape = j.at("input_shape").get<Shape>();
    s.classes = j.at("classes").get<std::size_t>();
    if (j.contains("hidden")) s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    if (j.contains("channels")) s.channels = j.at("channels").get<std::vector<std::size_t>>();
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------

template <class T>
std::size_t ModelParams<T>::flat_size() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.value.size();
    return n;
}

template <class T>
std::vector<T> ModelParams<T>::flatten() const {
    std::vector<T> flat;
    flat.reserve(flat_size());
    for (const auto& t : tensors) flat.insert(flat.end(), t.value.data.begin(), t.value.data.end());
    return flat;
}

template <class T>
void ModelParams<T>::unflatten(std::span<const T> flat) {
    if (flat.size() != flat_size())
        throw ShapeError("unflatten: expected " + std::to_string(flat_size()) + " values, got " +
                         std::to_string(flat.size()));
    std::size_t offset = 0;
    for (auto& t : tensors) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), t.value.size(), t.value.data.begin());
        offset += t.value.size();
    }
}

template <class T>
ModelParams<T> zero_params(const ModelSpec& spec) {
    spec.validate();
    ModelParams<T> p;
    auto add = [&](std::string name, Shape shape) { p.tensors.push_back({std::move(name), BasicTensor<T>(std::move(shape))}); };
    if (spec.kind == ModelKind::mlp) {
        std::size_t in = spec.input_size();
        for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
            add("fc" + std::to_string(i) + ".weight", {in, spec.hidden[i]});
            add("fc" + std::to_string(i) + ".bias", {spec.hidden[i]});
            in = spec.hidden[i];
        }
        add("out.weight", {in, spec.classes});
        add("out.bias", {spec.classes});
    } else {
        std::size_t in = spec.input_shape[2];
        for (std::size_t i = 0; i < spec.channels.size(); ++i) {
            add("conv" + std::to_string(i) + ".weight", {9 * in, spec.channels[i]});
            add("conv" + std::to_string(i) + ".bias", {spec.channels[i]});
            in = spec.channels[i];
        }
        add("out.weight", {pooled_size(spec), spec.classes});
        add("out.bias", {spec.classes});
    }
    return p;
}

ModelParams<float> build_model(const ModelSpec& spec, std::uint64_t seed) {
    ModelParams<float> p = zero_params<float>(spec);
    Rng rng({seed, 0x6d6f64656cull});
    for (auto& t : p.tensors) {
        if (t.value.rank() != 2) continue;  // biases stay zero
        const double stddev = std::sqrt(2.0 / static_cast<double>(t.value.shape[0]));
        for (float& v : t.value.data) v = static_cast<float>(stddev * rng.normal());
    }
    return p;
}

template <class T>
std::vector<ad::Var<T>> bind_params(ad::Tape<T>& tape, const ModelParams<T>& params, bool requires_grad) {
    std::vector<ad::Var<T>> vars;
    vars.reserve(params.tensors.size());
    for (const auto& t : params.tensors) vars.push_back(tape.leaf(t.value, requires_grad));
    return vars;
}

template <class T>
ad::Var<T> forward(const ModelSpec& spec, std::span<const ad::Var<T>> params, ad::Var<T> images) {
    const Shape& s = images.shape();
    if (s.empty() || numel(s) != s[0] * spec.input_size())
        throw ShapeError("forward: images of shape " + to_string(s) + " do not match input shape " +
                         to_string(spec.input_shape));
    const std::size_t n = s[0];
    std::size_t k = 0;
    if (spec.kind == ModelKind::mlp) {
        if (params.size() != 2 * (spec.hidden.size() + 1)) throw ShapeError("forward: wrong parameter count");
        ad::Var<T> h = s.size() == 2 ? images : ad::reshape(images, {n, spec.input_size()});
        for (std::size_t i = 0; i < spec.hidden.size(); ++i, k += 2)
            h = ad::relu(ad::add_row(ad::matmul(h, params[k]), params[k + 1]));
        return ad::add_row(ad::matmul(h, params[k]), params[k + 1]);
    }
    if (params.size() != 2 * (spec.channels.size() + 1)) throw ShapeError("forward: wrong parameter count");
    Shape image_shape{n, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
    ad::Var<T> h = s == image_shape ? images : ad::reshape(images, image_shape);
    for (std::size_t i = 0; i < spec.channels.size(); ++i, k += 2) h = ad::relu(ad::conv3x3(h, params[k], params[k + 1]));
    h = ad::mean_pool2(ad::mean_pool2(h));
    h = ad::reshape(h, {n, pooled_size(spec)});
    return ad::add_row(ad::matmul(h, params[k]), params[k + 1]);
}

Tensor predict_logits(const ModelSpec& spec, const ModelParams<float>& params, const Tensor& images) {
    ad::Tape<float> tape;
    auto vars = bind_params(tape, params, false);
    return tape.value(forward<float>(spec, vars, tape.constant(images)));
}

std::vector<int> argmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("argmax_rows: expected [n, k], got " + to_string(logits.shape));
    const std::size_t n = logits.shape[0], k = logits.shape[1];
    std::vector<int> out(n);
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
            if (logits.data[r * k + c] > logits.data[r * k + best]) best = c;
        out[r] = static_cast<int>(best);
    }
    return out;
}

// ---------------------------------------------------------------------------

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    nlohmann::json header;
    header["spec"] = to_json(checkpoint.spec);
    header["seed"] = checkpoint.seed;
    header["epoch"] = checkpoint.epoch;
    header["param_count"] = checkpoint.params.flat_size();
    if (!checkpoint.extra.empty()) header["extra"] = checkpoint.extra;
    const std::string text = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
    os.write(kMagic, sizeof kMagic);
    put_u64_le(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (float v : checkpoint.params.flatten()) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        unsigned char bytes[4];
        for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
        os.write(reinterpret_cast<const char*>(bytes), 4);
    }
    if (!os) throw CheckpointError("write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        throw CheckpointError(path.string() + ": bad magic (expected SFATCKPT)");
    const std::uint64_t header_len = get_u64_le(bytes.data() + 8);
    if (header_len > bytes.size() - 16) throw CheckpointError(path.string() + ": truncated header");
    Checkpoint ck;
    try {
        const auto header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
        ck.spec = model_spec_from_json(header.at("spec"));
        ck.seed = header.at("seed").get<std::uint64_t>();
        ck.epoch = header.at("epoch").get<int>();
        if (header.contains("extra")) ck.extra = header.at("extra");
    } catch (const std::exception& e) {
        throw CheckpointError(path.string() + ": bad header: " + e.what());
    }
    ck.params = zero_params<float>(ck.spec);
    const std::size_t offset = 16 + header_len;
    const std::size_t count = ck.params.flat_size();
    if (bytes.size() - offset != 4 * count)
        throw CheckpointError(path.string() + ": expected " + std::to_string(count) + " parameters, found " +
                              std::to_string((bytes.size() - offset) / 4));
    std::vector<float> flat(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[offset + 4 * i + b]) << (8 * b);
        flat[i] = std::bit_cast<float>(bits);
    }
    if (!all_finite<float>(flat)) throw CheckpointError(path.string() + ": non-finite parameter");
    ck.params.unflatten(flat);
    return ck;
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<float> zero_params<float>(const ModelSpec&);
template ModelParams<double> zero_params<double>(const ModelSpec&);
template std::vector<ad::Var<float>> bind_params(ad::Tape<float>&, const ModelParams<float>&, bool);
template std::vector<ad::Var<double>> bind_params(ad::Tape<double>&, const ModelParams<double>&, bool);
template ad::Var<float> forward(const ModelSpec&, std::span<const ad::Var<float>>, ad::Var<float>);
template ad::Var<double> forward(const ModelSpec&, std::span<const ad::Var<double>>, ad::Var<double>);

}  // namespace smoothfat
