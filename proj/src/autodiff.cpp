// SPDX-License-Identifier: Apache-2.0
#include "smoothfat/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <memory>

namespace smoothfat::ad {

namespace {

std::atomic<Fault> g_fault{Fault::none};

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
ConstMapMat<T> as_matrix(std::span<const T> data, std::size_t rows, std::size_t cols) {
    return ConstMapMat<T>(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <class T>
MapMat<T> as_matrix(std::span<T> data, std::size_t rows, std::size_t cols) {
    return MapMat<T>(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <class T>
void same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (!a.valid() || !b.valid() || &a.tape() != &b.tape())
        throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

template <class T>
void require_finite(std::span<const T> values, const char* op) {
    if (!all_finite(values)) throw NonFiniteError(std::string(op) + ": non-finite value");
}

template <class T>
T sign_of(T v) {
    return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0});
}

}  // namespace

void inject_fault(Fault fault) { g_fault.store(fault); }
Fault injected_fault() { return g_fault.load(); }

// ---------------------------------------------------------------------------
// Var / Tape

template <class T>
const Shape& Var<T>::shape() const {
    return tape_->shape(id_);
}

template <class T>
std::span<const T> Var<T>::value() const {
    return tape_->values(id_);
}

template <class T>
T Var<T>::item() const {
    auto v = value();
    if (v.size() != 1) throw ShapeError("item() on non-scalar node of shape " + to_string(shape()));
    return v[0];
}

template <class T>
Var<T> Tape<T>::leaf(BasicTensor<T> value, bool requires_grad) {
    require_finite<T>(value.data, "leaf");
    Node node;
    node.shape = std::move(value.shape);
    node.value = std::move(value.data);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var<T>(this, nodes_.size() - 1);
}

template <class T>
Var<T> Tape<T>::record(Shape shape, std::vector<T> value, std::vector<std::size_t> parents, BackwardFn backward) {
    Node node;
    node.requires_grad = std::any_of(parents.begin(), parents.end(),
                                     [this](std::size_t p) { return nodes_[p].requires_grad; });
    node.shape = std::move(shape);
    node.value = std::move(value);
    node.parents = std::move(parents);
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var<T>(this, nodes_.size() - 1);
}

template <class T>
std::span<T> Tape<T>::accumulate_grad(std::size_t id) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return {};
    if (node.grad.empty()) node.grad.assign(node.value.size(), T{0});
    return node.grad;
}

template <class T>
void Tape<T>::backward(Var<T> root) {
    if (&root.tape() != this) throw std::invalid_argument("backward: root belongs to another tape");
    if (nodes_[root.id()].value.size() != 1)
        throw ShapeError("backward: root must be scalar, got shape " + to_string(nodes_[root.id()].shape));
    for (Node& node : nodes_) node.grad.clear();
    if (!nodes_[root.id()].requires_grad) return;
    nodes_[root.id()].grad.assign(1, T{1});
    for (std::size_t id = root.id() + 1; id-- > 0;) {
        Node& node = nodes_[id];
        if (node.grad.empty() || !node.backward) continue;
        node.backward(*this, id);
    }
}

template <class T>
BasicTensor<T> Tape<T>::grad(Var<T> v) const {
    const Node& node = nodes_[v.id()];
    if (node.grad.empty()) return BasicTensor<T>(node.shape, std::vector<T>(node.value.size(), T{0}));
    return BasicTensor<T>(node.shape, node.grad);
}

template <class T>
BasicTensor<T> Tape<T>::value(Var<T> v) const {
    const Node& node = nodes_[v.id()];
    return BasicTensor<T>(node.shape, node.value);
}

// ---------------------------------------------------------------------------
// Primitives

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    same_tape(a, b, "matmul");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) shape_mismatch("matmul", sa, sb);
    const std::size_t m = sa[0], k = sa[1], n = sb[1];
    std::vector<T> out(m * n);
    as_matrix<T>(std::span<T>(out), m, n).noalias() = as_matrix(a.value(), m, k) * as_matrix(b.value(), k, n);
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record({m, n}, std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape<T>& t, std::size_t self) {
        auto g = as_matrix(t.node_grad(self), m, n);
        if (auto ga = t.accumulate_grad(ia); !ga.empty())
            as_matrix(ga, m, k).noalias() += g * as_matrix(t.values(ib), k, n).transpose();
        if (auto gb = t.accumulate_grad(ib); !gb.empty())
            as_matrix(gb, k, n).noalias() += as_matrix(t.values(ia), m, k).transpose() * g;
    });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    same_tape(a, b, "add");
    if (a.shape() != b.shape()) shape_mismatch("add", a.shape(), b.shape());
    auto va = a.value();
    auto vb = b.value();
    std::vector<T> out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(a.shape(), std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
        auto g = t.node_grad(self);
        for (std::size_t p : {ia, ib})
            if (auto gp = t.accumulate_grad(p); !gp.empty())
                for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
    same_tape(a, b, "sub");
    if (a.shape() != b.shape()) shape_mismatch("sub", a.shape(), b.shape());
    auto va = a.value();
    auto vb = b.value();
    std::vector<T> out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(a.shape(), std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
        auto g = t.node_grad(self);
        if (auto ga = t.accumulate_grad(ia); !ga.empty())
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        if (auto gb = t.accumulate_grad(ib); !gb.empty())
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
}

template <class T>
Var<T> add_row(Var<T> a, Var<T> bias) {
    same_tape(a, bias, "add_row");
    const Shape& sa = a.shape();
    const Shape& sb = bias.shape();
    if (sa.size() != 2 || sb.size() != 1 || sa[1] != sb[0]) shape_mismatch("add_row", sa, sb);
    const std::size_t m = sa[0], n = sa[1];
    auto va = a.value();
    auto vb = bias.value();
    std::vector<T> out(m * n);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) out[r * n + c] = va[r * n + c] + vb[c];
    const std::size_t ia = a.id(), ib = bias.id();
    return a.tape().record(sa, std::move(out), {ia, ib}, [ia, ib, m, n](Tape<T>& t, std::size_t self) {
        auto g = t.node_grad(self);
        if (auto ga = t.accumulate_grad(ia); !ga.empty())
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        if (auto gb = t.accumulate_grad(ib); !gb.empty())
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
    });
}

template <class T>
Var<T> scale(Var<T> a, T factor) {
    auto va = a.value();
    std::vector<T> out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * va[i];
    const std::size_t ia = a.id();
    return a.tape().record(a.shape(), std::move(out), {ia}, [ia, factor](Tape<T>& t, std::size_t self) {
        auto g = t.node_grad(self);
        auto ga = t.accumulate_grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
    });
}

template <class T>
Var<T> add_scalar(Var<T> a, T offset) {
    auto va = a.value();
    std::vector<T> out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + offset;
    const std::size_t ia = a.id();
    return a.tape().record(a.shape(), std::move(out), {ia}, [ia](Tape<T>& t, std::size_t self) {
        auto g = t.node_grad(self);
        auto ga = t.accumulate_grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

template <class T>
Var<T> relu(Var<T> a) {
    auto va = a.value();
    std::vector<T> out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] > T{0} ? va[i] : T{0};
    const std::size_t ia = a.id();
    return a.tape().record(a.shape(), std::move(out), {ia}, [ia](Tape<T>& t, std::size_t self) {
        auto g = t.node_grad(self);
        auto x = t.values(ia);
        auto ga = t.accumulate_grad(ia);
        const T flip = injected_fault() == Fault::relu_backward_sign_flip ? T{-1} : T{1};
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > T{0}) ga[i] += flip * g[i];
    });
}

template <class T>
Var<T> abs(Var<T> a) {
    auto va = a.value();
    std::vector<T> out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(va[i]);
    const std::size_t ia = a.id();
    return a.tape().record(a.shape(), std::move(out), {ia}, [ia](Tape<T>& t, std::size_t self) {
        auto g = t.node_grad(self);
        auto x = t.values(ia);
        auto ga = t.accumulate_grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += sign_of(x[i]) * g[i];
    });
}

template <class T>
Var<T> sum(Var<T> a) {
    auto va = a.value();
    T total{0};
    for (T v : va) total += v;
    require_finite<T>(std::span<const T>(&total, 1), "sum");
    const std::size_t ia = a.id();
    return a.tape().record({}, {total}, {ia}, [ia](Tape<T>& t, std::size_t self) {
        const T g = t.node_grad(self)[0];
        for (T& v : t.accumulate_grad(ia)) v += g;
    });
}

template <class T>
Var<T> mean(Var<T> a) {
    auto va = a.value();
    T total{0};
    for (T v : va) total += v;
    const T inv = T{1} / static_cast<T>(va.size());
    total *= inv;
    require_finite<T>(std::span<const T>(&total, 1), "mean");
    const std::size_t ia = a.id();
    return a.tape().record({}, {total}, {ia}, [ia, inv](Tape<T>& t, std::size_t self) {
        const T g = t.node_grad(self)[0] * inv;
        for (T& v : t.accumulate_grad(ia)) v += g;
    });
}

template <class T>
Var<T> weighted_sum(Var<T> a, std::span<const T> coefficients) {
    auto va = a.value();
    if (coefficients.size() != va.size())
        shape_mismatch("weighted_sum", a.shape(), Shape{coefficients.size()});
    T total{0};
    for (std::size_t i = 0; i < va.size(); ++i) total += coefficients[i] * va[i];
    require_finite<T>(std::span<const T>(&total, 1), "weighted_sum");
    const std::size_t ia = a.id();
    std::vector<T> coef(coefficients.begin(), coefficients.end());
    return a.tape().record({}, {total}, {ia}, [ia, coef = std::move(coef)](Tape<T>& t, std::size_t self) {
        const T g = t.node_grad(self)[0];
        auto ga = t.accumulate_grad(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += coef[i] * g;
    });
}

template <class T>
Var<T> squared_distance(Var<T> a, Var<T> b) {
    same_tape(a, b, "squared_distance");
    if (a.shape() != b.shape()) shape_mismatch("squared_distance", a.shape(), b.shape());
    auto va = a.value();
    auto vb = b.value();
    T total{0};
    for (std::size_t i = 0; i < va.size(); ++i) {
        const T d = va[i] - vb[i];
        total += d * d;
    }
    require_finite<T>(std::span<const T>(&total, 1), "squared_distance");
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record({}, {total}, {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
        const T g = t.node_grad(self)[0];
        auto xa = t.values(ia);
        auto xb = t.values(ib);
        if (auto ga = t.accumulate_grad(ia); !ga.empty())
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += T{2} * (xa[i] - xb[i]) * g;
        if (auto gb = t.accumulate_grad(ib); !gb.empty())
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= T{2} * (xa[i] - xb[i]) * g;
    });
}

template <class T>
Var<T> pnorm(Var<T> a, T p) {
    if (!(p >= T{1})) throw std::invalid_argument("pnorm: p must be >= 1");
    auto va = a.value();
    T total{0};
    for (T v : va) total += p == T{2} ? v * v : std::pow(std::abs(v), p);
    const T norm = p == T{2} ? std::sqrt(total) : std::pow(total, T{1} / p);
    require_finite<T>(std::span<const T>(&norm, 1), "pnorm");
    const std::size_t ia = a.id();
    return a.tape().record({}, {norm}, {ia}, [ia, p, norm](Tape<T>& t, std::size_t self) {
        if (norm == T{0}) return;
        const T g = t.node_grad(self)[0];
        auto x = t.values(ia);
        auto ga = t.accumulate_grad(ia);
        if (p == T{2}) {
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * x[i] / norm;
        } else {
            const T denom = std::pow(norm, p - T{1});
            for (std::size_t i = 0; i < ga.size(); ++i)
                ga[i] += g * sign_of(x[i]) * std::pow(std::abs(x[i]), p - T{1}) / denom;
        }
    });
}

template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
    const Shape& s = logits.shape();
    if (s.size() != 2 || s[0] != labels.size()) shape_mismatch("softmax_cross_entropy", s, Shape{labels.size()});
    const std::size_t n = s[0], k = s[1];
    auto z = logits.value();
    auto probs = std::make_shared<std::vector<T>>(n * k);
    std::vector<int> y(labels.begin(), labels.end());
    std::vector<T> out(n);
    for (std::size_t r = 0; r < n; ++r) {
        if (y[r] < 0 || static_cast<std::size_t>(y[r]) >= k)
            throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(y[r]) + " outside [0, " +
                                    std::to_string(k) + ")");
        const T* row = z.data() + r * k;
        T mx = row[0];
        for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, row[c]);
        T denom{0};
        for (std::size_t c = 0; c < k; ++c) {
            const T e = std::exp(row[c] - mx);
            (*probs)[r * k + c] = e;
            denom += e;
        }
        for (std::size_t c = 0; c < k; ++c) (*probs)[r * k + c] /= denom;
        out[r] = mx + std::log(denom) - row[y[r]];
    }
    require_finite<T>(out, "softmax_cross_entropy");
    const std::size_t il = logits.id();
    return logits.tape().record({n}, std::move(out), {il},
                                [il, n, k, probs, y = std::move(y)](Tape<T>& t, std::size_t self) {
                                    auto g = t.node_grad(self);
                                    auto gl = t.accumulate_grad(il);
                                    for (std::size_t r = 0; r < n; ++r) {
                                        for (std::size_t c = 0; c < k; ++c)
                                            gl[r * k + c] += g[r] * (*probs)[r * k + c];
                                        gl[r * k + static_cast<std::size_t>(y[r])] -= g[r];
                                    }
                                });
}

// Zero-padded copy of samples [b0, b0 + count) of an NHWC input, shape [count, h+2, w+2, c].
template <class T>
void pad1(const T* x, std::size_t b0, std::size_t count, std::size_t h, std::size_t w, std::size_t c, T* padded) {
    const std::size_t pw = (w + 2) * c;
    std::fill(padded, padded + count * (h + 2) * pw, T{0});
    for (std::size_t b = 0; b < count; ++b)
        for (std::size_t yy = 0; yy < h; ++yy) {
            const T* src = x + ((b0 + b) * h + yy) * w * c;
            std::copy(src, src + w * c, padded + (b * (h + 2) + yy + 1) * pw + c);
        }
}

// One 9c-wide row per output pixel; each kernel row is a contiguous 3c strip of the padded input.
template <class T>
void im2col3x3(const T* padded, std::size_t count, std::size_t h, std::size_t w, std::size_t c, T* cols) {
    const std::size_t pw = (w + 2) * c, strip = 3 * c;
    for (std::size_t b = 0; b < count; ++b)
        for (std::size_t yy = 0; yy < h; ++yy)
            for (std::size_t xx = 0; xx < w; ++xx) {
                T* dst = cols + ((b * h + yy) * w + xx) * 9 * c;
                const T* src = padded + (b * (h + 2) + yy) * pw + xx * c;
                for (std::size_t ky = 0; ky < 3; ++ky) std::copy(src + ky * pw, src + ky * pw + strip, dst + ky * strip);
            }
}

template <class T>
void col2im3x3(const T* cols, std::size_t b0, std::size_t count, std::size_t h, std::size_t w, std::size_t c, T* padded,
               T* gx) {
    const std::size_t pw = (w + 2) * c, strip = 3 * c;
    std::fill(padded, padded + count * (h + 2) * pw, T{0});
    for (std::size_t b = 0; b < count; ++b)
        for (std::size_t yy = 0; yy < h; ++yy)
            for (std::size_t xx = 0; xx < w; ++xx) {
                const T* src = cols + ((b * h + yy) * w + xx) * 9 * c;
                T* dst = padded + (b * (h + 2) + yy) * pw + xx * c;
                for (std::size_t ky = 0; ky < 3; ++ky)
                    for (std::size_t k = 0; k < strip; ++k) dst[ky * pw + k] += src[ky * strip + k];
            }
    for (std::size_t b = 0; b < count; ++b)
        for (std::size_t yy = 0; yy < h; ++yy) {
            const T* src = padded + (b * (h + 2) + yy + 1) * pw + c;
            T* dst = gx + ((b0 + b) * h + yy) * w * c;
            for (std::size_t k = 0; k < w * c; ++k) dst[k] += src[k];
        }
}

// Samples per im2col chunk, sized so a chunk's columns stay near 1 MiB.
inline std::size_t conv_chunk(std::size_t n, std::size_t pixels, std::size_t kdim, std::size_t elem) {
    const std::size_t per_sample = std::max<std::size_t>(1, pixels * kdim * elem);
    return std::clamp<std::size_t>((std::size_t{1} << 20) / per_sample, 1, n);
}

template <class T>
Var<T> conv3x3(Var<T> input, Var<T> weight, Var<T> bias) {
    same_tape(input, weight, "conv3x3");
    same_tape(input, bias, "conv3x3");
    const Shape& si = input.shape();
    const Shape& sw = weight.shape();
    if (si.size() != 4) shape_mismatch("conv3x3", si, sw);
    const std::size_t n = si[0], h = si[1], w = si[2], c = si[3];
    if (sw.size() != 2 || sw[0] != 9 * c) shape_mismatch("conv3x3", si, sw);
    const std::size_t o = sw[1];
    if (bias.shape() != Shape{o}) shape_mismatch("conv3x3", sw, bias.shape());
    const std::size_t pixels = h * w, kdim = 9 * c;
    const std::size_t chunk = conv_chunk(n, pixels, kdim, sizeof(T));

    std::vector<T> out(n * pixels * o);
    {
        std::vector<T> cols(chunk * pixels * kdim), padded(chunk * (h + 2) * (w + 2) * c);
        auto x = input.value();
        auto wm = as_matrix(weight.value(), kdim, o);
        auto bv = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value().data(),
                                                                        static_cast<Eigen::Index>(o));
        for (std::size_t b0 = 0; b0 < n; b0 += chunk) {
            const std::size_t cnt = std::min(chunk, n - b0), rows = cnt * pixels;
            pad1(x.data(), b0, cnt, h, w, c, padded.data());
            im2col3x3(padded.data(), cnt, h, w, c, cols.data());
            auto om = as_matrix<T>(std::span<T>(out.data() + b0 * pixels * o, rows * o), rows, o);
            om.noalias() = as_matrix<T>(std::span<const T>(cols.data(), rows * kdim), rows, kdim) * wm;
            om.rowwise() += bv;
        }
    }

    const std::size_t ii = input.id(), iw = weight.id(), ib = bias.id();
    return input.tape().record(
        {n, h, w, o}, std::move(out), {ii, iw, ib},
        [ii, iw, ib, n, h, w, c, o, pixels, kdim, chunk](Tape<T>& t, std::size_t self) {
            auto gs = t.node_grad(self);
            if (auto gb = t.accumulate_grad(ib); !gb.empty())
                for (std::size_t r = 0; r < n * pixels; ++r)
                    for (std::size_t j = 0; j < o; ++j) gb[j] += gs[r * o + j];
            auto gw = t.accumulate_grad(iw);
            auto gi = t.accumulate_grad(ii);
            if (gw.empty() && gi.empty()) return;
            auto x = t.values(ii);
            auto wm = as_matrix(t.values(iw), kdim, o);
            std::vector<T> cols(chunk * pixels * kdim), padded(chunk * (h + 2) * (w + 2) * c);
            for (std::size_t b0 = 0; b0 < n; b0 += chunk) {
                const std::size_t cnt = std::min(chunk, n - b0), rows = cnt * pixels;
                auto g = as_matrix<T>(std::span<const T>(gs.data() + b0 * pixels * o, rows * o), rows, o);
                auto cm = as_matrix<T>(std::span<T>(cols.data(), rows * kdim), rows, kdim);
                if (!gw.empty()) {
                    pad1(x.data(), b0, cnt, h, w, c, padded.data());
                    im2col3x3(padded.data(), cnt, h, w, c, cols.data());
                    as_matrix(gw, kdim, o).noalias() += cm.transpose() * g;
                }
                if (!gi.empty()) {
                    cm.noalias() = g * wm.transpose();
                    col2im3x3(cols.data(), b0, cnt, h, w, c, padded.data(), gi.data());
                }
            }
        });
}

template <class T>
Var<T> mean_pool2(Var<T> input) {
    const Shape& s = input.shape();
    if (s.size() != 4 || s[1] % 2 != 0 || s[2] % 2 != 0)
        throw ShapeError("mean_pool2: expected [n,h,w,c] with even h and w, got " + to_string(s));
    const std::size_t n = s[0], h = s[1], w = s[2], c = s[3];
    const std::size_t oh = h / 2, ow = w / 2;
    auto x = input.value();
    std::vector<T> out(n * oh * ow * c, T{0});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t yy = 0; yy < oh; ++yy)
            for (std::size_t xx = 0; xx < ow; ++xx) {
                T* dst = out.data() + ((b * oh + yy) * ow + xx) * c;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const T* src = x.data() + ((b * h + 2 * yy + dy) * w + 2 * xx + dx) * c;
                        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                    }
                for (std::size_t ch = 0; ch < c; ++ch) dst[ch] *= T{0.25};
            }
    const std::size_t ii = input.id();
    return input.tape().record({n, oh, ow, c}, std::move(out), {ii},
                               [ii, n, h, w, c, oh, ow](Tape<T>& t, std::size_t self) {
                                   auto g = t.node_grad(self);
                                   auto gi = t.accumulate_grad(ii);
                                   for (std::size_t b = 0; b < n; ++b)
                                       for (std::size_t yy = 0; yy < oh; ++yy)
                                           for (std::size_t xx = 0; xx < ow; ++xx) {
                                               const T* src = g.data() + ((b * oh + yy) * ow + xx) * c;
                                               for (std::size_t dy = 0; dy < 2; ++dy)
                                                   for (std::size_t dx = 0; dx < 2; ++dx) {
                                                       T* dst = gi.data() + ((b * h + 2 * yy + dy) * w + 2 * xx + dx) * c;
                                                       for (std::size_t ch = 0; ch < c; ++ch)
                                                           dst[ch] += T{0.25} * src[ch];
                                                   }
                                           }
                               });
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
    if (numel(shape) != a.value().size()) shape_mismatch("reshape", a.shape(), shape);
    auto va = a.value();
    std::vector<T> out(va.begin(), va.end());
    const std::size_t ia = a.id();
    return a.tape().record(std::move(shape), std::move(out), {ia}, [ia](Tape<T>& t, std::size_t self) {
        auto g = t.node_grad(self);
        auto ga = t.accumulate_grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

template <class T>
Var<T> concat_flat(std::span<const Var<T>> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_flat: no inputs");
    std::vector<T> out;
    std::vector<std::size_t> ids;
    for (const Var<T>& p : parts) {
        same_tape(parts.front(), p, "concat_flat");
        auto v = p.value();
        out.insert(out.end(), v.begin(), v.end());
        ids.push_back(p.id());
    }
    const std::size_t total = out.size();
    return parts.front().tape().record({total}, std::move(out), ids, [ids](Tape<T>& t, std::size_t self) {
        auto g = t.node_grad(self);
        std::size_t offset = 0;
        for (std::size_t id : ids) {
            const std::size_t len = t.values(id).size();
            if (auto gp = t.accumulate_grad(id); !gp.empty())
                for (std::size_t i = 0; i < len; ++i) gp[i] += g[offset + i];
            offset += len;
        }
    });
}

// ---------------------------------------------------------------------------

template <class T>
double finite_difference_check(const std::function<Var<T>(Tape<T>&, Var<T>)>& function,
                               const BasicTensor<T>& point, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_difference_check: step must be positive");
    Tape<T> tape;
    Var<T> x = tape.leaf(point, true);
    Var<T> root = function(tape, x);
    tape.backward(root);
    const BasicTensor<T> analytic = tape.grad(x);

    auto evaluate = [&](const BasicTensor<T>& at) {
        Tape<T> t;
        return static_cast<double>(function(t, t.leaf(at, true)).item());
    };
    double worst = 0.0;
    BasicTensor<T> probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const T original = probe.data[i];
        probe.data[i] = original + static_cast<T>(step);
        const double up = evaluate(probe);
        probe.data[i] = original - static_cast<T>(step);
        const double down = evaluate(probe);
        probe.data[i] = original;
        const double numeric = (up - down) / (2.0 * step);
        const double a = static_cast<double>(analytic.data[i]);
        worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
    return worst;
}

#define SMOOTHFAT_INSTANTIATE(T)                                                                     \
    template class Var<T>;                                                                           \
    template class Tape<T>;                                                                          \
    template Var<T> matmul(Var<T>, Var<T>);                                                          \
    template Var<T> add(Var<T>, Var<T>);                                                             \
    template Var<T> sub(Var<T>, Var<T>);                                                             \
    template Var<T> add_row(Var<T>, Var<T>);                                                         \
    template Var<T> scale(Var<T>, T);                                                                \
    template Var<T> add_scalar(Var<T>, T);                                                           \
    template Var<T> relu(Var<T>);                                                                    \
    template Var<T> abs(Var<T>);                                                                     \
    template Var<T> sum(Var<T>);                                                                     \
    template Var<T> mean(Var<T>);                                                                    \
    template Var<T> weighted_sum(Var<T>, std::span<const T>);                                        \
    template Var<T> squared_distance(Var<T>, Var<T>);                                                \
    template Var<T> pnorm(Var<T>, T);                                                                \
    template Var<T> softmax_cross_entropy(Var<T>, std::span<const int>);                             \
    template Var<T> conv3x3(Var<T>, Var<T>, Var<T>);                                                 \
    template Var<T> mean_pool2(Var<T>);                                                              \
    template Var<T> reshape(Var<T>, Shape);                                                          \
    template Var<T> concat_flat(std::span<const Var<T>>);                                            \
    template double finite_difference_check(const std::function<Var<T>(Tape<T>&, Var<T>)>&,         \
                                            const BasicTensor<T>&, double);

SMOOTHFAT_INSTANTIATE(float)
SMOOTHFAT_INSTANTIATE(double)

#undef SMOOTHFAT_INSTANTIATE

}  // namespace smoothfat::ad
