// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records primitives in execution order; every node's parents precede
// it, so backward() is a single reverse sweep that visits each node once.
// Nodes that do not require a gradient (constants and anything computed only
// from constants) are skipped during the sweep.
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "smoothfat/tensor.hpp"

namespace smoothfat::ad {

template <class T>
class Tape;

/// Handle to a node on a tape.
template <class T>
class Var {
public:
    Var() = default;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape<T>& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    const Shape& shape() const;
    std::span<const T> value() const;
    T item() const;
    bool valid() const { return tape_ != nullptr; }

private:
    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

template <class T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Records a leaf. Rejects NaN/Inf values.
    Var<T> leaf(BasicTensor<T> value, bool requires_grad = true);
    Var<T> constant(BasicTensor<T> value) { return leaf(std::move(value), false); }

    /// Records the output of a primitive. `backward` reads this node's gradient
    /// and accumulates into parents via accumulate_grad().
    Var<T> record(Shape shape, std::vector<T> value, std::vector<std::size_t> parents, BackwardFn backward);

    /// Zeroes every gradient, seeds d(root)/d(root) = 1 and sweeps in reverse.
    void backward(Var<T> root);

    /// Gradient of the last backward() root w.r.t. `v`; zeros when `v` was not reached.
    BasicTensor<T> grad(Var<T> v) const;
    BasicTensor<T> value(Var<T> v) const;

    std::span<const T> values(std::size_t id) const { return nodes_[id].value; }
    std::span<const T> node_grad(std::size_t id) const { return nodes_[id].grad; }
    const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Gradient buffer of `id` for accumulation, allocated as zeros on first use.
    /// Empty when the node does not require a gradient.
    std::span<T> accumulate_grad(std::size_t id);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Shape shape;
        std::vector<T> value;
        std::vector<T> grad;
        std::vector<std::size_t> parents;
        bool requires_grad = false;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
};

// Primitive set. Shapes are checked; mismatches throw ShapeError naming both shapes.

template <class T> Var<T> matmul(Var<T> a, Var<T> b);               // [m,k] x [k,n]
template <class T> Var<T> add(Var<T> a, Var<T> b);                  // same shape
template <class T> Var<T> sub(Var<T> a, Var<T> b);                  // same shape
template <class T> Var<T> add_row(Var<T> a, Var<T> bias);           // [m,n] + [n]
template <class T> Var<T> scale(Var<T> a, T factor);
template <class T> Var<T> add_scalar(Var<T> a, T offset);
template <class T> Var<T> relu(Var<T> a);
template <class T> Var<T> abs(Var<T> a);
template <class T> Var<T> sum(Var<T> a);                            // -> scalar
template <class T> Var<T> mean(Var<T> a);                           // -> scalar
/// Sum of c_i * a_i with constant coefficients; -> scalar.
template <class T> Var<T> weighted_sum(Var<T> a, std::span<const T> coefficients);
/// Sum of squared differences over all elements; -> scalar.
template <class T> Var<T> squared_distance(Var<T> a, Var<T> b);
/// (sum |a_i|^p)^(1/p), p >= 1; gradient 0 at the zero vector; -> scalar.
template <class T> Var<T> pnorm(Var<T> a, T p);
/// Per-row softmax cross-entropy of logits [n,k] against integer labels; -> [n].
template <class T> Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels);
/// 3x3 convolution, stride 1, zero padding 1, channels-last.
/// input [n,h,w,c], weight [9c, o] with rows ordered (ky, kx, c), bias [o] -> [n,h,w,o].
template <class T> Var<T> conv3x3(Var<T> input, Var<T> weight, Var<T> bias);
/// 2x2 mean pooling on [n,h,w,c] with even h, w.
template <class T> Var<T> mean_pool2(Var<T> input);
template <class T> Var<T> reshape(Var<T> a, Shape shape);
/// Concatenates flattened inputs into one vector.
template <class T> Var<T> concat_flat(std::span<const Var<T>> parts);

/// Central-difference check of a scalar function given as a graph builder.
/// Returns max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
template <class T>
double finite_difference_check(const std::function<Var<T>(Tape<T>&, Var<T>)>& function,
                               const BasicTensor<T>& point, double step);

/// Test fixtures for the verification suite: a deliberately broken backward.
enum class Fault { none, relu_backward_sign_flip };
void inject_fault(Fault fault);
Fault injected_fault();

}  // namespace smoothfat::ad
