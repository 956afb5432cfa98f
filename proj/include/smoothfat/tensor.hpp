// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace smoothfat {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

template <class T>
bool all_finite(std::span<const T> values) {
    for (T v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

/// Dense row-major array. The shape product always equals the data length.
template <class T>
struct BasicTensor {
    Shape shape;
    std::vector<T> data;

    BasicTensor() = default;

    explicit BasicTensor(Shape s) : shape(std::move(s)), data(numel(shape), T{0}) { check_shape(); }

    BasicTensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (numel(shape) != data.size())
            throw ShapeError("tensor shape " + to_string(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
        check_shape();
    }

    static BasicTensor scalar(T v) { return BasicTensor(Shape{}, std::vector<T>{v}); }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    T& operator[](std::size_t i) { return data[i]; }
    T operator[](std::size_t i) const { return data[i]; }
    T item() const {
        if (data.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape));
        return data[0];
    }

    template <class U>
    BasicTensor<U> cast() const {
        return BasicTensor<U>(shape, std::vector<U>(data.begin(), data.end()));
    }

    bool operator==(const BasicTensor&) const = default;

private:
    void check_shape() const {
        for (std::size_t d : shape)
            if (d == 0) throw ShapeError("zero-sized dimension in shape " + to_string(shape));
    }
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

}  // namespace smoothfat
