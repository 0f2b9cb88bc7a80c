#pragma once

#include "twuq/errors.hpp"

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

namespace twuq::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out + "]";
}

// Dense tensor. Activations use channel-major batch layout C x N x H x W;
// convolution kernels are Co x Ci x k x k, transposed-convolution kernels
// Ci x Co x 2 x 2.
template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_size(shape), fill) {}
    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != shape_size(shape)) {
            throw DimensionError("tensor of shape " + shape_str(shape) + " given " + std::to_string(data.size()) +
                                 " values");
        }
    }

    std::size_t size() const noexcept { return data.size(); }
    std::size_t rank() const noexcept { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    T* ptr() noexcept { return data.data(); }
    const T* ptr() const noexcept { return data.data(); }

    bool operator==(const Tensor&) const = default;
};

// Activation dimensions for the C x N x H x W layout.
struct Dims4 {
    std::size_t c = 0, n = 0, h = 0, w = 0;

    std::size_t plane() const noexcept { return h * w; }
    std::size_t cols() const noexcept { return n * h * w; }  // entries per channel
};

template <class T>
Dims4 dims4(const Tensor<T>& t) {
    if (t.rank() != 4) throw DimensionError("expected a rank-4 activation, got " + shape_str(t.shape));
    return {t.shape[0], t.shape[1], t.shape[2], t.shape[3]};
}

}  // namespace twuq::nn
