#pragma once

#include <cstdint>
#include <string>

#include "hformer/tensor.hpp"

namespace hformer::detail {

inline int normalize_axis(int axis, int rank, const char* op) {
    int ax = axis < 0 ? axis + rank : axis;
    if (ax < 0 || ax >= rank) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
    }
    return ax;
}

// Factorization of a shape around one axis: flat index = (o * n + p) * inner + i
// with o < outer, p < n (position along the axis), i < inner.
struct AxisSplit {
    int64_t outer = 1;
    int64_t n = 1;
    int64_t inner = 1;
};

inline AxisSplit split_at(const Shape& shape, int axis) {
    AxisSplit s;
    for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<size_t>(i)];
    s.n = shape[static_cast<size_t>(axis)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

inline bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

} // namespace hformer::detail
