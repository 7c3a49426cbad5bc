#pragma once

#include <span>
#include <utility>
#include <vector>

#include "hformer/tensor.hpp"

namespace hformer {

// ---------------------------------------------------------------------------
// Elementwise / scalar
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
// Multiplies x by a single-element tensor; gradient flows to both.
Tensor scale_by(const Tensor& x, const Tensor& s);

Tensor neg(const Tensor& x);
// Clamps into [0,1]. Display-referred utility for synthesis and inference;
// carries no gradient and must not sit inside a recorded loss path.
Tensor clamp01(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// Elementwise Huber with threshold 1: 0.5 x^2 for |x| < 1, |x| - 0.5 beyond.
Tensor huber(const Tensor& x);

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// Batched contraction over the last two axes: [..,M,K] x [..,K,N] -> [..,M,N].
// Leading batch dimensions broadcast (equal or 1).
Tensor matmul(const Tensor& a, const Tensor& b);

// Shift-invariant softmax along `axis`; slices sum to 1.
Tensor softmax(const Tensor& x, int axis);

// Normalizes along `axis` to zero mean and unit variance, then applies the
// per-coordinate affine gamma/beta (each of length shape[axis]).
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int axis,
                 double eps = 1e-6);

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, std::vector<int> perm);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor slice_axis(const Tensor& x, int axis, int64_t start, int64_t len);
// Adds bias (length = last dimension) to every row of x.
Tensor add_bias_rows(const Tensor& x, const Tensor& bias);
// Extends `axis` by repeating the final slice `count` times.
Tensor pad_repeat_last(const Tensor& x, int axis, int64_t count);

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---------------------------------------------------------------------------
// Image ops (feature maps are [C,H,W])
// ---------------------------------------------------------------------------

// 1x1 convolution: weight [C_out,C_in], bias [C_out].
Tensor conv2d_pointwise(const Tensor& x, const Tensor& weight, const Tensor& bias);
// Depthwise k x k convolution, zero same-padding, stride 1 or 2.
// weight [C,k,k], bias [C], k in {1,3,5,7}.
Tensor conv2d_depthwise(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        int stride = 1);

// Bilinear resampling by a factor of exactly 2.
Tensor bilinear_up2(const Tensor& x);
Tensor bilinear_down2(const Tensor& x);

// 2-D DFT of each channel via radix-2 FFT; output [C,2,H,W] with plane 0
// holding the real part and plane 1 the imaginary part. H and W must be
// powers of two.
Tensor fft2_realimag(const Tensor& x);

// ---------------------------------------------------------------------------
// Sorting / gathering
// ---------------------------------------------------------------------------

// Per-slice permutation along one axis, as produced by a stable ascending
// sort. order[i] is the source position of the element now at position i.
struct SortIndex {
    Shape shape;
    int axis = 0;
    std::vector<int64_t> order;

    SortIndex inverted() const;
};

// Stable ascending sort along `axis`; ties keep their original order.
std::pair<Tensor, SortIndex> sort_with_index(const Tensor& x, int axis);

// out[..,i,..] = x[..,order[i],..] per slice. Backward scatters through the
// inverse permutation, so gather(sort) followed by gather(inverted) is the
// identity in both value and gradient.
Tensor gather(const Tensor& x, const SortIndex& index);

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

} // namespace hformer
