#pragma once

#include <cstdint>
#include <string>

#include "hformer/ops.hpp"
#include "hformer/params.hpp"
#include "hformer/tensor.hpp"

namespace hformer {

// Thin parameter-owning wrappers over the raw ops. Each layer registers its
// tensors under `prefix` at construction time, so building a model in a fixed
// order fully determines both initialization and checkpoint layout.

// Token-space affine map: [.., in] -> [.., out].
struct Linear {
    Tensor w; // [in, out]
    Tensor b; // [out]

    Linear(ParameterStore& ps, const std::string& prefix, int64_t in, int64_t out);
    Tensor forward(const Tensor& x) const;
};

struct LayerNorm {
    Tensor gamma; // [n]
    Tensor beta;  // [n]
    int axis;

    LayerNorm(ParameterStore& ps, const std::string& prefix, int64_t n, int axis_);
    Tensor forward(const Tensor& x) const;
};

// 1x1 convolution over a [C,H,W] map.
struct PointwiseConv {
    Tensor w; // [out, in]
    Tensor b; // [out]

    PointwiseConv(ParameterStore& ps, const std::string& prefix, int64_t in, int64_t out);
    Tensor forward(const Tensor& x) const;
};

// Depthwise k x k convolution over a [C,H,W] map.
struct DepthwiseConv {
    Tensor w; // [C, k, k]
    Tensor b; // [C]
    int stride;

    DepthwiseConv(ParameterStore& ps, const std::string& prefix, int64_t channels, int64_t k,
                  int stride_ = 1);
    Tensor forward(const Tensor& x) const;
};

// Two-layer token MLP with ReLU and a 2x hidden expansion.
struct FeedForward {
    Linear fc1;
    Linear fc2;

    FeedForward(ParameterStore& ps, const std::string& prefix, int64_t dim);
    Tensor forward(const Tensor& x) const;
};

// Scaled dot-product attention over token matrices.
// q: [Lq, C], k/v: [Lk, C]; C must be divisible by heads; `scale` multiplies
// the logits (callers pass 1/sqrt(per-head dim) or the histogram variant).
Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                           double scale);

// [C,H,W] <-> [H*W, C] token views.
Tensor map_to_tokens(const Tensor& x);
Tensor tokens_to_map(const Tensor& t, int64_t c, int64_t h, int64_t w);

} // namespace hformer
