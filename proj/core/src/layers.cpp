#include "hformer/layers.hpp"

#include <cmath>

#include "hformer/errors.hpp"

namespace hformer {

Linear::Linear(ParameterStore& ps, const std::string& prefix, int64_t in, int64_t out)
    : w(ps.normal(prefix + ".w", {in, out})), b(ps.zeros(prefix + ".b", {out})) {}

Tensor Linear::forward(const Tensor& x) const { return add_bias_rows(matmul(x, w), b); }

LayerNorm::LayerNorm(ParameterStore& ps, const std::string& prefix, int64_t n, int axis_)
    : gamma(ps.ones(prefix + ".g", {n})), beta(ps.zeros(prefix + ".b", {n})), axis(axis_) {}

Tensor LayerNorm::forward(const Tensor& x) const { return layernorm(x, gamma, beta, axis); }

PointwiseConv::PointwiseConv(ParameterStore& ps, const std::string& prefix, int64_t in,
                             int64_t out)
    : w(ps.normal(prefix + ".w", {out, in})), b(ps.zeros(prefix + ".b", {out})) {}

Tensor PointwiseConv::forward(const Tensor& x) const { return conv2d_pointwise(x, w, b); }

DepthwiseConv::DepthwiseConv(ParameterStore& ps, const std::string& prefix, int64_t channels,
                             int64_t k, int stride_)
    : w(ps.normal(prefix + ".w", {channels, k, k})),
      b(ps.zeros(prefix + ".b", {channels})),
      stride(stride_) {}

Tensor DepthwiseConv::forward(const Tensor& x) const {
    return conv2d_depthwise(x, w, b, stride);
}

FeedForward::FeedForward(ParameterStore& ps, const std::string& prefix, int64_t dim)
    : fc1(ps, prefix + ".fc1", dim, 2 * dim), fc2(ps, prefix + ".fc2", 2 * dim, dim) {}

Tensor FeedForward::forward(const Tensor& x) const { return fc2.forward(relu(fc1.forward(x))); }

Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                           double scale) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
        throw ShapeError("multihead_attention: expected [L,C] token matrices");
    }
    const int64_t c = q.dim(1);
    if (k.dim(1) != c || v.dim(1) != c || k.dim(0) != v.dim(0)) {
        throw ShapeError("multihead_attention: inconsistent token shapes " +
                         shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                         shape_str(v.shape()));
    }
    if (heads <= 0 || c % heads != 0) {
        throw ConfigError("multihead_attention: width " + std::to_string(c) +
                          " not divisible by " + std::to_string(heads) + " heads");
    }
    const int64_t lq = q.dim(0), lk = k.dim(0), d = c / heads;
    const Tensor qh = transpose(reshape(q, {lq, heads, d}), {1, 0, 2}); // [h,Lq,d]
    const Tensor kt = transpose(reshape(k, {lk, heads, d}), {1, 2, 0}); // [h,d,Lk]
    const Tensor vh = transpose(reshape(v, {lk, heads, d}), {1, 0, 2}); // [h,Lk,d]
    const Tensor att = softmax(scale * matmul(qh, kt), 2);
    const Tensor out = matmul(att, vh); // [h,Lq,d]
    return reshape(transpose(out, {1, 0, 2}), {lq, c});
}

Tensor map_to_tokens(const Tensor& x) {
    if (x.rank() != 3) {
        throw ShapeError("map_to_tokens: expected [C,H,W], got " + shape_str(x.shape()));
    }
    const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    return transpose(reshape(x, {c, h * w}), {1, 0});
}

Tensor tokens_to_map(const Tensor& t, int64_t c, int64_t h, int64_t w) {
    if (t.rank() != 2 || t.dim(0) != h * w || t.dim(1) != c) {
        throw ShapeError("tokens_to_map: token matrix " + shape_str(t.shape()) +
                         " does not view as [" + std::to_string(c) + "," + std::to_string(h) +
                         "," + std::to_string(w) + "]");
    }
    return reshape(transpose(t, {1, 0}), {c, h, w});
}

} // namespace hformer
