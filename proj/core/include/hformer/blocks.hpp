#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hformer/layers.hpp"
#include "hformer/ops.hpp"
#include "hformer/params.hpp"

namespace hformer {

// Histogram binning setup: `bins` fixes the bin count for the reflectance
// path (each bin holds HW/bins elements), `bin_freq` fixes the elements per
// bin for the frequency path (HW/bin_freq bins).
struct HistConfig {
    int64_t bins = 16;
    int64_t bin_freq = 16;
};

// ---------------------------------------------------------------------------
// Spatial helpers
// ---------------------------------------------------------------------------

// Splits a [C,H,W] map into its four half-resolution quadrants
// {top-left, top-right, bottom-left, bottom-right}; merge2x2 inverts it.
std::array<Tensor, 4> partition2x2(const Tensor& x);
Tensor merge2x2(const std::array<Tensor, 4>& q);

// ---------------------------------------------------------------------------
// Task intra-patch block (encoder side path)
// ---------------------------------------------------------------------------

// Attends a learnable query sequence against patch tokens, one query row per
// patch position; the four quadrants share the query and are processed
// independently, then reassembled. Output doubles as the task-pyramid entry.
struct TipbBlock {
    int heads;
    int64_t c, patch_h, patch_w;
    Tensor query; // [patch_h*patch_w, c]
    Linear wk, wv, wo;
    FeedForward ffn;

    TipbBlock(ParameterStore& ps, const std::string& prefix, int64_t c_, int64_t h, int64_t w,
              int heads_);
    Tensor forward(const Tensor& x) const;
};

// ---------------------------------------------------------------------------
// Task sequence generator (decoder side)
// ---------------------------------------------------------------------------

// Fuses the three task-pyramid maps into one query map at the coarsest
// pyramid resolution: T1 and T2 are downsampled to T3's grid and projected
// to T3's width, passed through 7x7 / 5x5 / 3x3 separable convolutions,
// summed, and fused by a final 3x3.
struct TaskQueryBuilder {
    PointwiseConv proj1, proj2;
    DepthwiseConv c7_dw;
    PointwiseConv c7_pw;
    DepthwiseConv c5_dw;
    PointwiseConv c5_pw;
    DepthwiseConv c3_dw;
    PointwiseConv c3_pw;
    DepthwiseConv fuse_dw;
    PointwiseConv fuse_pw;

    TaskQueryBuilder(ParameterStore& ps, const std::string& prefix, int64_t c1, int64_t c2,
                     int64_t c3);
    Tensor forward(const Tensor& t1, const Tensor& t2, const Tensor& t3) const;
};

// Cross-attention of the fused task query against a decoder feature map:
// queries derive from the (resampled, projected) task map, keys/values from
// the feature map, followed by a residual add and a feed-forward stage.
struct TsgBlock {
    int heads;
    int64_t c;
    PointwiseConv qproj; // task width -> feature width
    Linear wq, wk, wv, wo;
    FeedForward ffn;

    TsgBlock(ParameterStore& ps, const std::string& prefix, int64_t c_task, int64_t c_,
             int heads_);
    Tensor forward(const Tensor& x, const Tensor& qtask) const;
};

// ---------------------------------------------------------------------------
// Histogram self-attention
// ---------------------------------------------------------------------------

// Per-bin attention over sorted per-channel sequences. q/k/v are [C,N];
// every consecutive run of `bin_elems` ranks forms a bin, padded by
// repeating the last element when N is not divisible (padding is dropped
// again on output). Within each (head, bin), attention runs over the bin's
// positions with the head's channels as features; logits are scaled by
// 1/sqrt(heads).
Tensor binned_attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t bin_elems,
                        int heads);

// Dual-path histogram attention: sorts V per channel, gathers the two
// query/key pairs by the sort order, runs the bin-count path (hist.bins bins)
// and the bin-frequency path (hist.bin_freq elements per bin), multiplies the
// two outputs elementwise, and scatters back to spatial order.
Tensor histogram_attention(const Tensor& v, const Tensor& fqk1, const Tensor& fqk2,
                           const HistConfig& hist, int heads);

// Dynamic-range convolution + dual-path histogram self-attention. The first
// channel half is sorted along width then height before the convolutions;
// those positions are restored after attention, ahead of the final 1x1
// projection.
struct DhsaBlock {
    int heads;
    HistConfig hist;
    int64_t c;
    PointwiseConv drc_pw;
    DepthwiseConv drc_dw;
    PointwiseConv qkv; // C -> 5C, split as V | QK1 | QK2
    PointwiseConv out_proj;

    DhsaBlock(ParameterStore& ps, const std::string& prefix, int64_t c_, int heads_,
              HistConfig hist_);
    Tensor forward(const Tensor& x) const;
};

// ---------------------------------------------------------------------------
// Multi-scale feed-forward
// ---------------------------------------------------------------------------

// Pre-norm residual MLP in map space: 1x1 expansion by r, the two halves run
// through 3x3/5x5 depthwise branches, a cross-concatenated second depthwise
// stage, and a 1x1 fusion back to C. The residual add is part of this block.
struct MsffBlock {
    int64_t c, r;
    LayerNorm ln;
    PointwiseConv expand; // C -> rC
    DepthwiseConv dw3a, dw5a; // on rC/2
    DepthwiseConv dw3b, dw5b; // on rC
    PointwiseConv fuse; // 2rC -> C

    MsffBlock(ParameterStore& ps, const std::string& prefix, int64_t c_, int64_t r_);
    Tensor forward(const Tensor& x) const;
};

// ---------------------------------------------------------------------------
// Histogram transformer block
// ---------------------------------------------------------------------------

// Two pre-norm residual sub-layers: attention (LN -> DHSA -> +x) and the
// multi-scale feed-forward (whose LN and residual live inside MsffBlock).
struct HtbBlock {
    LayerNorm ln1;
    DhsaBlock dhsa;
    MsffBlock msff;

    HtbBlock(ParameterStore& ps, const std::string& prefix, int64_t c, int heads,
             HistConfig hist, int64_t r);
    Tensor forward(const Tensor& x) const;
};

// Plain convolutional sub-layer used when the histogram path is disabled:
// LN -> 1x1 -> depthwise 3x3 -> ReLU -> 1x1, residual added.
struct ConvSublayer {
    LayerNorm ln;
    PointwiseConv pw1;
    DepthwiseConv dw;
    PointwiseConv pw2;

    ConvSublayer(ParameterStore& ps, const std::string& prefix, int64_t c);
    Tensor forward(const Tensor& x) const;
};

// Convolutional stand-in for a full transformer block (ablation arm).
struct ConvBlock {
    ConvSublayer attn_sub;
    MsffBlock msff;

    ConvBlock(ParameterStore& ps, const std::string& prefix, int64_t c, int64_t r);
    Tensor forward(const Tensor& x) const;
};

// ---------------------------------------------------------------------------
// Scale-patch feature interaction (encoder fusion)
// ---------------------------------------------------------------------------

// Fuses the stage's task map into the next stage's input: the task map is
// downsampled to the backbone grid, projected to its width, then one
// pre-norm cross-attention (task queries against backbone keys/values) and
// one pre-norm self-attention run with single-head attention.
struct SpfiBlock {
    int64_t c_task, c;
    PointwiseConv proj;
    LayerNorm ln_t, ln_c, ln_s;
    Linear cq, ck, cv, co;
    Linear sq, sk, sv, so;

    SpfiBlock(ParameterStore& ps, const std::string& prefix, int64_t c_task_, int64_t c_);
    Tensor forward(const Tensor& backbone, const Tensor& task) const;
};

// ---------------------------------------------------------------------------
// Adaptive mixup (skip fusion)
// ---------------------------------------------------------------------------

// Convex gate between the encoder skip and the upsampled decoder feature:
// sigmoid(theta) * f_down + (1 - sigmoid(theta)) * f_up.
struct AdaptiveMixup {
    Tensor theta; // [1]

    AdaptiveMixup(ParameterStore& ps, const std::string& prefix);
    Tensor forward(const Tensor& f_down, const Tensor& f_up) const;
};

// ---------------------------------------------------------------------------
// Resamplers
// ---------------------------------------------------------------------------

// Strided separable 3x3 halving the grid and doubling the width.
struct Downsample {
    DepthwiseConv dw; // stride 2
    PointwiseConv pw; // C -> 2C

    Downsample(ParameterStore& ps, const std::string& prefix, int64_t c);
    Tensor forward(const Tensor& x) const;
};

// Bilinear doubling followed by a width-halving 1x1.
struct Upsample {
    PointwiseConv pw; // C -> C/2

    Upsample(ParameterStore& ps, const std::string& prefix, int64_t c);
    Tensor forward(const Tensor& x) const;
};

} // namespace hformer
