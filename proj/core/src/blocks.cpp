#include "hformer/blocks.hpp"

#include <cmath>

#include "hformer/errors.hpp"

namespace hformer {

// ---------------------------------------------------------------------------
// Spatial helpers
// ---------------------------------------------------------------------------

std::array<Tensor, 4> partition2x2(const Tensor& x) {
    if (x.rank() != 3 || x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0) {
        throw ShapeError("partition2x2: expected [C,H,W] with even H and W, got " +
                         shape_str(x.shape()));
    }
    const int64_t h2 = x.dim(1) / 2, w2 = x.dim(2) / 2;
    const Tensor top = slice_axis(x, 1, 0, h2);
    const Tensor bottom = slice_axis(x, 1, h2, h2);
    return {slice_axis(top, 2, 0, w2), slice_axis(top, 2, w2, w2),
            slice_axis(bottom, 2, 0, w2), slice_axis(bottom, 2, w2, w2)};
}

Tensor merge2x2(const std::array<Tensor, 4>& q) {
    const Tensor top = concat(q[0], q[1], 2);
    const Tensor bottom = concat(q[2], q[3], 2);
    return concat(top, bottom, 1);
}

// ---------------------------------------------------------------------------
// TipbBlock
// ---------------------------------------------------------------------------

TipbBlock::TipbBlock(ParameterStore& ps, const std::string& prefix, int64_t c_, int64_t h,
                     int64_t w, int heads_)
    : heads(heads_),
      c(c_),
      patch_h(h / 2),
      patch_w(w / 2),
      query(ps.normal(prefix + ".query", {(h / 2) * (w / 2), c_})),
      wk(ps, prefix + ".wk", c_, c_),
      wv(ps, prefix + ".wv", c_, c_),
      wo(ps, prefix + ".wo", c_, c_),
      ffn(ps, prefix + ".ffn", c_) {
    if (h % 2 != 0 || w % 2 != 0) {
        throw ConfigError("TipbBlock: spatial size must be even, got " + std::to_string(h) +
                          "x" + std::to_string(w));
    }
    if (c_ % heads_ != 0) {
        throw ConfigError("TipbBlock: width " + std::to_string(c_) + " not divisible by " +
                          std::to_string(heads_) + " heads");
    }
}

Tensor TipbBlock::forward(const Tensor& x) const {
    if (x.dim(0) != c || x.dim(1) != 2 * patch_h || x.dim(2) != 2 * patch_w) {
        throw ShapeError("TipbBlock: input " + shape_str(x.shape()) + " does not match block");
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(c / heads));
    std::array<Tensor, 4> quads = partition2x2(x);
    for (Tensor& patch : quads) {
        const Tensor tokens = map_to_tokens(patch);
        const Tensor k = wk.forward(tokens);
        const Tensor v = wv.forward(tokens);
        const Tensor att = wo.forward(multihead_attention(query, k, v, heads, scale));
        patch = tokens_to_map(ffn.forward(att + tokens), c, patch_h, patch_w);
    }
    return merge2x2(quads);
}

// ---------------------------------------------------------------------------
// TaskQueryBuilder
// ---------------------------------------------------------------------------

TaskQueryBuilder::TaskQueryBuilder(ParameterStore& ps, const std::string& prefix, int64_t c1,
                                   int64_t c2, int64_t c3)
    : proj1(ps, prefix + ".proj1", c1, c3),
      proj2(ps, prefix + ".proj2", c2, c3),
      c7_dw(ps, prefix + ".c7.dw", c3, 7),
      c7_pw(ps, prefix + ".c7.pw", c3, c3),
      c5_dw(ps, prefix + ".c5.dw", c3, 5),
      c5_pw(ps, prefix + ".c5.pw", c3, c3),
      c3_dw(ps, prefix + ".c3.dw", c3, 3),
      c3_pw(ps, prefix + ".c3.pw", c3, c3),
      fuse_dw(ps, prefix + ".fuse.dw", c3, 3),
      fuse_pw(ps, prefix + ".fuse.pw", c3, c3) {}

Tensor TaskQueryBuilder::forward(const Tensor& t1, const Tensor& t2, const Tensor& t3) const {
    if (!t1.defined() || !t2.defined() || !t3.defined()) {
        throw ShapeError("TaskQueryBuilder: all three pyramid stages are required");
    }
    const Tensor a = c7_pw.forward(c7_dw.forward(proj1.forward(bilinear_down2(bilinear_down2(t1)))));
    const Tensor b = c5_pw.forward(c5_dw.forward(proj2.forward(bilinear_down2(t2))));
    const Tensor d = c3_pw.forward(c3_dw.forward(t3));
    return fuse_pw.forward(fuse_dw.forward(a + b + d));
}

// ---------------------------------------------------------------------------
// TsgBlock
// ---------------------------------------------------------------------------

TsgBlock::TsgBlock(ParameterStore& ps, const std::string& prefix, int64_t c_task, int64_t c_,
                   int heads_)
    : heads(heads_),
      c(c_),
      qproj(ps, prefix + ".qproj", c_task, c_),
      wq(ps, prefix + ".wq", c_, c_),
      wk(ps, prefix + ".wk", c_, c_),
      wv(ps, prefix + ".wv", c_, c_),
      wo(ps, prefix + ".wo", c_, c_),
      ffn(ps, prefix + ".ffn", c_) {}

Tensor TsgBlock::forward(const Tensor& x, const Tensor& qtask) const {
    if (x.dim(0) != c) {
        throw ShapeError("TsgBlock: feature width " + std::to_string(x.dim(0)) +
                         " does not match block width " + std::to_string(c));
    }
    Tensor q = qtask;
    while (q.dim(1) < x.dim(1)) q = bilinear_up2(q);
    while (q.dim(1) > x.dim(1)) q = bilinear_down2(q);
    if (q.dim(1) != x.dim(1) || q.dim(2) != x.dim(2)) {
        throw ShapeError("TsgBlock: task map " + shape_str(qtask.shape()) +
                         " cannot be resampled to " + shape_str(x.shape()));
    }
    q = qproj.forward(q);
    const double scale = 1.0 / std::sqrt(static_cast<double>(c / heads));
    const Tensor tokens = map_to_tokens(x);
    const Tensor qt = wq.forward(map_to_tokens(q));
    const Tensor k = wk.forward(tokens);
    const Tensor v = wv.forward(tokens);
    const Tensor att = wo.forward(multihead_attention(qt, k, v, heads, scale));
    return tokens_to_map(ffn.forward(att + tokens), c, x.dim(1), x.dim(2));
}

// ---------------------------------------------------------------------------
// Histogram attention
// ---------------------------------------------------------------------------

Tensor binned_attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t bin_elems,
                        int heads) {
    if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
        throw ShapeError("binned_attention: expected matching [C,N] inputs");
    }
    const int64_t c = q.dim(0), n = q.dim(1);
    if (bin_elems <= 0) throw ConfigError("binned_attention: bin size must be positive");
    if (c % heads != 0) {
        throw ConfigError("binned_attention: width " + std::to_string(c) +
                          " not divisible by " + std::to_string(heads) + " heads");
    }
    const int64_t pad = (bin_elems - n % bin_elems) % bin_elems;
    Tensor qp = q, kp = k, vp = v;
    if (pad > 0) {
        qp = pad_repeat_last(q, 1, pad);
        kp = pad_repeat_last(k, 1, pad);
        vp = pad_repeat_last(v, 1, pad);
    }
    const int64_t np = n + pad;
    const int64_t nbins = np / bin_elems;
    const int64_t d = c / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(heads));
    const Tensor qh = transpose(reshape(qp, {heads, d, nbins, bin_elems}), {0, 2, 3, 1});
    const Tensor kt = transpose(reshape(kp, {heads, d, nbins, bin_elems}), {0, 2, 1, 3});
    const Tensor vh = transpose(reshape(vp, {heads, d, nbins, bin_elems}), {0, 2, 3, 1});
    const Tensor att = softmax(scale * matmul(qh, kt), 3);
    Tensor out = reshape(transpose(matmul(att, vh), {0, 3, 1, 2}), {c, np});
    if (pad > 0) out = slice_axis(out, 1, 0, n);
    return out;
}

Tensor histogram_attention(const Tensor& v, const Tensor& fqk1, const Tensor& fqk2,
                           const HistConfig& hist, int heads) {
    if (v.rank() != 3) {
        throw ShapeError("histogram_attention: expected [C,H,W] value map, got " +
                         shape_str(v.shape()));
    }
    const int64_t c = v.dim(0), h = v.dim(1), w = v.dim(2), n = h * w;
    if (fqk1.rank() != 3 || fqk1.dim(0) != 2 * c || fqk2.rank() != 3 || fqk2.dim(0) != 2 * c ||
        fqk1.dim(1) != h || fqk1.dim(2) != w || fqk2.dim(1) != h || fqk2.dim(2) != w) {
        throw ShapeError("histogram_attention: query/key maps must be [2C,H,W]");
    }
    if (hist.bins <= 0 || hist.bin_freq <= 0) {
        throw ConfigError("histogram_attention: bin settings must be positive");
    }

    auto [vs, d] = sort_with_index(reshape(v, {c, n}), 1);
    const Tensor q1 = gather(reshape(slice_axis(fqk1, 0, 0, c), {c, n}), d);
    const Tensor k1 = gather(reshape(slice_axis(fqk1, 0, c, c), {c, n}), d);
    const Tensor q2 = gather(reshape(slice_axis(fqk2, 0, 0, c), {c, n}), d);
    const Tensor k2 = gather(reshape(slice_axis(fqk2, 0, c, c), {c, n}), d);

    // Bin-count path: hist.bins bins of ceil(N/bins) ranks each.
    const int64_t elems_b = (n + hist.bins - 1) / hist.bins;
    const Tensor a_b = binned_attention(q1, k1, vs, elems_b, heads);
    // Bin-frequency path: bins of hist.bin_freq ranks each.
    const Tensor a_f = binned_attention(q2, k2, vs, hist.bin_freq, heads);

    const Tensor fused = mul(a_b, a_f);
    return reshape(gather(fused, d.inverted()), {c, h, w});
}

// ---------------------------------------------------------------------------
// DhsaBlock
// ---------------------------------------------------------------------------

DhsaBlock::DhsaBlock(ParameterStore& ps, const std::string& prefix, int64_t c_, int heads_,
                     HistConfig hist_)
    : heads(heads_),
      hist(hist_),
      c(c_),
      drc_pw(ps, prefix + ".drc_pw", c_, c_),
      drc_dw(ps, prefix + ".drc_dw", c_, 3),
      qkv(ps, prefix + ".qkv", c_, 5 * c_),
      out_proj(ps, prefix + ".out", c_, c_) {
    if (c_ % 2 != 0) {
        throw ConfigError("DhsaBlock: width must be even for the channel split, got " +
                          std::to_string(c_));
    }
}

Tensor DhsaBlock::forward(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(0) != c) {
        throw ShapeError("DhsaBlock: input " + shape_str(x.shape()) + " does not match width " +
                         std::to_string(c));
    }
    const int64_t half = c / 2, h = x.dim(1), w = x.dim(2);

    // Dynamic-range convolution: ascending sort of the first half along
    // width, then height; the permutations are kept for the final restore.
    const Tensor f1 = slice_axis(x, 0, 0, half);
    const Tensor f2 = slice_axis(x, 0, half, half);
    auto [f1w, dw_idx] = sort_with_index(f1, 2);
    auto [f1s, dh_idx] = sort_with_index(f1w, 1);
    const Tensor mixed = drc_dw.forward(drc_pw.forward(concat(f1s, f2, 0)));

    const Tensor packed = qkv.forward(mixed);
    const Tensor v = slice_axis(packed, 0, 0, c);
    const Tensor fqk1 = slice_axis(packed, 0, c, 2 * c);
    const Tensor fqk2 = slice_axis(packed, 0, 3 * c, 2 * c);
    const Tensor att = histogram_attention(v, fqk1, fqk2, hist, heads);

    // Undo the height-then-width sort on the first channel half.
    Tensor front = slice_axis(att, 0, 0, half);
    front = gather(front, dh_idx.inverted());
    front = gather(front, dw_idx.inverted());
    const Tensor restored = concat(front, slice_axis(att, 0, half, half), 0);
    return out_proj.forward(restored);
}

// ---------------------------------------------------------------------------
// MsffBlock
// ---------------------------------------------------------------------------

MsffBlock::MsffBlock(ParameterStore& ps, const std::string& prefix, int64_t c_, int64_t r_)
    : c(c_),
      r(r_),
      ln(ps, prefix + ".ln", c_, 0),
      expand(ps, prefix + ".expand", c_, r_ * c_),
      dw3a(ps, prefix + ".dw3a", r_ * c_ / 2, 3),
      dw5a(ps, prefix + ".dw5a", r_ * c_ / 2, 5),
      dw3b(ps, prefix + ".dw3b", r_ * c_, 3),
      dw5b(ps, prefix + ".dw5b", r_ * c_, 5),
      fuse(ps, prefix + ".fuse", 2 * r_ * c_, c_) {
    if ((r_ * c_) % 2 != 0) {
        throw ConfigError("MsffBlock: expanded width must be even, got r=" + std::to_string(r_) +
                          " c=" + std::to_string(c_));
    }
}

Tensor MsffBlock::forward(const Tensor& x) const {
    const int64_t half = r * c / 2;
    const Tensor expanded = expand.forward(ln.forward(x));
    const Tensor xp = slice_axis(expanded, 0, 0, half);
    const Tensor xs = slice_axis(expanded, 0, half, half);
    const Tensor xp1 = relu(dw3a.forward(xp));
    const Tensor xs1 = relu(dw5a.forward(xs));
    const Tensor xp2 = relu(dw3b.forward(concat(xp1, xs1, 0)));
    const Tensor xs2 = relu(dw5b.forward(concat(xs1, xp1, 0)));
    return fuse.forward(concat(xp2, xs2, 0)) + x;
}

// ---------------------------------------------------------------------------
// HtbBlock / ConvBlock
// ---------------------------------------------------------------------------

HtbBlock::HtbBlock(ParameterStore& ps, const std::string& prefix, int64_t c, int heads,
                   HistConfig hist, int64_t r)
    : ln1(ps, prefix + ".ln1", c, 0),
      dhsa(ps, prefix + ".dhsa", c, heads, hist),
      msff(ps, prefix + ".msff", c, r) {}

Tensor HtbBlock::forward(const Tensor& x) const {
    return msff.forward(x + dhsa.forward(ln1.forward(x)));
}

ConvSublayer::ConvSublayer(ParameterStore& ps, const std::string& prefix, int64_t c)
    : ln(ps, prefix + ".ln", c, 0),
      pw1(ps, prefix + ".pw1", c, c),
      dw(ps, prefix + ".dw", c, 3),
      pw2(ps, prefix + ".pw2", c, c) {}

Tensor ConvSublayer::forward(const Tensor& x) const {
    return x + pw2.forward(relu(dw.forward(pw1.forward(ln.forward(x)))));
}

ConvBlock::ConvBlock(ParameterStore& ps, const std::string& prefix, int64_t c, int64_t r)
    : attn_sub(ps, prefix + ".conv", c), msff(ps, prefix + ".msff", c, r) {}

Tensor ConvBlock::forward(const Tensor& x) const { return msff.forward(attn_sub.forward(x)); }

// ---------------------------------------------------------------------------
// SpfiBlock
// ---------------------------------------------------------------------------

SpfiBlock::SpfiBlock(ParameterStore& ps, const std::string& prefix, int64_t c_task_, int64_t c_)
    : c_task(c_task_),
      c(c_),
      proj(ps, prefix + ".proj", c_task_, c_),
      ln_t(ps, prefix + ".ln_t", c_, 1),
      ln_c(ps, prefix + ".ln_c", c_, 1),
      ln_s(ps, prefix + ".ln_s", c_, 1),
      cq(ps, prefix + ".cq", c_, c_),
      ck(ps, prefix + ".ck", c_, c_),
      cv(ps, prefix + ".cv", c_, c_),
      co(ps, prefix + ".co", c_, c_),
      sq(ps, prefix + ".sq", c_, c_),
      sk(ps, prefix + ".sk", c_, c_),
      sv(ps, prefix + ".sv", c_, c_),
      so(ps, prefix + ".so", c_, c_) {}

Tensor SpfiBlock::forward(const Tensor& backbone, const Tensor& task) const {
    if (backbone.dim(0) != c) {
        throw ShapeError("SpfiBlock: backbone width " + std::to_string(backbone.dim(0)) +
                         " does not match block width " + std::to_string(c));
    }
    Tensor t = task;
    while (t.dim(1) > backbone.dim(1)) t = bilinear_down2(t);
    while (t.dim(1) < backbone.dim(1)) t = bilinear_up2(t);
    t = proj.forward(t);
    if (t.dim(1) != backbone.dim(1) || t.dim(2) != backbone.dim(2)) {
        throw ShapeError("SpfiBlock: task map " + shape_str(task.shape()) +
                         " cannot be aligned to " + shape_str(backbone.shape()));
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(c));

    Tensor y = map_to_tokens(backbone);
    const Tensor t_tok = map_to_tokens(t);
    {
        const Tensor qn = cq.forward(ln_t.forward(t_tok));
        const Tensor yn = ln_c.forward(y);
        const Tensor att = multihead_attention(qn, ck.forward(yn), cv.forward(yn), 1, scale);
        y = y + co.forward(att);
    }
    {
        const Tensor z = ln_s.forward(y);
        const Tensor att =
            multihead_attention(sq.forward(z), sk.forward(z), sv.forward(z), 1, scale);
        y = y + so.forward(att);
    }
    return tokens_to_map(y, c, backbone.dim(1), backbone.dim(2));
}

// ---------------------------------------------------------------------------
// AdaptiveMixup
// ---------------------------------------------------------------------------

AdaptiveMixup::AdaptiveMixup(ParameterStore& ps, const std::string& prefix)
    : theta(ps.zeros(prefix + ".theta", {1})) {}

Tensor AdaptiveMixup::forward(const Tensor& f_down, const Tensor& f_up) const {
    if (f_down.shape() != f_up.shape()) {
        throw ShapeError("AdaptiveMixup: shape mismatch " + shape_str(f_down.shape()) + " vs " +
                         shape_str(f_up.shape()));
    }
    const Tensor g = sigmoid(theta);
    const Tensor g_inv = add_scalar(neg(g), 1.0);
    return scale_by(f_down, g) + scale_by(f_up, g_inv);
}

// ---------------------------------------------------------------------------
// Resamplers
// ---------------------------------------------------------------------------

Downsample::Downsample(ParameterStore& ps, const std::string& prefix, int64_t c)
    : dw(ps, prefix + ".dw", c, 3, 2), pw(ps, prefix + ".pw", c, 2 * c) {}

Tensor Downsample::forward(const Tensor& x) const { return pw.forward(dw.forward(x)); }

Upsample::Upsample(ParameterStore& ps, const std::string& prefix, int64_t c)
    : pw(ps, prefix + ".pw", c, c / 2) {}

Tensor Upsample::forward(const Tensor& x) const { return pw.forward(bilinear_up2(x)); }

} // namespace hformer
