#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "hformer/ops.hpp"
#include "ops_util.hpp"

namespace hformer {

using detail::AxisSplit;
using detail::attach_backward;
using detail::ensure_grad;
using detail::normalize_axis;
using detail::recording;
using detail::split_at;
using detail::TensorNode;

namespace {

using NodePtr = std::shared_ptr<TensorNode>;

void check_chw(const Tensor& x, const char* op) {
    if (x.rank() != 3) {
        throw ShapeError(std::string(op) + ": expected a [C,H,W] feature map, got " +
                         shape_str(x.shape()));
    }
}

} // namespace

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

Tensor conv2d_pointwise(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    check_chw(x, "conv2d_pointwise");
    if (weight.rank() != 2 || bias.rank() != 1 || weight.dim(1) != x.dim(0) ||
        bias.dim(0) != weight.dim(0)) {
        throw ShapeError("conv2d_pointwise: weight " + shape_str(weight.shape()) + " / bias " +
                         shape_str(bias.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
    }
    const int64_t Cin = x.dim(0), H = x.dim(1), W = x.dim(2), P = H * W;
    const int64_t Cout = weight.dim(0);
    Tensor out = Tensor::zeros({Cout, H, W});
    {
        const double* X = x.data().data();
        const double* Wd = weight.data().data();
        const double* B = bias.data().data();
        double* O = out.mutable_data().data();
        for (int64_t co = 0; co < Cout; ++co) {
            double* op = O + co * P;
            const double bv = B[co];
            for (int64_t p = 0; p < P; ++p) op[p] = bv;
            for (int64_t ci = 0; ci < Cin; ++ci) {
                const double wv = Wd[co * Cin + ci];
                const double* xp = X + ci * P;
                for (int64_t p = 0; p < P; ++p) op[p] += wv * xp[p];
            }
        }
    }
    if (recording({&x, &weight, &bias})) {
        NodePtr xn = x.node(), wn = weight.node(), bn = bias.node(), on = out.node();
        attach_backward(out, [xn, wn, bn, on, Cin, Cout, P] {
            if (on->grad.empty()) return;
            const double* OG = on->grad.data();
            if (xn->requires_grad) {
                ensure_grad(*xn);
                double* GX = xn->grad.data();
                const double* Wd = wn->data.data();
                for (int64_t co = 0; co < Cout; ++co) {
                    const double* op = OG + co * P;
                    for (int64_t ci = 0; ci < Cin; ++ci) {
                        const double wv = Wd[co * Cin + ci];
                        double* gx = GX + ci * P;
                        for (int64_t p = 0; p < P; ++p) gx[p] += wv * op[p];
                    }
                }
            }
            if (wn->requires_grad) {
                ensure_grad(*wn);
                double* GW = wn->grad.data();
                const double* X = xn->data.data();
                for (int64_t co = 0; co < Cout; ++co) {
                    const double* op = OG + co * P;
                    for (int64_t ci = 0; ci < Cin; ++ci) {
                        const double* xp = X + ci * P;
                        double acc = 0.0;
                        for (int64_t p = 0; p < P; ++p) acc += op[p] * xp[p];
                        GW[co * Cin + ci] += acc;
                    }
                }
            }
            if (bn->requires_grad) {
                ensure_grad(*bn);
                for (int64_t co = 0; co < Cout; ++co) {
                    const double* op = OG + co * P;
                    double acc = 0.0;
                    for (int64_t p = 0; p < P; ++p) acc += op[p];
                    bn->grad[static_cast<size_t>(co)] += acc;
                }
            }
        });
    }
    return out;
}

Tensor conv2d_depthwise(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride) {
    check_chw(x, "conv2d_depthwise");
    if (weight.rank() != 3 || weight.dim(0) != x.dim(0) || weight.dim(1) != weight.dim(2)) {
        throw ShapeError("conv2d_depthwise: weight " + shape_str(weight.shape()) +
                         " incompatible with input " + shape_str(x.shape()));
    }
    const int64_t k = weight.dim(1);
    if (k != 1 && k != 3 && k != 5 && k != 7) {
        throw ConfigError("conv2d_depthwise: kernel size must be 1, 3, 5 or 7, got " +
                         std::to_string(k));
    }
    if (bias.rank() != 1 || bias.dim(0) != x.dim(0)) {
        throw ShapeError("conv2d_depthwise: bias " + shape_str(bias.shape()) +
                         " incompatible with input " + shape_str(x.shape()));
    }
    if (stride != 1 && stride != 2) {
        throw ConfigError("conv2d_depthwise: stride must be 1 or 2, got " + std::to_string(stride));
    }
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int64_t pad = k / 2;
    const int64_t Ho = (H + 2 * pad - k) / stride + 1;
    const int64_t Wo = (W + 2 * pad - k) / stride + 1;
    Tensor out = Tensor::zeros({C, Ho, Wo});
    {
        const double* X = x.data().data();
        const double* Wd = weight.data().data();
        const double* B = bias.data().data();
        double* O = out.mutable_data().data();
        for (int64_t c = 0; c < C; ++c) {
            const double* xp = X + c * H * W;
            const double* wp = Wd + c * k * k;
            double* op = O + c * Ho * Wo;
            const double bv = B[c];
            for (int64_t oy = 0; oy < Ho; ++oy) {
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    double acc = bv;
                    const int64_t iy0 = oy * stride - pad;
                    const int64_t ix0 = ox * stride - pad;
                    for (int64_t ky = 0; ky < k; ++ky) {
                        const int64_t iy = iy0 + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int64_t kx = 0; kx < k; ++kx) {
                            const int64_t ix = ix0 + kx;
                            if (ix < 0 || ix >= W) continue;
                            acc += wp[ky * k + kx] * xp[iy * W + ix];
                        }
                    }
                    op[oy * Wo + ox] = acc;
                }
            }
        }
    }
    if (recording({&x, &weight, &bias})) {
        NodePtr xn = x.node(), wn = weight.node(), bn = bias.node(), on = out.node();
        const int64_t s = stride;
        attach_backward(out, [xn, wn, bn, on, C, H, W, Ho, Wo, k, pad, s] {
            if (on->grad.empty()) return;
            const double* OG = on->grad.data();
            const bool gx = xn->requires_grad, gw = wn->requires_grad, gb = bn->requires_grad;
            if (gx) ensure_grad(*xn);
            if (gw) ensure_grad(*wn);
            if (gb) ensure_grad(*bn);
            for (int64_t c = 0; c < C; ++c) {
                const double* xp = xn->data.data() + c * H * W;
                const double* wp = wn->data.data() + c * k * k;
                const double* op = OG + c * Ho * Wo;
                double* gxp = gx ? xn->grad.data() + c * H * W : nullptr;
                double* gwp = gw ? wn->grad.data() + c * k * k : nullptr;
                double gbacc = 0.0;
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        const double g = op[oy * Wo + ox];
                        if (g == 0.0) continue;
                        gbacc += g;
                        const int64_t iy0 = oy * s - pad;
                        const int64_t ix0 = ox * s - pad;
                        for (int64_t ky = 0; ky < k; ++ky) {
                            const int64_t iy = iy0 + ky;
                            if (iy < 0 || iy >= H) continue;
                            for (int64_t kx = 0; kx < k; ++kx) {
                                const int64_t ix = ix0 + kx;
                                if (ix < 0 || ix >= W) continue;
                                if (gx) gxp[iy * W + ix] += wp[ky * k + kx] * g;
                                if (gw) gwp[ky * k + kx] += xp[iy * W + ix] * g;
                            }
                        }
                    }
                }
                if (gb) bn->grad[static_cast<size_t>(c)] += gbacc;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bilinear resampling
// ---------------------------------------------------------------------------

namespace {

// Half-pixel source coordinates for a factor-2 upsample, clamped at borders.
struct UpAxis {
    std::vector<int64_t> lo, hi;
    std::vector<double> w_hi; // weight of hi; lo gets 1 - w_hi
};

UpAxis up_axis(int64_t n_in) {
    UpAxis a;
    const int64_t n_out = 2 * n_in;
    a.lo.resize(static_cast<size_t>(n_out));
    a.hi.resize(static_cast<size_t>(n_out));
    a.w_hi.resize(static_cast<size_t>(n_out));
    for (int64_t o = 0; o < n_out; ++o) {
        const double src = 0.5 * static_cast<double>(o) - 0.25;
        const double f = std::floor(src);
        int64_t lo = static_cast<int64_t>(f);
        double w = src - f;
        int64_t hi = lo + 1;
        if (lo < 0) lo = 0;
        if (hi > n_in - 1) hi = n_in - 1;
        a.lo[static_cast<size_t>(o)] = lo;
        a.hi[static_cast<size_t>(o)] = hi;
        a.w_hi[static_cast<size_t>(o)] = w;
    }
    return a;
}

} // namespace

Tensor bilinear_up2(const Tensor& x) {
    check_chw(x, "bilinear_up2");
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const UpAxis ay = up_axis(H), ax = up_axis(W);
    const int64_t Ho = 2 * H, Wo = 2 * W;
    Tensor out = Tensor::zeros({C, Ho, Wo});
    {
        const double* X = x.data().data();
        double* O = out.mutable_data().data();
        for (int64_t c = 0; c < C; ++c) {
            const double* xp = X + c * H * W;
            double* op = O + c * Ho * Wo;
            for (int64_t oy = 0; oy < Ho; ++oy) {
                const int64_t y0 = ay.lo[static_cast<size_t>(oy)];
                const int64_t y1 = ay.hi[static_cast<size_t>(oy)];
                const double wy1 = ay.w_hi[static_cast<size_t>(oy)];
                const double wy0 = 1.0 - wy1;
                const double* r0 = xp + y0 * W;
                const double* r1 = xp + y1 * W;
                double* orow = op + oy * Wo;
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    const int64_t x0 = ax.lo[static_cast<size_t>(ox)];
                    const int64_t x1 = ax.hi[static_cast<size_t>(ox)];
                    const double wx1 = ax.w_hi[static_cast<size_t>(ox)];
                    const double wx0 = 1.0 - wx1;
                    orow[ox] = wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) +
                               wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
                }
            }
        }
    }
    if (recording({&x})) {
        NodePtr xn = x.node(), on = out.node();
        attach_backward(out, [xn, on, C, H, W, Ho, Wo, ay, ax] {
            if (on->grad.empty() || !xn->requires_grad) return;
            ensure_grad(*xn);
            const double* OG = on->grad.data();
            for (int64_t c = 0; c < C; ++c) {
                double* gxp = xn->grad.data() + c * H * W;
                const double* op = OG + c * Ho * Wo;
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    const int64_t y0 = ay.lo[static_cast<size_t>(oy)];
                    const int64_t y1 = ay.hi[static_cast<size_t>(oy)];
                    const double wy1 = ay.w_hi[static_cast<size_t>(oy)];
                    const double wy0 = 1.0 - wy1;
                    const double* orow = op + oy * Wo;
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        const double g = orow[ox];
                        if (g == 0.0) continue;
                        const int64_t x0 = ax.lo[static_cast<size_t>(ox)];
                        const int64_t x1 = ax.hi[static_cast<size_t>(ox)];
                        const double wx1 = ax.w_hi[static_cast<size_t>(ox)];
                        const double wx0 = 1.0 - wx1;
                        gxp[y0 * W + x0] += wy0 * wx0 * g;
                        gxp[y0 * W + x1] += wy0 * wx1 * g;
                        gxp[y1 * W + x0] += wy1 * wx0 * g;
                        gxp[y1 * W + x1] += wy1 * wx1 * g;
                    }
                }
            }
        });
    }
    return out;
}

Tensor bilinear_down2(const Tensor& x) {
    check_chw(x, "bilinear_down2");
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (H % 2 != 0 || W % 2 != 0) {
        throw ShapeError("bilinear_down2: spatial size must be even, got " + shape_str(x.shape()));
    }
    const int64_t Ho = H / 2, Wo = W / 2;
    Tensor out = Tensor::zeros({C, Ho, Wo});
    {
        const double* X = x.data().data();
        double* O = out.mutable_data().data();
        for (int64_t c = 0; c < C; ++c) {
            const double* xp = X + c * H * W;
            double* op = O + c * Ho * Wo;
            for (int64_t oy = 0; oy < Ho; ++oy) {
                const double* r0 = xp + 2 * oy * W;
                const double* r1 = r0 + W;
                double* orow = op + oy * Wo;
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    const int64_t ix = 2 * ox;
                    orow[ox] = 0.25 * (r0[ix] + r0[ix + 1] + r1[ix] + r1[ix + 1]);
                }
            }
        }
    }
    if (recording({&x})) {
        NodePtr xn = x.node(), on = out.node();
        attach_backward(out, [xn, on, C, H, W, Ho, Wo] {
            if (on->grad.empty() || !xn->requires_grad) return;
            ensure_grad(*xn);
            const double* OG = on->grad.data();
            for (int64_t c = 0; c < C; ++c) {
                double* gxp = xn->grad.data() + c * H * W;
                const double* op = OG + c * Ho * Wo;
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    double* g0 = gxp + 2 * oy * W;
                    double* g1 = g0 + W;
                    const double* orow = op + oy * Wo;
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        const double g = 0.25 * orow[ox];
                        const int64_t ix = 2 * ox;
                        g0[ix] += g;
                        g0[ix + 1] += g;
                        g1[ix] += g;
                        g1[ix + 1] += g;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sorting / gathering
// ---------------------------------------------------------------------------

SortIndex SortIndex::inverted() const {
    SortIndex inv;
    inv.shape = shape;
    inv.axis = axis;
    inv.order.resize(order.size());
    const AxisSplit sp = split_at(shape, axis);
    for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t i = 0; i < sp.inner; ++i) {
            const int64_t base = o * sp.n * sp.inner + i;
            const int64_t st = sp.inner;
            for (int64_t p = 0; p < sp.n; ++p) {
                inv.order[static_cast<size_t>(base + order[static_cast<size_t>(base + p * st)] * st)] =
                    p;
            }
        }
    }
    return inv;
}

Tensor gather(const Tensor& x, const SortIndex& index) {
    if (index.shape != x.shape()) {
        throw ShapeError("gather: index built for " + shape_str(index.shape) +
                         ", input is " + shape_str(x.shape()));
    }
    const AxisSplit sp = split_at(x.shape(), index.axis);
    for (int64_t v : index.order) {
        if (v < 0 || v >= sp.n) {
            throw IndexError("gather: index " + std::to_string(v) + " out of range for axis of " +
                             std::to_string(sp.n));
        }
    }
    Tensor out = Tensor::zeros(x.shape());
    {
        const double* px = x.data().data();
        double* po = out.mutable_data().data();
        for (int64_t o = 0; o < sp.outer; ++o) {
            for (int64_t i = 0; i < sp.inner; ++i) {
                const int64_t base = o * sp.n * sp.inner + i;
                const int64_t st = sp.inner;
                for (int64_t p = 0; p < sp.n; ++p) {
                    po[base + p * st] = px[base + index.order[static_cast<size_t>(base + p * st)] * st];
                }
            }
        }
    }
    if (recording({&x})) {
        NodePtr xn = x.node(), on = out.node();
        attach_backward(out, [xn, on, sp, order = index.order] {
            if (on->grad.empty() || !xn->requires_grad) return;
            ensure_grad(*xn);
            const double* og = on->grad.data();
            double* gx = xn->grad.data();
            for (int64_t o = 0; o < sp.outer; ++o) {
                for (int64_t i = 0; i < sp.inner; ++i) {
                    const int64_t base = o * sp.n * sp.inner + i;
                    const int64_t st = sp.inner;
                    for (int64_t p = 0; p < sp.n; ++p) {
                        gx[base + order[static_cast<size_t>(base + p * st)] * st] +=
                            og[base + p * st];
                    }
                }
            }
        });
    }
    return out;
}

std::pair<Tensor, SortIndex> sort_with_index(const Tensor& x, int axis) {
    const int ax = normalize_axis(axis, x.rank(), "sort_with_index");
    const AxisSplit sp = split_at(x.shape(), ax);
    SortIndex idx;
    idx.shape = x.shape();
    idx.axis = ax;
    idx.order.resize(static_cast<size_t>(x.numel()));
    const double* px = x.data().data();
    std::vector<int64_t> perm(static_cast<size_t>(sp.n));
    for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t i = 0; i < sp.inner; ++i) {
            const int64_t base = o * sp.n * sp.inner + i;
            const int64_t st = sp.inner;
            std::iota(perm.begin(), perm.end(), int64_t{0});
            std::stable_sort(perm.begin(), perm.end(), [px, base, st](int64_t l, int64_t r) {
                return px[base + l * st] < px[base + r * st];
            });
            for (int64_t p = 0; p < sp.n; ++p) {
                idx.order[static_cast<size_t>(base + p * st)] = perm[static_cast<size_t>(p)];
            }
        }
    }
    Tensor sorted = gather(x, idx);
    return {std::move(sorted), std::move(idx)};
}

} // namespace hformer
