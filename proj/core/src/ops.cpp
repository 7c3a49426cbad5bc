#include "hformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include "ops_util.hpp"

namespace hformer {

using detail::AxisSplit;
using detail::attach_backward;
using detail::check_same_shape;
using detail::ensure_grad;
using detail::normalize_axis;
using detail::recording;
using detail::split_at;
using detail::TensorNode;

namespace {

using NodePtr = std::shared_ptr<TensorNode>;

void accumulate(TensorNode& node, const std::vector<double>& delta) {
    ensure_grad(node);
    for (size_t i = 0; i < delta.size(); ++i) node.grad[i] += delta[i];
}

} // namespace

// ---------------------------------------------------------------------------
// Elementwise / scalar
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    double* o = out.mutable_data().data();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    const size_t n = a.data().size();
    for (size_t i = 0; i < n; ++i) o[i] = pa[i] + pb[i];
    if (recording({&a, &b})) {
        NodePtr an = a.node(), bn = b.node(), on = out.node();
        attach_backward(out, [an, bn, on] {
            if (on->grad.empty()) return;
            if (an->requires_grad) accumulate(*an, on->grad);
            if (bn->requires_grad) accumulate(*bn, on->grad);
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    double* o = out.mutable_data().data();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    const size_t n = a.data().size();
    for (size_t i = 0; i < n; ++i) o[i] = pa[i] - pb[i];
    if (recording({&a, &b})) {
        NodePtr an = a.node(), bn = b.node(), on = out.node();
        attach_backward(out, [an, bn, on] {
            if (on->grad.empty()) return;
            const auto& og = on->grad;
            if (an->requires_grad) accumulate(*an, og);
            if (bn->requires_grad) {
                ensure_grad(*bn);
                for (size_t i = 0; i < og.size(); ++i) bn->grad[i] -= og[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    double* o = out.mutable_data().data();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    const size_t n = a.data().size();
    for (size_t i = 0; i < n; ++i) o[i] = pa[i] * pb[i];
    if (recording({&a, &b})) {
        NodePtr an = a.node(), bn = b.node(), on = out.node();
        attach_backward(out, [an, bn, on] {
            if (on->grad.empty()) return;
            const auto& og = on->grad;
            if (an->requires_grad) {
                ensure_grad(*an);
                for (size_t i = 0; i < og.size(); ++i) an->grad[i] += og[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                ensure_grad(*bn);
                for (size_t i = 0; i < og.size(); ++i) bn->grad[i] += og[i] * an->data[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape());
    double* o = out.mutable_data().data();
    const double* px = x.data().data();
    const size_t n = x.data().size();
    for (size_t i = 0; i < n; ++i) o[i] = c * px[i];
    if (recording({&x})) {
        NodePtr xn = x.node(), on = out.node();
        attach_backward(out, [xn, on, c] {
            if (on->grad.empty() || !xn->requires_grad) return;
            ensure_grad(*xn);
            for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += c * on->grad[i];
        });
    }
    return out;
}

Tensor add_scalar(const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape());
    double* o = out.mutable_data().data();
    const double* px = x.data().data();
    const size_t n = x.data().size();
    for (size_t i = 0; i < n; ++i) o[i] = px[i] + c;
    if (recording({&x})) {
        NodePtr xn = x.node(), on = out.node();
        attach_backward(out, [xn, on] {
            if (on->grad.empty() || !xn->requires_grad) return;
            accumulate(*xn, on->grad);
        });
    }
    return out;
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1) {
        throw ShapeError("scale_by: scale must be a single element, shape is " +
                         shape_str(s.shape()));
    }
    const double sv = s.data()[0];
    Tensor out = Tensor::zeros(x.shape());
    double* o = out.mutable_data().data();
    const double* px = x.data().data();
    const size_t n = x.data().size();
    for (size_t i = 0; i < n; ++i) o[i] = sv * px[i];
    if (recording({&x, &s})) {
        NodePtr xn = x.node(), sn = s.node(), on = out.node();
        attach_backward(out, [xn, sn, on] {
            if (on->grad.empty()) return;
            const auto& og = on->grad;
            if (xn->requires_grad) {
                ensure_grad(*xn);
                const double sv2 = sn->data[0];
                for (size_t i = 0; i < og.size(); ++i) xn->grad[i] += sv2 * og[i];
            }
            if (sn->requires_grad) {
                ensure_grad(*sn);
                double acc = 0.0;
                for (size_t i = 0; i < og.size(); ++i) acc += og[i] * xn->data[i];
                sn->grad[0] += acc;
            }
        });
    }
    return out;
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor clamp01(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    double* o = out.mutable_data().data();
    const double* px = x.data().data();
    const size_t n = x.data().size();
    for (size_t i = 0; i < n; ++i) o[i] = px[i] < 0.0 ? 0.0 : (px[i] > 1.0 ? 1.0 : px[i]);
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    double* o = out.mutable_data().data();
    const double* px = x.data().data();
    const size_t n = x.data().size();
    for (size_t i = 0; i < n; ++i) o[i] = px[i] > 0.0 ? px[i] : 0.0;
    if (recording({&x})) {
        NodePtr xn = x.node(), on = out.node();
        attach_backward(out, [xn, on] {
            if (on->grad.empty() || !xn->requires_grad) return;
            ensure_grad(*xn);
            for (size_t i = 0; i < on->grad.size(); ++i) {
                if (xn->data[i] > 0.0) xn->grad[i] += on->grad[i];
            }
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    double* o = out.mutable_data().data();
    const double* px = x.data().data();
    const size_t n = x.data().size();
    for (size_t i = 0; i < n; ++i) {
        const double v = px[i];
        if (v >= 0.0) {
            o[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            o[i] = e / (1.0 + e);
        }
    }
    if (recording({&x})) {
        NodePtr xn = x.node(), on = out.node();
        attach_backward(out, [xn, on] {
            if (on->grad.empty() || !xn->requires_grad) return;
            ensure_grad(*xn);
            for (size_t i = 0; i < on->grad.size(); ++i) {
                const double s = on->data[i];
                xn->grad[i] += on->grad[i] * s * (1.0 - s);
            }
        });
    }
    return out;
}

Tensor huber(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    double* o = out.mutable_data().data();
    const double* px = x.data().data();
    const size_t n = x.data().size();
    for (size_t i = 0; i < n; ++i) {
        const double a = std::abs(px[i]);
        o[i] = a < 1.0 ? 0.5 * px[i] * px[i] : a - 0.5;
    }
    if (recording({&x})) {
        NodePtr xn = x.node(), on = out.node();
        attach_backward(out, [xn, on] {
            if (on->grad.empty() || !xn->requires_grad) return;
            ensure_grad(*xn);
            for (size_t i = 0; i < on->grad.size(); ++i) {
                const double v = xn->data[i];
                const double d = std::abs(v) < 1.0 ? v : (v > 0.0 ? 1.0 : -1.0);
                xn->grad[i] += on->grad[i] * d;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul: inputs must have rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    const int64_t M = as[static_cast<size_t>(a.rank() - 2)];
    const int64_t K = as[static_cast<size_t>(a.rank() - 1)];
    const int64_t Kb = bs[static_cast<size_t>(b.rank() - 2)];
    const int64_t N = bs[static_cast<size_t>(b.rank() - 1)];
    if (K != Kb) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(as) + " x " +
                         shape_str(bs));
    }

    const int ba = a.rank() - 2;
    const int bb = b.rank() - 2;
    const int nb = std::max(ba, bb);
    std::vector<int64_t> da(static_cast<size_t>(nb), 1), db(static_cast<size_t>(nb), 1);
    for (int i = 0; i < ba; ++i) da[static_cast<size_t>(nb - ba + i)] = as[static_cast<size_t>(i)];
    for (int i = 0; i < bb; ++i) db[static_cast<size_t>(nb - bb + i)] = bs[static_cast<size_t>(i)];
    Shape batch(static_cast<size_t>(nb));
    for (int i = 0; i < nb; ++i) {
        const int64_t x = da[static_cast<size_t>(i)], y = db[static_cast<size_t>(i)];
        if (x != y && x != 1 && y != 1) {
            throw ShapeError("matmul: batch dimensions incompatible, " + shape_str(as) + " x " +
                             shape_str(bs));
        }
        batch[static_cast<size_t>(i)] = std::max(x, y);
    }
    int64_t nbatch = 1;
    for (int64_t d : batch) nbatch *= d;

    // Element offsets of each operand's matrix for every output batch index;
    // broadcast dimensions contribute stride zero.
    std::vector<int64_t> sa(static_cast<size_t>(nb)), sb(static_cast<size_t>(nb));
    {
        int64_t acc = M * K;
        for (int i = nb - 1; i >= 0; --i) {
            sa[static_cast<size_t>(i)] = da[static_cast<size_t>(i)] == 1 ? 0 : acc;
            acc *= da[static_cast<size_t>(i)];
        }
        acc = K * N;
        for (int i = nb - 1; i >= 0; --i) {
            sb[static_cast<size_t>(i)] = db[static_cast<size_t>(i)] == 1 ? 0 : acc;
            acc *= db[static_cast<size_t>(i)];
        }
    }
    std::vector<int64_t> aoff(static_cast<size_t>(nbatch)), boff(static_cast<size_t>(nbatch));
    for (int64_t idx = 0; idx < nbatch; ++idx) {
        int64_t rem = idx, ao = 0, bo = 0;
        for (int i = nb - 1; i >= 0; --i) {
            const int64_t c = rem % batch[static_cast<size_t>(i)];
            rem /= batch[static_cast<size_t>(i)];
            ao += c * sa[static_cast<size_t>(i)];
            bo += c * sb[static_cast<size_t>(i)];
        }
        aoff[static_cast<size_t>(idx)] = ao;
        boff[static_cast<size_t>(idx)] = bo;
    }

    Shape oshape = batch;
    oshape.push_back(M);
    oshape.push_back(N);
    Tensor out = Tensor::zeros(oshape);
    {
        const double* A = a.data().data();
        const double* B = b.data().data();
        double* O = out.mutable_data().data();
        for (int64_t bi = 0; bi < nbatch; ++bi) {
            const double* Ab = A + aoff[static_cast<size_t>(bi)];
            const double* Bb = B + boff[static_cast<size_t>(bi)];
            double* Ob = O + bi * M * N;
            for (int64_t m = 0; m < M; ++m) {
                double* orow = Ob + m * N;
                const double* arow = Ab + m * K;
                for (int64_t k = 0; k < K; ++k) {
                    const double amk = arow[k];
                    const double* brow = Bb + k * N;
                    for (int64_t n = 0; n < N; ++n) orow[n] += amk * brow[n];
                }
            }
        }
    }

    if (recording({&a, &b})) {
        NodePtr an = a.node(), bn = b.node(), on = out.node();
        attach_backward(out, [an, bn, on, aoff, boff, nbatch, M, K, N] {
            if (on->grad.empty()) return;
            const double* OG = on->grad.data();
            if (an->requires_grad) {
                ensure_grad(*an);
                const double* B = bn->data.data();
                for (int64_t bi = 0; bi < nbatch; ++bi) {
                    double* gA = an->grad.data() + aoff[static_cast<size_t>(bi)];
                    const double* Bb = B + boff[static_cast<size_t>(bi)];
                    const double* OGb = OG + bi * M * N;
                    for (int64_t m = 0; m < M; ++m) {
                        const double* ogrow = OGb + m * N;
                        double* garow = gA + m * K;
                        for (int64_t k = 0; k < K; ++k) {
                            const double* brow = Bb + k * N;
                            double acc = 0.0;
                            for (int64_t n = 0; n < N; ++n) acc += ogrow[n] * brow[n];
                            garow[k] += acc;
                        }
                    }
                }
            }
            if (bn->requires_grad) {
                ensure_grad(*bn);
                const double* A = an->data.data();
                for (int64_t bi = 0; bi < nbatch; ++bi) {
                    const double* Ab = A + aoff[static_cast<size_t>(bi)];
                    double* gB = bn->grad.data() + boff[static_cast<size_t>(bi)];
                    const double* OGb = OG + bi * M * N;
                    for (int64_t m = 0; m < M; ++m) {
                        const double* arow = Ab + m * K;
                        const double* ogrow = OGb + m * N;
                        for (int64_t k = 0; k < K; ++k) {
                            const double amk = arow[k];
                            double* gbrow = gB + k * N;
                            for (int64_t n = 0; n < N; ++n) gbrow[n] += amk * ogrow[n];
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    const int ax = normalize_axis(axis, x.rank(), "softmax");
    const AxisSplit sp = split_at(x.shape(), ax);
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.data().data();
    double* po = out.mutable_data().data();
    for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t i = 0; i < sp.inner; ++i) {
            const int64_t base = o * sp.n * sp.inner + i;
            const int64_t st = sp.inner;
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t j = 0; j < sp.n; ++j) mx = std::max(mx, px[base + j * st]);
            double s = 0.0;
            for (int64_t j = 0; j < sp.n; ++j) {
                const double e = std::exp(px[base + j * st] - mx);
                po[base + j * st] = e;
                s += e;
            }
            const double inv = 1.0 / s;
            for (int64_t j = 0; j < sp.n; ++j) po[base + j * st] *= inv;
        }
    }
    if (recording({&x})) {
        NodePtr xn = x.node(), on = out.node();
        attach_backward(out, [xn, on, sp] {
            if (on->grad.empty() || !xn->requires_grad) return;
            ensure_grad(*xn);
            const double* so = on->data.data();
            const double* og = on->grad.data();
            double* gx = xn->grad.data();
            for (int64_t o = 0; o < sp.outer; ++o) {
                for (int64_t i = 0; i < sp.inner; ++i) {
                    const int64_t base = o * sp.n * sp.inner + i;
                    const int64_t st = sp.inner;
                    double dot = 0.0;
                    for (int64_t j = 0; j < sp.n; ++j) dot += og[base + j * st] * so[base + j * st];
                    for (int64_t j = 0; j < sp.n; ++j) {
                        gx[base + j * st] += so[base + j * st] * (og[base + j * st] - dot);
                    }
                }
            }
        });
    }
    return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int axis, double eps) {
    const int ax = normalize_axis(axis, x.rank(), "layernorm");
    const AxisSplit sp = split_at(x.shape(), ax);
    if (gamma.rank() != 1 || gamma.dim(0) != sp.n || beta.rank() != 1 || beta.dim(0) != sp.n) {
        throw ShapeError("layernorm: gamma/beta must have shape [" + std::to_string(sp.n) +
                         "], got " + shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    }
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.data().data();
    const double* pg = gamma.data().data();
    const double* pb = beta.data().data();
    double* po = out.mutable_data().data();
    std::vector<double> xhat(x.data().size());
    std::vector<double> invs(static_cast<size_t>(sp.outer * sp.inner));
    const double dn = static_cast<double>(sp.n);
    for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t i = 0; i < sp.inner; ++i) {
            const int64_t base = o * sp.n * sp.inner + i;
            const int64_t st = sp.inner;
            double mu = 0.0;
            for (int64_t j = 0; j < sp.n; ++j) mu += px[base + j * st];
            mu /= dn;
            double var = 0.0;
            for (int64_t j = 0; j < sp.n; ++j) {
                const double d = px[base + j * st] - mu;
                var += d * d;
            }
            var /= dn;
            const double inv = 1.0 / std::sqrt(var + eps);
            invs[static_cast<size_t>(o * sp.inner + i)] = inv;
            for (int64_t j = 0; j < sp.n; ++j) {
                const double xh = (px[base + j * st] - mu) * inv;
                xhat[static_cast<size_t>(base + j * st)] = xh;
                po[base + j * st] = pg[j] * xh + pb[j];
            }
        }
    }
    if (recording({&x, &gamma, &beta})) {
        NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
        attach_backward(out, [xn, gn, bn, on, sp, xhat = std::move(xhat),
                              invs = std::move(invs)] {
            if (on->grad.empty()) return;
            const double* og = on->grad.data();
            const double* pg2 = gn->data.data();
            const double dn2 = static_cast<double>(sp.n);
            if (xn->requires_grad) ensure_grad(*xn);
            if (gn->requires_grad) ensure_grad(*gn);
            if (bn->requires_grad) ensure_grad(*bn);
            for (int64_t o = 0; o < sp.outer; ++o) {
                for (int64_t i = 0; i < sp.inner; ++i) {
                    const int64_t base = o * sp.n * sp.inner + i;
                    const int64_t st = sp.inner;
                    if (xn->requires_grad) {
                        const double inv = invs[static_cast<size_t>(o * sp.inner + i)];
                        double mgh = 0.0, mghx = 0.0;
                        for (int64_t j = 0; j < sp.n; ++j) {
                            const double gh = og[base + j * st] * pg2[j];
                            mgh += gh;
                            mghx += gh * xhat[static_cast<size_t>(base + j * st)];
                        }
                        mgh /= dn2;
                        mghx /= dn2;
                        for (int64_t j = 0; j < sp.n; ++j) {
                            const double gh = og[base + j * st] * pg2[j];
                            const double xh = xhat[static_cast<size_t>(base + j * st)];
                            xn->grad[static_cast<size_t>(base + j * st)] +=
                                inv * (gh - mgh - xh * mghx);
                        }
                    }
                    if (gn->requires_grad) {
                        for (int64_t j = 0; j < sp.n; ++j) {
                            gn->grad[static_cast<size_t>(j)] +=
                                og[base + j * st] * xhat[static_cast<size_t>(base + j * st)];
                        }
                    }
                    if (bn->requires_grad) {
                        for (int64_t j = 0; j < sp.n; ++j) {
                            bn->grad[static_cast<size_t>(j)] += og[base + j * st];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    }
    Tensor out = Tensor::from_data(std::move(shape),
                                   std::vector<double>(x.data().begin(), x.data().end()));
    if (recording({&x})) {
        NodePtr xn = x.node(), on = out.node();
        attach_backward(out, [xn, on] {
            if (on->grad.empty() || !xn->requires_grad) return;
            accumulate(*xn, on->grad);
        });
    }
    return out;
}

Tensor transpose(const Tensor& x, std::vector<int> perm) {
    const int rank = x.rank();
    if (static_cast<int>(perm.size()) != rank) {
        throw ShapeError("transpose: permutation length " + std::to_string(perm.size()) +
                         " does not match rank " + std::to_string(rank));
    }
    std::vector<bool> seen(static_cast<size_t>(rank), false);
    for (int p : perm) {
        if (p < 0 || p >= rank || seen[static_cast<size_t>(p)]) {
            throw ShapeError("transpose: invalid permutation");
        }
        seen[static_cast<size_t>(p)] = true;
    }
    const Shape& xs = x.shape();
    std::vector<int64_t> xstr(static_cast<size_t>(rank));
    {
        int64_t acc = 1;
        for (int i = rank - 1; i >= 0; --i) {
            xstr[static_cast<size_t>(i)] = acc;
            acc *= xs[static_cast<size_t>(i)];
        }
    }
    Shape oshape(static_cast<size_t>(rank));
    std::vector<int64_t> srcstr(static_cast<size_t>(rank));
    for (int j = 0; j < rank; ++j) {
        oshape[static_cast<size_t>(j)] = xs[static_cast<size_t>(perm[static_cast<size_t>(j)])];
        srcstr[static_cast<size_t>(j)] = xstr[static_cast<size_t>(perm[static_cast<size_t>(j)])];
    }
    Tensor out = Tensor::zeros(oshape);
    const int64_t total = x.numel();
    {
        const double* px = x.data().data();
        double* po = out.mutable_data().data();
        std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
        int64_t src = 0;
        for (int64_t of = 0; of < total; ++of) {
            po[of] = px[src];
            for (int j = rank - 1; j >= 0; --j) {
                ++idx[static_cast<size_t>(j)];
                src += srcstr[static_cast<size_t>(j)];
                if (idx[static_cast<size_t>(j)] < oshape[static_cast<size_t>(j)]) break;
                src -= oshape[static_cast<size_t>(j)] * srcstr[static_cast<size_t>(j)];
                idx[static_cast<size_t>(j)] = 0;
            }
        }
    }
    if (recording({&x})) {
        NodePtr xn = x.node(), on = out.node();
        attach_backward(out, [xn, on, oshape, srcstr, total, rank] {
            if (on->grad.empty() || !xn->requires_grad) return;
            ensure_grad(*xn);
            const double* og = on->grad.data();
            double* gx = xn->grad.data();
            std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
            int64_t src = 0;
            for (int64_t of = 0; of < total; ++of) {
                gx[src] += og[of];
                for (int j = rank - 1; j >= 0; --j) {
                    ++idx[static_cast<size_t>(j)];
                    src += srcstr[static_cast<size_t>(j)];
                    if (idx[static_cast<size_t>(j)] < oshape[static_cast<size_t>(j)]) break;
                    src -= oshape[static_cast<size_t>(j)] * srcstr[static_cast<size_t>(j)];
                    idx[static_cast<size_t>(j)] = 0;
                }
            }
        });
    }
    return out;
}

Tensor concat(std::span<const Tensor> parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const int rank = parts[0].rank();
    const int ax = normalize_axis(axis, rank, "concat");
    int64_t total_n = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
        for (int d = 0; d < rank; ++d) {
            if (d != ax && p.dim(d) != parts[0].dim(d)) {
                throw ShapeError("concat: shape mismatch " + shape_str(parts[0].shape()) +
                                 " vs " + shape_str(p.shape()));
            }
        }
        total_n += p.dim(ax);
    }
    Shape oshape = parts[0].shape();
    oshape[static_cast<size_t>(ax)] = total_n;
    const AxisSplit osp = split_at(oshape, ax);
    Tensor out = Tensor::zeros(oshape);
    double* po = out.mutable_data().data();
    std::vector<int64_t> chunks;
    chunks.reserve(parts.size());
    for (const Tensor& p : parts) chunks.push_back(p.dim(ax) * osp.inner);
    const int64_t ochunk = total_n * osp.inner;
    for (int64_t o = 0; o < osp.outer; ++o) {
        int64_t off = o * ochunk;
        for (size_t pi = 0; pi < parts.size(); ++pi) {
            const double* px = parts[pi].data().data() + o * chunks[pi];
            std::memcpy(po + off, px, static_cast<size_t>(chunks[pi]) * sizeof(double));
            off += chunks[pi];
        }
    }
    bool rec = false;
    for (const Tensor& p : parts) {
        if (recording({&p})) {
            rec = true;
            break;
        }
    }
    if (rec) {
        std::vector<NodePtr> nodes;
        nodes.reserve(parts.size());
        for (const Tensor& p : parts) nodes.push_back(p.node());
        NodePtr on = out.node();
        const int64_t outer = osp.outer;
        attach_backward(out, [nodes, on, chunks, ochunk, outer] {
            if (on->grad.empty()) return;
            const double* og = on->grad.data();
            for (int64_t o = 0; o < outer; ++o) {
                int64_t off = o * ochunk;
                for (size_t pi = 0; pi < nodes.size(); ++pi) {
                    if (nodes[pi]->requires_grad) {
                        ensure_grad(*nodes[pi]);
                        double* gp = nodes[pi]->grad.data() + o * chunks[pi];
                        for (int64_t i = 0; i < chunks[pi]; ++i) gp[i] += og[off + i];
                    }
                    off += chunks[pi];
                }
            }
        });
    }
    return out;
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    const Tensor parts[] = {a, b};
    return concat(std::span<const Tensor>(parts, 2), axis);
}

Tensor slice_axis(const Tensor& x, int axis, int64_t start, int64_t len) {
    const int ax = normalize_axis(axis, x.rank(), "slice_axis");
    const AxisSplit sp = split_at(x.shape(), ax);
    if (start < 0 || len <= 0 || start + len > sp.n) {
        throw ShapeError("slice_axis: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for size " +
                         std::to_string(sp.n));
    }
    Shape oshape = x.shape();
    oshape[static_cast<size_t>(ax)] = len;
    Tensor out = Tensor::zeros(oshape);
    const double* px = x.data().data();
    double* po = out.mutable_data().data();
    const int64_t xchunk = sp.n * sp.inner;
    const int64_t ochunk = len * sp.inner;
    for (int64_t o = 0; o < sp.outer; ++o) {
        std::memcpy(po + o * ochunk, px + o * xchunk + start * sp.inner,
                    static_cast<size_t>(ochunk) * sizeof(double));
    }
    if (recording({&x})) {
        NodePtr xn = x.node(), on = out.node();
        const int64_t outer = sp.outer, inner = sp.inner;
        attach_backward(out, [xn, on, outer, inner, start, len, xchunk, ochunk] {
            if (on->grad.empty() || !xn->requires_grad) return;
            ensure_grad(*xn);
            const double* og = on->grad.data();
            double* gx = xn->grad.data();
            for (int64_t o = 0; o < outer; ++o) {
                double* gp = gx + o * xchunk + start * inner;
                const double* op = og + o * ochunk;
                for (int64_t i = 0; i < ochunk; ++i) gp[i] += op[i];
            }
        });
    }
    return out;
}

Tensor add_bias_rows(const Tensor& x, const Tensor& bias) {
    if (x.rank() < 1 || bias.rank() != 1 || bias.dim(0) != x.dim(x.rank() - 1)) {
        throw ShapeError("add_bias_rows: bias " + shape_str(bias.shape()) +
                         " does not match last dimension of " + shape_str(x.shape()));
    }
    const int64_t n = bias.dim(0);
    const int64_t rows = x.numel() / n;
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.data().data();
    const double* pb = bias.data().data();
    double* po = out.mutable_data().data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = px + r * n;
        double* orow = po + r * n;
        for (int64_t j = 0; j < n; ++j) orow[j] = xr[j] + pb[j];
    }
    if (recording({&x, &bias})) {
        NodePtr xn = x.node(), bn = bias.node(), on = out.node();
        attach_backward(out, [xn, bn, on, rows, n] {
            if (on->grad.empty()) return;
            const double* og = on->grad.data();
            if (xn->requires_grad) accumulate(*xn, on->grad);
            if (bn->requires_grad) {
                ensure_grad(*bn);
                for (int64_t r = 0; r < rows; ++r) {
                    const double* orow = og + r * n;
                    for (int64_t j = 0; j < n; ++j) bn->grad[static_cast<size_t>(j)] += orow[j];
                }
            }
        });
    }
    return out;
}

Tensor pad_repeat_last(const Tensor& x, int axis, int64_t count) {
    const int ax = normalize_axis(axis, x.rank(), "pad_repeat_last");
    if (count < 0) throw ShapeError("pad_repeat_last: negative count");
    const AxisSplit sp = split_at(x.shape(), ax);
    Shape oshape = x.shape();
    oshape[static_cast<size_t>(ax)] = sp.n + count;
    Tensor out = Tensor::zeros(oshape);
    const double* px = x.data().data();
    double* po = out.mutable_data().data();
    const int64_t xchunk = sp.n * sp.inner;
    const int64_t ochunk = (sp.n + count) * sp.inner;
    for (int64_t o = 0; o < sp.outer; ++o) {
        std::memcpy(po + o * ochunk, px + o * xchunk, static_cast<size_t>(xchunk) * sizeof(double));
        const double* last = px + o * xchunk + (sp.n - 1) * sp.inner;
        for (int64_t p = 0; p < count; ++p) {
            std::memcpy(po + o * ochunk + (sp.n + p) * sp.inner, last,
                        static_cast<size_t>(sp.inner) * sizeof(double));
        }
    }
    if (recording({&x})) {
        NodePtr xn = x.node(), on = out.node();
        attach_backward(out, [xn, on, sp, count, xchunk, ochunk] {
            if (on->grad.empty() || !xn->requires_grad) return;
            ensure_grad(*xn);
            const double* og = on->grad.data();
            double* gx = xn->grad.data();
            for (int64_t o = 0; o < sp.outer; ++o) {
                const double* op = og + o * ochunk;
                double* gp = gx + o * xchunk;
                for (int64_t i = 0; i < xchunk; ++i) gp[i] += op[i];
                double* glast = gp + (sp.n - 1) * sp.inner;
                for (int64_t p = 0; p < count; ++p) {
                    const double* orow = op + (sp.n + p) * sp.inner;
                    for (int64_t i = 0; i < sp.inner; ++i) glast[i] += orow[i];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor out = Tensor::scalar(acc);
    if (recording({&x})) {
        NodePtr xn = x.node(), on = out.node();
        attach_backward(out, [xn, on] {
            if (on->grad.empty() || !xn->requires_grad) return;
            ensure_grad(*xn);
            const double g = on->grad[0];
            for (double& v : xn->grad) v += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    const double inv = 1.0 / static_cast<double>(x.numel());
    Tensor out = Tensor::scalar(acc * inv);
    if (recording({&x})) {
        NodePtr xn = x.node(), on = out.node();
        attach_backward(out, [xn, on, inv] {
            if (on->grad.empty() || !xn->requires_grad) return;
            ensure_grad(*xn);
            const double g = on->grad[0] * inv;
            for (double& v : xn->grad) v += g;
        });
    }
    return out;
}

} // namespace hformer
