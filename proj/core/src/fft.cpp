#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "hformer/ops.hpp"
#include "ops_util.hpp"

namespace hformer {

using detail::attach_backward;
using detail::ensure_grad;
using detail::recording;

namespace {

using cplx = std::complex<double>;

// In-place iterative radix-2 transform; sign -1 is the forward DFT, +1 its
// unnormalized adjoint.
void fft1d(cplx* a, int64_t n, int sign) {
    for (int64_t i = 1, j = 0; i < n; ++i) {
        int64_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (int64_t len = 2; len <= n; len <<= 1) {
        const double ang = static_cast<double>(sign) * 2.0 * std::numbers::pi /
                           static_cast<double>(len);
        const cplx wl(std::cos(ang), std::sin(ang));
        for (int64_t i = 0; i < n; i += len) {
            cplx w(1.0, 0.0);
            for (int64_t j = 0; j < len / 2; ++j) {
                const cplx u = a[i + j];
                const cplx v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// Row transforms followed by column transforms on an H x W grid.
void fft2(std::vector<cplx>& grid, int64_t H, int64_t W, int sign) {
    for (int64_t y = 0; y < H; ++y) fft1d(grid.data() + y * W, W, sign);
    std::vector<cplx> col(static_cast<size_t>(H));
    for (int64_t x = 0; x < W; ++x) {
        for (int64_t y = 0; y < H; ++y) col[static_cast<size_t>(y)] = grid[static_cast<size_t>(y * W + x)];
        fft1d(col.data(), H, sign);
        for (int64_t y = 0; y < H; ++y) grid[static_cast<size_t>(y * W + x)] = col[static_cast<size_t>(y)];
    }
}

} // namespace

Tensor fft2_realimag(const Tensor& x) {
    if (x.rank() != 3) {
        throw ShapeError("fft2_realimag: expected a [C,H,W] feature map, got " +
                         shape_str(x.shape()));
    }
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (!detail::is_pow2(H) || !detail::is_pow2(W)) {
        throw ConfigError("fft2_realimag: spatial size must be a power of two, got " +
                         shape_str(x.shape()));
    }
    Tensor out = Tensor::zeros({C, 2, H, W});
    {
        const double* X = x.data().data();
        double* O = out.mutable_data().data();
        std::vector<cplx> grid(static_cast<size_t>(H * W));
        for (int64_t c = 0; c < C; ++c) {
            const double* xp = X + c * H * W;
            for (int64_t p = 0; p < H * W; ++p) grid[static_cast<size_t>(p)] = cplx(xp[p], 0.0);
            fft2(grid, H, W, -1);
            double* re = O + c * 2 * H * W;
            double* im = re + H * W;
            for (int64_t p = 0; p < H * W; ++p) {
                re[p] = grid[static_cast<size_t>(p)].real();
                im[p] = grid[static_cast<size_t>(p)].imag();
            }
        }
    }
    if (recording({&x})) {
        auto xn = x.node();
        auto on = out.node();
        attach_backward(out, [xn, on, C, H, W] {
            if (on->grad.empty() || !xn->requires_grad) return;
            ensure_grad(*xn);
            const double* OG = on->grad.data();
            std::vector<cplx> grid(static_cast<size_t>(H * W));
            for (int64_t c = 0; c < C; ++c) {
                const double* gre = OG + c * 2 * H * W;
                const double* gim = gre + H * W;
                for (int64_t p = 0; p < H * W; ++p) {
                    grid[static_cast<size_t>(p)] = cplx(gre[p], gim[p]);
                }
                fft2(grid, H, W, +1);
                double* gx = xn->grad.data() + c * H * W;
                for (int64_t p = 0; p < H * W; ++p) gx[p] += grid[static_cast<size_t>(p)].real();
            }
        });
    }
    return out;
}

} // namespace hformer
