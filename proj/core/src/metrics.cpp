#include "hformer/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include "hformer/errors.hpp"

namespace hformer {

double psnr(const Tensor& a, const Tensor& b, double peak) {
    if (a.shape() != b.shape()) {
        throw ShapeError("psnr: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = pa[i] - pb[i];
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace {

std::vector<double> to_gray(const Tensor& img) {
    const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2), plane = h * w;
    std::vector<double> gray(static_cast<size_t>(plane), 0.0);
    const double* p = img.data().data();
    for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t i = 0; i < plane; ++i) gray[static_cast<size_t>(i)] += p[ch * plane + i];
    }
    for (double& v : gray) v /= static_cast<double>(c);
    return gray;
}

} // namespace

double ssim(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("ssim: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    if (a.rank() != 3) throw ShapeError("ssim: expected [C,H,W], got " + shape_str(a.shape()));
    const int64_t h = a.dim(1), w = a.dim(2);
    constexpr int64_t kWin = 8, kStride = 4;
    if (h < kWin || w < kWin) throw ShapeError("ssim: image smaller than the 8x8 window");
    const std::vector<double> ga = to_gray(a);
    const std::vector<double> gb = to_gray(b);
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    constexpr double n = static_cast<double>(kWin * kWin);

    double total = 0.0;
    int64_t windows = 0;
    for (int64_t y = 0; y + kWin <= h; y += kStride) {
        for (int64_t x = 0; x + kWin <= w; x += kStride) {
            double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
            for (int64_t dy = 0; dy < kWin; ++dy) {
                for (int64_t dx = 0; dx < kWin; ++dx) {
                    const double va = ga[static_cast<size_t>((y + dy) * w + (x + dx))];
                    const double vb = gb[static_cast<size_t>((y + dy) * w + (x + dx))];
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            const double mu_a = sa / n, mu_b = sb / n;
            const double var_a = saa / n - mu_a * mu_a;
            const double var_b = sbb / n - mu_b * mu_b;
            const double cov = sab / n - mu_a * mu_b;
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                     ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            ++windows;
        }
    }
    return total / static_cast<double>(windows);
}

std::string metric_line(const std::string& name, double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", value);
    return "metric," + name + "," + buf;
}

} // namespace hformer
