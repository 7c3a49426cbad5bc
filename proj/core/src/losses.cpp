#include "hformer/losses.hpp"

#include <cmath>

#include "hformer/errors.hpp"
#include "hformer/ops.hpp"
#include "hformer/rng.hpp"

namespace hformer {

Tensor smooth_l1(const Tensor& pred, const Tensor& target) {
    return mean(huber(sub(pred, target)));
}

Tensor mse(const Tensor& pred, const Tensor& target) {
    const Tensor d = sub(pred, target);
    return mean(mul(d, d));
}

PerceptualExtractor::PerceptualExtractor(uint64_t seed) {
    Rng rng(seed);
    const int64_t widths[7] = {3, 8, 8, 16, 16, 32, 32};
    for (int i = 0; i < 6; ++i) {
        const int64_t cin = widths[i], cout = widths[i + 1];
        SepConv conv;
        conv.dw_w = Tensor::zeros({cin, 3, 3});
        conv.dw_b = Tensor::zeros({cin});
        conv.pw_w = Tensor::zeros({cout, cin});
        conv.pw_b = Tensor::zeros({cout});
        const double dw_std = std::sqrt(2.0 / 9.0);
        const double pw_std = std::sqrt(2.0 / static_cast<double>(cin));
        for (double& v : conv.dw_w.mutable_data()) v = rng.normal(0.0, dw_std);
        for (double& v : conv.pw_w.mutable_data()) v = rng.normal(0.0, pw_std);
        convs_.push_back(std::move(conv));
    }
}

Tensor PerceptualExtractor::apply(const SepConv& conv, const Tensor& x) const {
    return relu(conv2d_pointwise(conv2d_depthwise(x, conv.dw_w, conv.dw_b), conv.pw_w,
                                 conv.pw_b));
}

std::vector<Tensor> PerceptualExtractor::features(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("PerceptualExtractor: expected [3,H,W], got " +
                         shape_str(image.shape()));
    }
    std::vector<Tensor> taps;
    Tensor x = apply(convs_[1], apply(convs_[0], image));
    taps.push_back(x);
    x = apply(convs_[3], apply(convs_[2], bilinear_down2(x)));
    taps.push_back(x);
    x = apply(convs_[5], apply(convs_[4], bilinear_down2(x)));
    taps.push_back(x);
    return taps;
}

Tensor perceptual_loss(const PerceptualExtractor& extractor, const Tensor& pred,
                       const Tensor& target) {
    const std::vector<Tensor> fp = extractor.features(pred);
    const std::vector<Tensor> ft = extractor.features(target);
    Tensor loss = mse(fp[0], ft[0]);
    for (size_t i = 1; i < fp.size(); ++i) loss = add(loss, mse(fp[i], ft[i]));
    return loss;
}

Tensor frequency_loss(const Tensor& pred, const Tensor& target) {
    return mse(fft2_realimag(pred), fft2_realimag(target));
}

LossTerms total_loss(const PerceptualExtractor& extractor, const Tensor& pred,
                     const Tensor& target, const LossWeights& weights) {
    LossTerms terms;
    const Tensor l1 = smooth_l1(pred, target);
    const Tensor perc = perceptual_loss(extractor, pred, target);
    const Tensor freq = frequency_loss(pred, target);
    terms.total = add(l1, add(scale(perc, weights.perceptual), scale(freq, weights.frequency)));
    terms.l1 = l1.value();
    terms.perceptual = perc.value();
    terms.frequency = freq.value();
    return terms;
}

} // namespace hformer
