#pragma once

#include <cstdint>
#include <vector>

#include "hformer/tensor.hpp"

namespace hformer {

struct LossWeights {
    double perceptual = 0.04;
    double frequency = 0.004;

    bool operator==(const LossWeights&) const = default;
};

// Scalar loss graph node plus per-term values for logging.
struct LossTerms {
    Tensor total;
    double l1 = 0.0;
    double perceptual = 0.0;
    double frequency = 0.0;
};

// Mean Huber penalty (delta 1) over elementwise differences.
Tensor smooth_l1(const Tensor& pred, const Tensor& target);

Tensor mse(const Tensor& pred, const Tensor& target);

// Frozen, seeded random feature pyramid: three stages of two
// depthwise-separable 3x3 convolutions with ReLU, tapped after each stage and
// downsampled 2x between stages. The fixed weights never train, but gradients
// flow through them to the image input.
class PerceptualExtractor {
public:
    explicit PerceptualExtractor(uint64_t seed);

    // Input [3,H,W]; returns the three stage taps.
    std::vector<Tensor> features(const Tensor& image) const;

private:
    struct SepConv {
        Tensor dw_w, dw_b; // [C,3,3], [C]
        Tensor pw_w, pw_b; // [Cout,C], [Cout]
    };
    Tensor apply(const SepConv& conv, const Tensor& x) const;

    std::vector<SepConv> convs_; // 6 convs: 3->8, 8->8, 8->16, 16->16, 16->32, 32->32
};

// Sum of per-tap feature MSEs.
Tensor perceptual_loss(const PerceptualExtractor& extractor, const Tensor& pred,
                       const Tensor& target);

// MSE between stacked real/imaginary 2-D DFT planes of pred and target.
Tensor frequency_loss(const Tensor& pred, const Tensor& target);

LossTerms total_loss(const PerceptualExtractor& extractor, const Tensor& pred,
                     const Tensor& target, const LossWeights& weights);

} // namespace hformer
