#pragma once

#include <string>

#include "hformer/tensor.hpp"

namespace hformer {

// Peak signal-to-noise ratio in dB over all elements; +infinity when the
// images are identical.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// Mean structural similarity on the channel-averaged grayscale image, 8x8
// windows with stride 4, standard stabilizers C1=0.01^2, C2=0.03^2.
double ssim(const Tensor& a, const Tensor& b);

// Machine-readable "metric,<name>,<value>" line.
std::string metric_line(const std::string& name, double value);

} // namespace hformer
