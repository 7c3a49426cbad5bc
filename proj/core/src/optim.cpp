#include "hformer/optim.hpp"

#include <cmath>

#include "hformer/errors.hpp"

namespace hformer {

Adam::Adam(ParameterStore& params, double lr, double beta1, double beta2, double eps)
    : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, tensor] : params_.all()) {
        Slot slot;
        slot.m.assign(static_cast<size_t>(tensor.numel()), 0.0);
        slot.v.assign(static_cast<size_t>(tensor.numel()), 0.0);
        slots_.emplace(name, std::move(slot));
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [name, tensor] : params_.all()) {
        Slot& slot = slots_.at(name);
        Tensor param = tensor;
        double* p = param.mutable_data().data();
        const std::span<const double> g = param.grad();
        const size_t n = static_cast<size_t>(param.numel());
        for (size_t i = 0; i < n; ++i) {
            const double gi = g.empty() ? 0.0 : g[i];
            if (!std::isfinite(gi)) {
                throw NumericError("Adam: non-finite gradient in parameter " + name);
            }
            slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * gi;
            slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * gi * gi;
            const double mhat = slot.m[i] / bc1;
            const double vhat = slot.v[i] / bc2;
            p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::restore(uint64_t t, std::map<std::string, Slot> slots) {
    if (slots.size() != slots_.size()) {
        throw ConfigError("Adam: optimizer state has " + std::to_string(slots.size()) +
                          " slots, expected " + std::to_string(slots_.size()));
    }
    for (const auto& [name, slot] : slots) {
        auto it = slots_.find(name);
        if (it == slots_.end()) throw ConfigError("Adam: unknown slot " + name);
        if (slot.m.size() != it->second.m.size() || slot.v.size() != it->second.v.size()) {
            throw ConfigError("Adam: slot size mismatch for " + name);
        }
    }
    t_ = t;
    slots_ = std::move(slots);
}

} // namespace hformer
