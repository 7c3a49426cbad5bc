#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hformer/params.hpp"

namespace hformer {

// Adam with bias correction. Moment slots are allocated eagerly for every
// parameter in name order, so optimizer state serializes deterministically.
class Adam {
public:
    struct Slot {
        std::vector<double> m, v;
    };

    explicit Adam(ParameterStore& params, double lr = 2e-4, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    // One update from the gradients currently on the parameters. A parameter
    // without a gradient is treated as having a zero gradient; a non-finite
    // gradient raises NumericError naming the parameter.
    void step();

    uint64_t steps() const { return t_; }
    const std::map<std::string, Slot>& slots() const { return slots_; }

    // Restores serialized state; slot names and sizes must match the store.
    void restore(uint64_t t, std::map<std::string, Slot> slots);

private:
    ParameterStore& params_;
    double lr_, beta1_, beta2_, eps_;
    uint64_t t_ = 0;
    std::map<std::string, Slot> slots_;
};

} // namespace hformer
