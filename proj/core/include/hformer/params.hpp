#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "hformer/rng.hpp"
#include "hformer/tensor.hpp"

namespace hformer {

// Owns every trainable tensor of a model, keyed by a hierarchical dotted
// name. Creation order is the RNG consumption order (so a fixed build order
// yields bit-identical initializations), while iteration is name-sorted,
// which fixes the optimizer update order independently of build order.
class ParameterStore {
public:
    explicit ParameterStore(uint64_t seed) : rng_(seed) {}

    // Seeded N(0, stddev) initialization.
    Tensor normal(const std::string& name, Shape shape, double stddev = 0.02);
    Tensor zeros(const std::string& name, Shape shape);
    Tensor ones(const std::string& name, Shape shape);

    bool has(const std::string& name) const { return params_.count(name) != 0; }
    Tensor get(const std::string& name) const;

    const std::map<std::string, Tensor>& all() const { return params_; }
    size_t size() const { return params_.size(); }
    int64_t total_elements() const;

    void zero_grad();

private:
    Tensor insert(const std::string& name, Tensor t);

    Rng rng_;
    std::map<std::string, Tensor> params_;
};

} // namespace hformer
