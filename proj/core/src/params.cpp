#include "hformer/params.hpp"

#include <utility>

#include "hformer/errors.hpp"

namespace hformer {

Tensor ParameterStore::insert(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    auto [it, inserted] = params_.emplace(name, std::move(t));
    if (!inserted) throw ConfigError("duplicate parameter name: " + name);
    return it->second;
}

Tensor ParameterStore::normal(const std::string& name, Shape shape, double stddev) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_data()) v = rng_.normal(0.0, stddev);
    return insert(name, std::move(t));
}

Tensor ParameterStore::zeros(const std::string& name, Shape shape) {
    return insert(name, Tensor::zeros(std::move(shape)));
}

Tensor ParameterStore::ones(const std::string& name, Shape shape) {
    return insert(name, Tensor::full(std::move(shape), 1.0));
}

Tensor ParameterStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

int64_t ParameterStore::total_elements() const {
    int64_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& [name, t] : params_) {
        Tensor copy = t;
        copy.zero_grad();
    }
}

} // namespace hformer
