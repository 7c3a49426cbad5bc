#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hformer/errors.hpp"

namespace hformer {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until backward touches this node
    bool requires_grad = false;
    Tape* tape = nullptr; // tape this node was recorded on; null for leaves
};

void ensure_grad(TensorNode& node);

} // namespace detail

// Dense row-major float64 tensor. Copies share the underlying node, so a
// Tensor behaves like a handle into the autodiff graph; ops produce fresh
// nodes and never mutate their inputs. Parameters are leaves whose storage
// is updated in place between optimizer steps, outside any tape.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from_data(Shape shape, std::vector<double> data);
    static Tensor scalar(double value);

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(n_->data.size()); }
    int64_t dim(int axis) const { return n_->shape[static_cast<size_t>(axis)]; }

    std::span<const double> data() const { return n_->data; }
    std::span<double> mutable_data() { return n_->data; }

    // Value of a single-element tensor.
    double value() const;

    bool requires_grad() const { return n_->requires_grad; }
    Tensor& set_requires_grad(bool flag);

    bool has_grad() const { return !n_->grad.empty(); }
    std::span<const double> grad() const { return n_->grad; }
    void zero_grad();

    bool all_finite() const;

    const std::shared_ptr<detail::TensorNode>& node() const { return n_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> n) : n_(std::move(n)) {}

    std::shared_ptr<detail::TensorNode> n_;
};

// Reverse-mode tape. Ops executed while a Tape::Scope is active append
// backward steps in creation order (already a topological order); backward
// runs them in reverse exactly once.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Seeds d(loss)/d(loss) = 1 and propagates to every recorded node.
    // loss must be a scalar produced on this tape; a second call throws.
    void backward(const Tensor& loss);

    bool consumed() const { return consumed_; }
    size_t node_count() const { return steps_.size(); }

    void record_step(std::function<void()> step) { steps_.push_back(std::move(step)); }

    static Tape* active();

    class Scope {
    public:
        explicit Scope(Tape& tape);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

private:
    std::vector<std::function<void()>> steps_;
    bool consumed_ = false;
};

namespace detail {

// True when a tape is active and at least one input participates in grad.
bool recording(std::initializer_list<const Tensor*> inputs);

// Marks `out` as produced on the active tape and appends its backward step.
void attach_backward(Tensor& out, std::function<void()> step);

} // namespace detail

} // namespace hformer
