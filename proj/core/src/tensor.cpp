#include "hformer/tensor.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace hformer {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

void ensure_grad(TensorNode& node) {
    if (node.grad.empty()) node.grad.assign(node.data.size(), 0.0);
}

} // namespace detail

static void check_shape(const Shape& shape) {
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
}

Tensor Tensor::zeros(Shape shape) {
    check_shape(shape);
    auto n = std::make_shared<detail::TensorNode>();
    n->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double value) {
    check_shape(shape);
    auto n = std::make_shared<detail::TensorNode>();
    n->data.assign(static_cast<size_t>(shape_numel(shape)), value);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    check_shape(shape);
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto n = std::make_shared<detail::TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

double Tensor::value() const {
    if (numel() != 1) {
        throw ShapeError("value() requires a single-element tensor, shape is " + shape_str(shape()));
    }
    return n_->data[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
    n_->requires_grad = flag;
    return *this;
}

void Tensor::zero_grad() { n_->grad.clear(); }

bool Tensor::all_finite() const {
    for (double v : n_->data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
} // namespace

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }

Tape::Scope::~Scope() { g_active_tape = prev_; }

void Tape::backward(const Tensor& loss) {
    if (consumed_) throw TapeError("backward already ran on this tape");
    if (!loss.defined() || loss.numel() != 1) {
        throw TapeError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<empty>")));
    }
    if (loss.node()->tape != this) {
        throw TapeError("loss tensor was not produced on this tape");
    }
    detail::ensure_grad(*loss.node());
    loss.node()->grad[0] = 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
    consumed_ = true;
}

namespace detail {

bool recording(std::initializer_list<const Tensor*> inputs) {
    if (Tape::active() == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

void attach_backward(Tensor& out, std::function<void()> step) {
    out.node()->requires_grad = true;
    out.node()->tape = Tape::active();
    Tape::active()->record_step(std::move(step));
}

} // namespace detail

} // namespace hformer
