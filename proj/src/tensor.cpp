#include "sgalign/tensor.hpp"

#include <sstream>

namespace sgalign {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data.assign(shape_numel(node->shape), value);
    node->requires_grad = requires_grad;
    if (requires_grad) node->ensure_grad();
    return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_to_string(shape));
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    if (requires_grad) node->ensure_grad();
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

std::size_t Tensor::rows() const {
    const Shape& s = node_->shape;
    if (s.empty()) return 1;
    if (s.size() == 1) return 1;
    std::size_t r = 1;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
    return r;
}

std::size_t Tensor::cols() const {
    const Shape& s = node_->shape;
    return s.empty() ? 1 : s.back();
}

double Tensor::value() const {
    if (numel() != 1) {
        throw ShapeError("value() requires a scalar tensor, got shape " + shape_to_string(shape()));
    }
    return node_->data[0];
}

std::vector<double>& Tensor::grad() {
    if (!node_->requires_grad) throw NumericError("tensor does not track gradients");
    node_->ensure_grad();
    return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (!node_->requires_grad) throw NumericError("tensor does not track gradients");
    return node_->grad;
}

namespace {
thread_local Tape* g_current_tape = nullptr;
}

Tape* Tape::current() { return g_current_tape; }

void Tape::record(std::shared_ptr<TensorNode> output, std::function<void()> backward) {
    entries_.push_back(Entry{std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward requires a scalar loss, got shape " +
                         (loss.defined() ? shape_to_string(loss.shape()) : std::string("<null>")));
    }
    if (!loss.requires_grad()) {
        throw NumericError("backward: loss was not produced on the active tape");
    }
    // Intermediates restart from zero each call; leaves keep accumulating.
    for (Entry& e : entries_) {
        if (!e.output->is_leaf) e.output->zero_grad();
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        it->backward();
    }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_current_tape) { g_current_tape = &tape; }

TapeScope::~TapeScope() { g_current_tape = previous_; }

NoTapeScope::NoTapeScope() : previous_(g_current_tape) { g_current_tape = nullptr; }

NoTapeScope::~NoTapeScope() { g_current_tape = previous_; }

} // namespace sgalign
