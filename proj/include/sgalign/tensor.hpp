#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sgalign/errors.hpp"

namespace sgalign {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<double> grad; // same length as data when requires_grad

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() { grad.assign(data.size(), 0.0); }
};

// Dense row-major float64 tensor. Value-semantics handle to a shared node;
// copying a Tensor aliases the same storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->data.size(); }
    std::size_t rank() const { return node_->shape.size(); }

    // 2D conveniences; rank-1 tensors count as a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    double* data() { return node_->data.data(); }
    const double* data() const { return node_->data.data(); }
    std::vector<double>& values() { return node_->data; }
    const std::vector<double>& values() const { return node_->data; }
    double value() const; // scalar tensors only

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->is_leaf; }
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void zero_grad() { node_->zero_grad(); }

    const std::shared_ptr<TensorNode>& node() const { return node_; }

    static Tensor wrap(std::shared_ptr<TensorNode> node) { return Tensor(std::move(node)); }

private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<TensorNode> node_;
};

// Ordered record of executed operations (define-by-run). Ops append one
// entry per executed operation; backward() replays the closures in exact
// reverse order of recording. A tape is rebuilt per forward pass.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current();

    void record(std::shared_ptr<TensorNode> output, std::function<void()> backward);

    // Seeds d(loss)/d(loss) = 1 and replays the tape backwards. Leaf
    // gradients accumulate across calls; intermediate gradients are reset
    // per call.
    void backward(const Tensor& loss);

    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

private:
    struct Entry {
        std::shared_ptr<TensorNode> output;
        std::function<void()> backward;
    };
    std::vector<Entry> entries_;
    friend class TapeScope;
};

// RAII activation of a tape on the current thread.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

// RAII suspension of any active tape (pure value computation).
class NoTapeScope {
public:
    NoTapeScope();
    ~NoTapeScope();
    NoTapeScope(const NoTapeScope&) = delete;
    NoTapeScope& operator=(const NoTapeScope&) = delete;

private:
    Tape* previous_;
};

} // namespace sgalign
