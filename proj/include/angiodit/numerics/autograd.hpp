#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "angiodit/numerics/tensor.hpp"

namespace angiodit {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
    // 64-bit value of a one-element reduction result, NaN when not tracked.
    // Lets finite-difference checks see below Real resolution.
    double precise = std::numeric_limits<double>::quiet_NaN();

    // Gradient buffer of input i, zero-allocated on first use. Null when the
    // input does not take part in differentiation.
    Tensor* input_grad(std::size_t i);
};

// Value plus an optional gradient slot, linked into the recorded graph.
class Variable {
public:
    Variable() = default;
    explicit Variable(Tensor value, bool requires_grad = false);
    explicit Variable(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& mutable_grad() { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const Shape& shape() const { return node_->value.shape(); }
    // Scalar value at 64-bit precision when the producing op tracked it.
    double scalar() const;
    std::int64_t dim(std::size_t axis) const { return node_->value.dim(axis); }
    std::int64_t numel() const { return node_->value.numel(); }

    const std::shared_ptr<Node>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled() noexcept;

// Wraps an op result. The backward closure is recorded only when recording
// is on and at least one input requires a gradient.
Variable make_result(Tensor value, std::vector<Variable> inputs,
                     std::function<void(Node&)> backward);

// Reverse pass from a one-element root. Intermediate nodes release their
// gradients and closures as they are consumed; leaves keep accumulated grads.
void run_backward(const Variable& root);

}  // namespace angiodit
