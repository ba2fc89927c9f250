#include "angiodit/numerics/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "angiodit/core/error.hpp"

namespace angiodit {

namespace {
thread_local bool g_grad_enabled = true;
}

Tensor* Node::input_grad(std::size_t i) {
    Node& in = *inputs[i];
    if (!in.requires_grad) return nullptr;
    if (in.grad.empty()) in.grad = Tensor(in.value.shape(), 0.0f);
    return &in.grad;
}

Variable::Variable(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

double Variable::scalar() const {
    const double p = node_->precise;
    return std::isnan(p) ? static_cast<double>(node_->value.item()) : p;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() noexcept { return g_grad_enabled; }

Variable make_result(Tensor value, std::vector<Variable> inputs,
                     std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& in : inputs) any = any || in.requires_grad();
        if (any) {
            node->requires_grad = true;
            node->inputs.reserve(inputs.size());
            for (auto& in : inputs) node->inputs.push_back(in.node());
            node->backward = std::move(backward);
        }
    }
    return Variable(std::move(node));
}

void run_backward(const Variable& root) {
    if (!root.defined()) throw ShapeError("backward on undefined variable");
    if (root.numel() != 1) {
        throw ShapeError("backward requires a scalar loss, got shape " + shape_str(root.shape()));
    }
    if (!root.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    // Holding shared owners keeps every node alive until the pass finishes.
    std::vector<std::shared_ptr<Node>> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            const auto& child = node->inputs[next++];
            if (child->requires_grad && visited.insert(child.get()).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad = Tensor(root.shape(), 1.0f);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = it->get();
        if (!node->backward) continue;  // leaf
        if (!node->grad.empty()) node->backward(*node);
        node->backward = nullptr;
        node->inputs.clear();
        node->grad = Tensor();
    }
}

}  // namespace angiodit
