#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sparsemask/tensor.hpp"

namespace sparsemask::ad {

// Reverse-mode tape node. Ops build a DAG of these; backward() walks it in
// reverse topological order. A node's backward_fn reads its own grad and
// accumulates into the parents' grads.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool leaf = false;
    std::string name;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.numel() != value.numel()) {
            grad = Tensor<T>(value.n, value.c, value.h, value.w);
        }
    }
    void zero_grad() {
        ensure_grad();
        grad.fill(T(0));
    }
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    // A leaf holds data directly; parameters are grad-enabled leaves.
    static Var leaf(Tensor<T> value, bool requires_grad = false, std::string name = "") {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        n->leaf = true;
        n->name = std::move(name);
        return Var(std::move(n));
    }

    bool defined() const { return node_ != nullptr; }
    Node<T>& node() const { return *node_; }
    const std::shared_ptr<Node<T>>& ptr() const { return node_; }

    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& value() { return node_->value; }
    Tensor<T>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::string& name() const { return node_->name; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void zero_grad() const { node_->zero_grad(); }

private:
    std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents,
               std::function<void(Node<T>&)> backward_fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) {
        if (p && p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return Var<T>(std::move(n));
}

// Reverse topological order over the grad-requiring subgraph rooted at `root`.
template <typename T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    // Iterative post-order DFS; the explicit stack avoids recursion depth
    // limits on long decoder chains.
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (p && p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

// Backpropagates from a scalar loss. Leaf gradients accumulate across calls
// until explicitly zeroed; interior gradients are reset on every call.
template <typename T>
void backward(const Var<T>& loss) {
    if (!loss.defined()) throw std::runtime_error("backward: undefined loss");
    if (!loss.value().is_scalar()) {
        throw std::runtime_error("backward: loss must be scalar, got shape " +
                                 loss.value().shape_str());
    }
    if (!loss.requires_grad()) return;

    std::vector<Node<T>*> order = topo_order(loss.ptr().get());
    for (Node<T>* n : order) {
        if (n->leaf) {
            n->ensure_grad();
        } else {
            n->zero_grad();
        }
    }
    loss.ptr()->grad.data[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

}  // namespace sparsemask::ad
