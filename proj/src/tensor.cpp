#include "regerr/nn/tensor.hpp"

#include <unordered_set>

namespace regerr::nn {

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = shape;
    n->value.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> data, bool requires_grad) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
        throw ShapeError("Tensor::from: data size does not match shape");
    auto n = std::make_shared<Node>();
    n->shape = shape;
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return Tensor::from({1}, {v}); }

Tensor make_op(const Shape& shape, std::vector<std::shared_ptr<Node>> parents,
               std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->shape = shape;
    n->value.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw ShapeError("backward() expects a scalar loss");
    Node* root = loss.node();
    if (!root->requires_grad) return;

    // iterative post-order topological sort
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            for (const auto& p : n->parents)
                if (p->requires_grad) p->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

} // namespace regerr::nn
