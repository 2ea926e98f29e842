#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "regerr/errors.hpp"

namespace regerr::nn {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

// One node of the dynamically built computation graph. Values and gradients
// are double precision; gradients are allocated lazily on first accumulation.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::int64_t numel() const { return shape_numel(shape); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

// Shared handle to a graph node. Copying a Tensor aliases the node.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& ptr() const { return node_; }

    const Shape& shape() const { return node_->shape; }
    std::int64_t numel() const { return node_->numel(); }
    std::vector<double>& data() { return node_->value; }
    const std::vector<double>& data() const { return node_->value; }
    const std::vector<double>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }

    double item() const {
        if (node_->numel() != 1) throw ShapeError("item() on non-scalar tensor");
        return node_->value[0];
    }

  private:
    std::shared_ptr<Node> node_;
};

// Create a result node; requires_grad is inherited from any parent.
Tensor make_op(const Shape& shape, std::vector<std::shared_ptr<Node>> parents,
               std::function<void(Node&)> backward_fn);

// Reverse-mode sweep from a scalar loss. Seeds d(loss)/d(loss)=1 and
// accumulates into every reachable requires_grad leaf.
void backward(const Tensor& loss);

inline std::vector<std::int64_t> row_major_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[size_t(i)] = st[size_t(i) + 1] * s[size_t(i) + 1];
    return st;
}

} // namespace regerr::nn
