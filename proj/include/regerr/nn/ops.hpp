#pragma once

#include <optional>

#include "regerr/nn/tensor.hpp"

namespace regerr::nn {

// elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor softplus(const Tensor& a);

// shape plumbing (all copying; backward routes gradients through the copy)
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor narrow(const Tensor& a, int dim, std::int64_t start, std::int64_t len);
Tensor concat(const std::vector<Tensor>& xs, int dim);
Tensor pad_dim(const Tensor& a, int dim, std::int64_t before, std::int64_t after);
Tensor roll(const Tensor& a, const std::vector<std::int64_t>& shifts); // one shift per dim

// dense algebra; x: [..., Din], w: [Din, Dout]
Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b);
// batched matmul; a: [B, M, K], b: [B, K, N] (or [B, N, K] with trans_b)
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false);

Tensor softmax_last(const Tensor& x);
// layernorm over the last dim, affine parameters gamma/beta of that dim
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// x: [N, C, X, Y, Z], w: [Co, Ci, k, k, k], cubic kernel, symmetric stride/pad
Tensor conv3d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b, int stride,
              int pad);
Tensor maxpool3d_2(const Tensor& x);          // kernel 2, stride 2
Tensor upsample_nearest3d_2(const Tensor& x); // scale 2

// rows of `table` [R, H] gathered by idx (length M) -> [M, H]
Tensor gather_rows(const Tensor& table, const std::vector<std::int64_t>& idx);

// attention logit extras: logits [B*H? see below]; layout [NW*H, T, T] where
// NW = batch-of-windows. bias [H, T, T] is added per window; mask (optional,
// size nW*T*T, constant) repeats every nW windows.
Tensor add_attn_extras(const Tensor& logits, const Tensor& bias,
                       const std::vector<double>& mask, std::int64_t n_heads,
                       std::int64_t n_windows);

// reductions / losses
Tensor mean_all(const Tensor& x);
Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor mae_loss(const Tensor& pred, const Tensor& target);
// mean over voxels of the squared (or absolute, l1=true) forward-difference
// gradient of x [N, 1, X, Y, Z]; boundary differences are zero
Tensor smoothness_loss(const Tensor& x, bool l1 = false);

} // namespace regerr::nn
