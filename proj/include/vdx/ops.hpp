#pragma once

#include <span>

#include "vdx/tensor.hpp"

namespace vdx {

// Autodiff primitives. All are rank-2 oriented (rank-1 tensors are treated
// as one row). Shapes are checked up front; inputs pass a finite gate in
// debug builds only.

Tensor add(const Tensor& a, const Tensor& b);         // same shape
Tensor sub(const Tensor& a, const Tensor& b);         // same shape
Tensor mul(const Tensor& a, const Tensor& b);         // elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_rowvec(const Tensor& x, const Tensor& v);  // x: m*n, v: 1*n broadcast
Tensor matmul(const Tensor& a, const Tensor& b);      // (m*k)(k*n)
Tensor transpose(const Tensor& a);
Tensor gelu(const Tensor& x);                          // exact erf form
Tensor softmax_lastdim(const Tensor& x);               // max-subtracted
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor embedding(const Tensor& table, std::span<const int> ids);  // OutOfVocab
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, size_t c0, size_t c1);
Tensor mean_rows(const Tensor& x);                     // m*n -> 1*n
Tensor sum(const Tensor& x);                           // -> scalar
Tensor mse(const Tensor& a, const Tensor& b);          // mean over elements
// Per-frame squared-norm loss averaged over unmasked frames:
// sum_t mask[t] * |pred[t] - target[t]|^2 / sum_t mask[t]
Tensor masked_frame_sse(const Tensor& pred, const Tensor& target,
                        std::span<const double> frame_mask);

}  // namespace vdx
