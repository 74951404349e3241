#pragma once

#include <vector>

#include "mttu/tensor.hpp"

namespace mttu {

// Elementwise (shapes must match exactly; no broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);

// Reductions to scalar shape {1}.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);

// a / s with s a scalar tensor; gradient flows to both.
Tensor div_bcast(const Tensor& a, const Tensor& s);

// 2-D linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& x);
Tensor add_rowvec(const Tensor& x, const Tensor& b);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Views (materialized copies with scatter/gather gradients).
Tensor reshape(const Tensor& x, std::vector<int> new_shape);
Tensor slice_rows(const Tensor& x, int start, int len);
Tensor slice_cols(const Tensor& x, int start, int len);
Tensor concat_cols(const std::vector<Tensor>& xs);
Tensor concat_rows(const std::vector<Tensor>& xs);
Tensor detach(const Tensor& x);

// Softmax over the last axis, max-subtracted for stability.
Tensor softmax(const Tensor& x);

// Per-row normalization over the last axis D (eps inside the sqrt), then
// elementwise affine with gain/bias of shape {D}.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// Image primitives on CHW layout.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad);
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);
Tensor concat_ch(const Tensor& a, const Tensor& b);
Tensor slice_ch(const Tensor& x, int c);

// Fused cross-entropies (log-sum-exp stable; gradient = softmax - onehot).
Tensor cls_cross_entropy(const Tensor& logits, int label);
Tensor mask_cross_entropy(const Tensor& logits2hw, const Tensor& target_hw);

// Non-graph helper shared by resize paths: bilinear sample weights,
// align-corners-false convention.
void bilinear_axis_weights(int in, int out, std::vector<int>& i0,
                           std::vector<int>& i1, std::vector<double>& w1);

}  // namespace mttu
