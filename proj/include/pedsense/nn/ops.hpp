#pragma once

#include <vector>

#include "pedsense/nn/tensor.hpp"

namespace pedsense::nn {

Tensor add(const Tensor& a, const Tensor& b);  // same shape
Tensor scale(const Tensor& x, double factor);

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n] -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]x[n,k] -> [m,n]

// Affine map over rows: x [N,D] * w [D,E] + b [E].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Cross-correlation with zero padding, x [N,C,H,W], w [K,C,kh,kw], b [K].
// Output spatial size must be integral.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int padding);

// Per-window maximum; the gradient routes to the first maximal element in
// row-major order on ties.
Tensor maxpool2d(const Tensor& x, int window, int stride);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);  // stable branch form
Tensor softmax_rows(const Tensor& x);  // softmax over the last axis

// Standardize over the last axis, then scale/shift: gain, shift of length D.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps = 1e-5);

Tensor slice_cols(const Tensor& x, int col_begin, int col_end);  // 2-D
Tensor concat_cols(const std::vector<Tensor>& parts);            // 2-D
Tensor slice_rows(const Tensor& x, int row_begin, int row_end);  // 2-D

// Batch-free normalization for conv maps: per sample, standardize over all
// C*H*W activations, then per-channel affine with gain, shift of length C.
Tensor channel_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                    double eps = 1e-5);

Tensor reshape(const Tensor& x, Shape shape);
Tensor sum(const Tensor& x);  // scalar

// Mean over H,W: x [N,C,H,W] -> [N,C].
Tensor global_avg_pool(const Tensor& x);

struct BceResult {
  Tensor mean_loss;  // -mean(y log p + (1-y) log(1-p)), p clamped to
                     // [1e-7, 1-1e-7]
  Tensor pos_sum;    // sum over y=1 of -log p
  Tensor neg_sum;    // sum over y=0 of -log(1-p)
  int num_pos = 0;
  int num_neg = 0;
};
BceResult bce_loss(const Tensor& probabilities, const std::vector<int>& targets);

// Mean negative log-likelihood of target classes, logits [N,C].
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets);

}  // namespace pedsense::nn
