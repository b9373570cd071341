#pragma once

#include <vector>

#include "p2sc/tensor.hpp"

namespace p2sc::ops {

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// Scalar broadcast.
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

// [n,d] + [d], the bias-row broadcast.
Tensor add_rowvec(const Tensor& m, const Tensor& v);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

// x:[n,in], w:[out,in], b:[out] -> [n,out]; y = x w^T + b.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor relu(const Tensor& a);

// Softmax along one axis; each slice sums to 1.
Tensor softmax(const Tensor& a, int axis);

Tensor concat(const std::vector<Tensor>& parts, int axis);

Tensor reduce_sum(const Tensor& a);                 // all elements -> scalar
Tensor reduce_sum_axis(const Tensor& a, int axis);  // drops the axis
Tensor reduce_max_axis(const Tensor& a, int axis);  // gradient routes to the first max

// [n,d] with row i multiplied by s[i].
Tensor scale_rows(const Tensor& x, const Tensor& s);

// [n,d] -> [n] of row L2 norms.
Tensor l2norm_rows(const Tensor& a);
// [n,d] with each nonzero row scaled to unit L2 norm; zero rows stay zero.
Tensor l2_normalize_rows(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);  // 2-D

// [n,d] indexed by rows -> [idx.size(), d]; backward scatter-adds.
Tensor gather_rows(const Tensor& a, std::vector<int64_t> idx);

// Column range [c0, c1) of a 2-D tensor.
Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1);

// Per-feature statistics over the row (set) dimension of x:[n,d].
// Training mode normalizes by batch statistics and folds them into the running
// buffers (leaf tensors, mutated in place); eval mode normalizes by the
// running statistics.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                 Tensor& running_var, bool training, double momentum = 0.9, double eps = 1e-5);

// Mean negative log-likelihood of labels under row-wise softmax of logits:[n,p].
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels);

}  // namespace p2sc::ops
