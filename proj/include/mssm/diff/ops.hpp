#pragma once

#include "mssm/diff/graph.hpp"

namespace mssm::diff {

// All primitives operate on rank-2 [rows x cols] tensors unless noted.
// Convolutions use rank-4 [batch, channels, h, w].

// arithmetic
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);
// broadcast a [1 x d] row over every row of m
Var add_rowvec(const Var& m, const Var& v);
// s is a [1 x 1] graph scalar: out = s * m
Var scale_by(const Var& m, const Var& s);

// linear algebra
Var matmul(const Var& a, const Var& b);     // [m x k] * [k x n]
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var transpose(const Var& a);

// structure
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, std::int64_t off, std::int64_t len);
Var slice_rows(const Var& a, std::int64_t off, std::int64_t len);
Var reshape(const Var& a, std::vector<std::int64_t> shape);
Var diag_vec(const Var& a);  // [n x n] -> [n x 1]
Var detach(const Var& a);

// reductions
Var sum_all(const Var& a);   // -> [1 x 1]
Var mean_all(const Var& a);  // -> [1 x 1]
Var row_sum(const Var& a);   // [r x c] -> [r x 1]
Var col_sum(const Var& a);   // [r x c] -> [1 x c]
Var logsumexp_rows(const Var& a);  // [r x c] -> [r x 1], max-shifted

// elementwise nonlinearities
Var square(const Var& a);
Var sqrt_v(const Var& a);
Var exp_v(const Var& a);
Var log_v(const Var& a);
Var tanh_v(const Var& a);
Var sigmoid(const Var& a);
Var elu(const Var& a);
Var softplus(const Var& a);
Var relu(const Var& a);
Var min_elem(const Var& a, const Var& b);
Var abs_v(const Var& a);

// y = (x - mean)/sqrt(var + eps) * gain + bias, per row; gain/bias are [1 x d]
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

// softmax over each row; composite of primitives
Var softmax_rows(const Var& a);
// logsumexp of a [1 x n] row vector -> [1 x 1]
Var logsumexp(const Var& a);

// x [B,C,H,W], w [OC, C*kh*kw] flat kernel, b [1 x OC]; stride s
Var conv2d(const Var& x, const Var& w, const Var& b, std::int64_t kh, std::int64_t kw,
           std::int64_t stride);
// adjoint geometry: x [B,C,H,W] -> [B, OC, (H-1)s+kh, (W-1)s+kw], w [C, OC*kh*kw]
Var conv2d_transpose(const Var& x, const Var& w, const Var& b, std::int64_t kh, std::int64_t kw,
                     std::int64_t stride);

}  // namespace mssm::diff
