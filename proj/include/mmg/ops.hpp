#pragma once

#include <optional>
#include <vector>

#include "mmg/tensor.hpp"

namespace mmg::num {

// Boolean attention mask, true = attend. Semantically the masked positions
// receive -inf before softmax; the implementation skips them outright so the
// masked outputs are exactly zero and masked inputs never touch the result.
struct AttnMask {
  int tq = 0, tk = 0;
  std::vector<uint8_t> keep;  // tq * tk

  static AttnMask causal(int t);
  static AttnMask full(int tq, int tk);
  static AttnMask key_padding(int tq, const std::vector<uint8_t>& key_valid);
  static AttnMask causal_with_padding(const std::vector<uint8_t>& valid);
  bool at(int q, int k) const { return keep[static_cast<size_t>(q) * tk + k] != 0; }
};

// Elementwise / shape ops
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor transpose(const Tensor& a);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
// Adds a 1 x d row vector to every row of a T x d tensor.
Tensor add_row_broadcast(const Tensor& a, const Tensor& row);

// Reductions
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor mean_rows(const Tensor& a);  // T x d -> 1 x d

// Nonlinearities
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // tanh approximation

// Linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);

// Softmax along an axis of a 2-D tensor (axis 1 = rows, 0 = columns),
// numerically stabilized by max subtraction. NaN input raises.
Tensor softmax(const Tensor& a, int axis = 1);

// Row softmax that skips masked entries entirely; masked outputs are 0.
Tensor softmax_rows_masked(const Tensor& a, const AttnMask& mask);

// Normalization
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

// Lookup / loss
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& indices);
// Mean cross-entropy over rows whose target != ignore_index.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_index = -1);
Tensor mse(const Tensor& a, const Tensor& b);
// Row-wise cosine similarity of two T x d tensors -> T x 1.
Tensor cosine_rows(const Tensor& a, const Tensor& b);

// Convolution over time-major input (T x C_in).
// conv1d weight: [C_out][C_in][k]; output length (T + 2p - k)/s + 1.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
// conv1d_transpose weight: [C_in][C_out][k]; output length (T-1)*s - 2p + k.
Tensor conv1d_transpose(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);

// Scaled dot-product attention over single-head 2-D inputs.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const AttnMask* mask = nullptr);

// Cumulative sum down the first `n_cols` columns plus a constant origin
// offset; remaining columns pass through. This is the reverse of the
// trajectory first-difference transform, kept differentiable so decoders can
// train through it.
Tensor integrate_prefix_columns(const Tensor& x, const std::vector<double>& origin, int n_cols);

// Detach: same values, no history.
Tensor stop_gradient(const Tensor& a);

}  // namespace mmg::num
