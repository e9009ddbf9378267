#pragma once

#include <cmath>
#include <vector>

#include "hermit/tensor.hpp"

namespace hermit {

// Scaled dot-product self-attention with learned query/key/value projections
// and no residual path. The value projection preserves the input width.
struct SelfAttentionParams {
  Tensor wq;  // [H', A]
  Tensor wk;  // [H', A]
  Tensor wv;  // [H', H']
  std::size_t input_dim = 0;  // H'
  std::size_t attn_width = 0;  // A

  void validate() const {
    check(wq.rank() == 2 && wq.rows() == input_dim && wq.cols() == attn_width,
          "attention Wq expected [", input_dim, ",", attn_width, "], got ",
          shape_str(wq.shape()));
    check(wk.rows() == input_dim && wk.cols() == attn_width,
          "attention Wk expected [", input_dim, ",", attn_width, "], got ",
          shape_str(wk.shape()));
    check(wv.rows() == input_dim && wv.cols() == input_dim,
          "attention Wv must preserve the input width ", input_dim, ", got ",
          shape_str(wv.shape()));
  }
};

// a_t = sum_t' softmax_t'((s_t Wq)(s_t' Wk)^T / sqrt(A)) (s_t' Wv), with
// masked keys excluded from every softmax and masked query rows zeroed.
inline Tensor self_attention(Tape* tape, const Tensor& s, const Mask& mask,
                             const SelfAttentionParams& p) {
  p.validate();
  check(s.rank() == 2 && s.rows() >= 1, "self_attention needs a nonempty [T,H']");
  check(s.rows() == mask.size(), "self_attention mask length ", mask.size(),
        " vs T=", s.rows());
  check(s.cols() == p.input_dim, "self_attention input width ", s.cols(),
        " vs expected ", p.input_dim);
  bool any_live = false;
  for (bool m : mask) any_live = any_live || m;
  check(any_live, "self_attention with every position masked");

  using namespace ops;
  const std::size_t t_len = s.rows();
  Tensor queries = matmul(tape, s, p.wq);            // [T, A]
  Tensor keys_t = transpose(tape, matmul(tape, s, p.wk));  // [A, T]
  Tensor values = matmul(tape, s, p.wv);             // [T, H']
  const double inv_sqrt_a = 1.0 / std::sqrt(static_cast<double>(p.attn_width));

  std::vector<Tensor> rows;
  rows.reserve(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    if (!mask[t]) {
      rows.push_back(Tensor::zeros({1, p.input_dim}));
      continue;
    }
    Tensor scores =
        scale(tape, matmul(tape, take_row(tape, queries, t), keys_t),
              inv_sqrt_a);                             // [1, T]
    Tensor weights = masked_softmax(tape, scores, mask);
    rows.push_back(matmul(tape, weights, values));     // [1, H']
  }
  return stack_rows(tape, rows);
}

}  // namespace hermit
