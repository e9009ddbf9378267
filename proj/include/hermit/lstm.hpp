#pragma once

#include <utility>
#include <vector>

#include "hermit/tensor.hpp"

namespace hermit {

// Single-direction LSTM weights, gates packed in (input, forget, cell,
// output) order along the first axis.
struct LstmParams {
  Tensor w_input;      // [4H, D]
  Tensor w_recurrent;  // [4H, H]
  Tensor bias;         // [1, 4H]
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;

  void validate() const {
    check(w_input.rank() == 2 && w_input.rows() == 4 * hidden_dim &&
              w_input.cols() == input_dim,
          "lstm input weights expected [", 4 * hidden_dim, ",", input_dim,
          "], got ", shape_str(w_input.shape()));
    check(w_recurrent.rows() == 4 * hidden_dim &&
              w_recurrent.cols() == hidden_dim,
          "lstm recurrent weights expected [", 4 * hidden_dim, ",", hidden_dim,
          "], got ", shape_str(w_recurrent.shape()));
    check(bias.size() == 4 * hidden_dim, "lstm bias expected ", 4 * hidden_dim,
          " entries, got ", bias.size());
  }
};

struct BiLstmParams {
  LstmParams forward;
  LstmParams backward;

  void validate() const {
    forward.validate();
    backward.validate();
    check(forward.input_dim == backward.input_dim &&
              forward.hidden_dim == backward.hidden_dim,
          "bilstm directions disagree on dimensions");
  }
};

namespace detail {

// Step with pre-transposed weights so a sequence pass transposes once.
inline std::pair<Tensor, Tensor> lstm_step_t(Tape* tape, const Tensor& x,
                                             const Tensor& h_prev,
                                             const Tensor& c_prev,
                                             const Tensor& w_input_t,
                                             const Tensor& w_recurrent_t,
                                             const Tensor& bias,
                                             std::size_t hidden) {
  using namespace ops;
  Tensor pre = add(tape, add(tape, matmul(tape, x, w_input_t),
                             matmul(tape, h_prev, w_recurrent_t)),
                   bias);
  Tensor gate_i = sigmoid(tape, slice_cols(tape, pre, 0, hidden));
  Tensor gate_f = sigmoid(tape, slice_cols(tape, pre, hidden, 2 * hidden));
  Tensor gate_g = tanh(tape, slice_cols(tape, pre, 2 * hidden, 3 * hidden));
  Tensor gate_o = sigmoid(tape, slice_cols(tape, pre, 3 * hidden, 4 * hidden));
  Tensor c = add(tape, mul(tape, gate_f, c_prev), mul(tape, gate_i, gate_g));
  Tensor h = mul(tape, gate_o, tanh(tape, c));
  return {h, c};
}

}  // namespace detail

// One LSTM recurrence step. States are [1,H] row vectors.
inline std::pair<Tensor, Tensor> lstm_step(Tape* tape, const Tensor& x,
                                           const Tensor& h_prev,
                                           const Tensor& c_prev,
                                           const LstmParams& p) {
  p.validate();
  check(x.size() == p.input_dim, "lstm_step input expected ", p.input_dim,
        " entries, got ", x.size());
  check(h_prev.size() == p.hidden_dim && c_prev.size() == p.hidden_dim,
        "lstm_step state expected ", p.hidden_dim, " entries");
  Tensor wt = ops::transpose(tape, p.w_input);
  Tensor ut = ops::transpose(tape, p.w_recurrent);
  return detail::lstm_step_t(tape, x, h_prev, c_prev, wt, ut, p.bias,
                             p.hidden_dim);
}

// Bidirectional pass over an embedded sentence. Row t of the output is the
// forward state at t followed by the backward state at t. Masked positions
// produce zero rows and leave both recurrences untouched.
inline Tensor bilstm_forward(Tape* tape, const Tensor& x, const Mask& mask,
                             const BiLstmParams& p) {
  p.validate();
  check(x.rank() == 2 && x.rows() >= 1, "bilstm_forward needs a nonempty [T,D]");
  check(x.rows() == mask.size(), "bilstm_forward mask length ", mask.size(),
        " vs T=", x.rows());
  check(x.cols() == p.forward.input_dim, "bilstm_forward input width ",
        x.cols(), " vs expected ", p.forward.input_dim);
  const std::size_t t_len = x.rows();
  const std::size_t hidden = p.forward.hidden_dim;

  Tensor fwd_wt = ops::transpose(tape, p.forward.w_input);
  Tensor fwd_ut = ops::transpose(tape, p.forward.w_recurrent);
  Tensor bwd_wt = ops::transpose(tape, p.backward.w_input);
  Tensor bwd_ut = ops::transpose(tape, p.backward.w_recurrent);

  std::vector<Tensor> fwd_h(t_len), bwd_h(t_len);
  Tensor h = Tensor::zeros({1, hidden});
  Tensor c = Tensor::zeros({1, hidden});
  for (std::size_t t = 0; t < t_len; ++t) {
    if (!mask[t]) continue;
    auto [nh, nc] = detail::lstm_step_t(tape, ops::take_row(tape, x, t), h, c,
                                        fwd_wt, fwd_ut, p.forward.bias, hidden);
    h = nh;
    c = nc;
    fwd_h[t] = h;
  }
  h = Tensor::zeros({1, hidden});
  c = Tensor::zeros({1, hidden});
  for (std::size_t i = t_len; i-- > 0;) {
    if (!mask[i]) continue;
    auto [nh, nc] = detail::lstm_step_t(tape, ops::take_row(tape, x, i), h, c,
                                        bwd_wt, bwd_ut, p.backward.bias, hidden);
    h = nh;
    c = nc;
    bwd_h[i] = h;
  }

  std::vector<Tensor> rows;
  rows.reserve(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    if (mask[t]) {
      rows.push_back(ops::concat(tape, fwd_h[t], bwd_h[t]));
    } else {
      rows.push_back(Tensor::zeros({1, 2 * hidden}));
    }
  }
  return ops::stack_rows(tape, rows);
}

}  // namespace hermit
