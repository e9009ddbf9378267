#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hermit/common.hpp"

namespace hermit {

using Shape = std::vector<std::size_t>;
using Mask = std::vector<bool>;

class Tape;

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // persistent accumulator, sized on first use
  bool requires_grad = false;
  const Tape* tape = nullptr;  // tape that produced this node, null for leaves
  std::uint64_t epoch = 0;
};

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major tensor handle. Copies share the underlying node, so a
// Tensor behaves like a reference to one value/gradient pair.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> value, bool requires_grad = false) {
    check(shape_numel(shape) == value.size(), "tensor shape ", shape_str(shape),
          " does not match data length ", value.size());
    node_ = std::make_shared<TensorNode>();
    node_->shape = std::move(shape);
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor row_vector(std::vector<double> v) {
    Shape s{1, v.size()};
    return Tensor(std::move(s), std::move(v));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.at(1); }

  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double& at(std::size_t i) { return node_->value[i]; }
  double at2(std::size_t r, std::size_t c) const {
    return node_->value[r * cols() + c];
  }
  double item() const {
    check(size() == 1, "item() on non-scalar tensor ", shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  // Persistent gradient, same shape as the value, initially zero.
  std::vector<double>& grad() {
    if (node_->grad.size() != node_->value.size())
      node_->grad.assign(node_->value.size(), 0.0);
    return node_->grad;
  }
  const std::vector<double>& grad() const {
    return const_cast<Tensor*>(this)->grad();
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  bool all_finite() const {
    for (double v : node_->value)
      if (!std::isfinite(v)) return false;
    return true;
  }

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Transient per-backward gradient store. Intermediate results accumulate
// here; only requires_grad tensors have the totals folded into their
// persistent grad at the end, so repeated backward passes scale leaves
// exactly and never double-count interior nodes.
class GradBuffer {
 public:
  std::vector<double>& of(const std::shared_ptr<TensorNode>& node) {
    auto it = grads_.find(node.get());
    if (it == grads_.end()) {
      it = grads_.emplace(node.get(), std::vector<double>(node->value.size(), 0.0))
               .first;
    }
    return it->second;
  }
  const std::vector<double>* find(const TensorNode* node) const {
    auto it = grads_.find(node);
    return it == grads_.end() ? nullptr : &it->second;
  }
  const std::unordered_map<const TensorNode*, std::vector<double>>& all() const {
    return grads_;
  }

 private:
  std::unordered_map<const TensorNode*, std::vector<double>> grads_;
};

// Records the forward pass as an ordered operation list; backward replays it
// in reverse. Recording order is the topological order. Single-threaded.
class Tape {
 public:
  using BackwardFn =
      std::function<void(const std::vector<double>& out_grad, GradBuffer&)>;

  void record(const Tensor& out, BackwardFn fn) {
    out.node()->tape = this;
    out.node()->epoch = epoch_;
    records_.push_back({out.node(), std::move(fn)});
  }

  void backward(const Tensor& loss) {
    check(loss.defined() && loss.size() == 1,
          "backward requires a scalar loss, got ",
          loss.defined() ? shape_str(loss.shape()) : "undefined");
    check(loss.node()->tape == this && loss.node()->epoch == epoch_,
          "backward on a tensor not produced by the active record");
    GradBuffer buffer;
    buffer.of(loss.node())[0] = 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      const std::vector<double>* g = buffer.find(it->out.get());
      if (g == nullptr) continue;  // not on the path to the loss
      it->fn(*g, buffer);
    }
    for (const auto& [node, g] : buffer.all()) {
      if (!node->requires_grad) continue;
      auto* mutable_node = const_cast<TensorNode*>(node);
      if (mutable_node->grad.size() != mutable_node->value.size())
        mutable_node->grad.assign(mutable_node->value.size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) mutable_node->grad[i] += g[i];
    }
  }

  void clear() {
    records_.clear();
    ++epoch_;
  }
  std::size_t size() const { return records_.size(); }

 private:
  struct Record {
    std::shared_ptr<TensorNode> out;
    BackwardFn fn;
  };
  std::vector<Record> records_;
  std::uint64_t epoch_ = 1;
};

// A named leaf tensor with requires_grad set; the unit of optimization and
// serialization.
struct Parameter {
  std::string name;
  Tensor tensor;

  Parameter() = default;
  Parameter(std::string n, Tensor t) : name(std::move(n)), tensor(std::move(t)) {
    tensor.set_requires_grad(true);
  }
};

namespace ops {

inline void add_into(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

inline Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  check(a.rank() == 2 && b.rank() == 2, "matmul needs rank-2 tensors, got ",
        shape_str(a.shape()), " and ", shape_str(b.shape()));
  check(a.cols() == b.rows(), "matmul shape mismatch: ", shape_str(a.shape()),
        " x ", shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n});
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) ov[i * n + j] += aip * bv[p * n + j];
    }
  if (tape) {
    auto an = a.node(), bn = b.node(), on = out.node();
    tape->record(out, [an, bn, m, k, n](const std::vector<double>& g,
                                        GradBuffer& buf) {
      auto& ga = buf.of(an);
      auto& gb = buf.of(bn);
      const auto& av2 = an->value;
      const auto& bv2 = bn->value;
      // dA = g . B^T, dB = A^T . g
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j)
            acc += g[i * n + j] * bv2[p * n + j];
          ga[i * k + p] += acc;
        }
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t i = 0; i < m; ++i) {
          const double aip = av2[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j)
            gb[p * n + j] += aip * g[i * n + j];
        }
    });
  }
  return out;
}

// Feature-axis concatenation of two equal-height matrices.
inline Tensor concat(Tape* tape, const Tensor& a, const Tensor& b) {
  check(a.rank() == 2 && b.rank() == 2, "concat needs rank-2 tensors");
  check(a.rows() == b.rows(), "concat leading extents differ: ",
        shape_str(a.shape()), " vs ", shape_str(b.shape()));
  const std::size_t t = a.rows(), d1 = a.cols(), d2 = b.cols();
  Tensor out = Tensor::zeros({t, d1 + d2});
  auto& ov = out.values();
  for (std::size_t r = 0; r < t; ++r) {
    for (std::size_t c = 0; c < d1; ++c) ov[r * (d1 + d2) + c] = a.at2(r, c);
    for (std::size_t c = 0; c < d2; ++c)
      ov[r * (d1 + d2) + d1 + c] = b.at2(r, c);
  }
  if (tape) {
    auto an = a.node(), bn = b.node();
    tape->record(out, [an, bn, t, d1, d2](const std::vector<double>& g,
                                          GradBuffer& buf) {
      auto& ga = buf.of(an);
      auto& gb = buf.of(bn);
      for (std::size_t r = 0; r < t; ++r) {
        for (std::size_t c = 0; c < d1; ++c)
          ga[r * d1 + c] += g[r * (d1 + d2) + c];
        for (std::size_t c = 0; c < d2; ++c)
          gb[r * d2 + c] += g[r * (d1 + d2) + d1 + c];
      }
    });
  }
  return out;
}

inline Tensor take_row(Tape* tape, const Tensor& x, std::size_t r) {
  check(x.rank() == 2 && r < x.rows(), "take_row index ", r, " out of range for ",
        shape_str(x.shape()));
  const std::size_t w = x.cols();
  std::vector<double> v(x.values().begin() + r * w,
                        x.values().begin() + (r + 1) * w);
  Tensor out({1, w}, std::move(v));
  if (tape) {
    auto xn = x.node();
    tape->record(out, [xn, r, w](const std::vector<double>& g, GradBuffer& buf) {
      auto& gx = buf.of(xn);
      for (std::size_t c = 0; c < w; ++c) gx[r * w + c] += g[c];
    });
  }
  return out;
}

inline Tensor slice_cols(Tape* tape, const Tensor& x, std::size_t c0,
                         std::size_t c1) {
  check(x.rank() == 2 && c0 <= c1 && c1 <= x.cols(), "slice_cols [", c0, ",", c1,
        ") out of range for ", shape_str(x.shape()));
  const std::size_t t = x.rows(), w = x.cols(), sw = c1 - c0;
  Tensor out = Tensor::zeros({t, sw});
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t c = 0; c < sw; ++c)
      out.at(r * sw + c) = x.at2(r, c0 + c);
  if (tape) {
    auto xn = x.node();
    tape->record(out, [xn, t, w, c0, sw](const std::vector<double>& g,
                                         GradBuffer& buf) {
      auto& gx = buf.of(xn);
      for (std::size_t r = 0; r < t; ++r)
        for (std::size_t c = 0; c < sw; ++c)
          gx[r * w + c0 + c] += g[r * sw + c];
    });
  }
  return out;
}

inline Tensor stack_rows(Tape* tape, const std::vector<Tensor>& rows) {
  check(!rows.empty(), "stack_rows on empty row list");
  const std::size_t w = rows.front().size();
  for (const Tensor& r : rows)
    check(r.rank() == 2 && r.rows() == 1 && r.cols() == w,
          "stack_rows expects [1,", w, "] rows");
  Tensor out = Tensor::zeros({rows.size(), w});
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy(rows[r].values().begin(), rows[r].values().end(),
              out.values().begin() + r * w);
  if (tape) {
    std::vector<std::shared_ptr<TensorNode>> nodes;
    nodes.reserve(rows.size());
    for (const Tensor& r : rows) nodes.push_back(r.node());
    tape->record(out, [nodes, w](const std::vector<double>& g, GradBuffer& buf) {
      for (std::size_t r = 0; r < nodes.size(); ++r) {
        auto& gr = buf.of(nodes[r]);
        for (std::size_t c = 0; c < w; ++c) gr[c] += g[r * w + c];
      }
    });
  }
  return out;
}

// Extends a [T,W] matrix to [target,W] with zero rows at the bottom.
inline Tensor pad_rows(Tape* tape, const Tensor& x, std::size_t target_rows) {
  check(x.rank() == 2, "pad_rows needs a rank-2 tensor");
  check(target_rows >= x.rows(), "pad_rows cannot shrink ", x.rows(),
        " rows to ", target_rows);
  if (target_rows == x.rows()) return x;
  const std::size_t w = x.cols(), n = x.size();
  Tensor out = Tensor::zeros({target_rows, w});
  std::copy(x.values().begin(), x.values().end(), out.values().begin());
  if (tape) {
    auto xn = x.node();
    tape->record(out, [xn, n](const std::vector<double>& g, GradBuffer& buf) {
      auto& gx = buf.of(xn);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
    });
  }
  return out;
}

inline Tensor transpose(Tape* tape, const Tensor& x) {
  check(x.rank() == 2, "transpose needs a rank-2 tensor");
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out = Tensor::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j * r + i) = x.at2(i, j);
  if (tape) {
    auto xn = x.node();
    tape->record(out, [xn, r, c](const std::vector<double>& g, GradBuffer& buf) {
      auto& gx = buf.of(xn);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
    });
  }
  return out;
}

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* what) {
  check(a.shape() == b.shape(), what, " shape mismatch: ", shape_str(a.shape()),
        " vs ", shape_str(b.shape()));
}

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape(), a.values());
  add_into(out.values(), b.values());
  if (tape) {
    auto an = a.node(), bn = b.node();
    tape->record(out, [an, bn](const std::vector<double>& g, GradBuffer& buf) {
      add_into(buf.of(an), g);
      add_into(buf.of(bn), g);
    });
  }
  return out;
}

inline Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape(), a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) -= b[i];
  if (tape) {
    auto an = a.node(), bn = b.node();
    tape->record(out, [an, bn](const std::vector<double>& g, GradBuffer& buf) {
      add_into(buf.of(an), g);
      auto& gb = buf.of(bn);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
  }
  return out;
}

inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.shape(), a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= b[i];
  if (tape) {
    auto an = a.node(), bn = b.node();
    tape->record(out, [an, bn](const std::vector<double>& g, GradBuffer& buf) {
      auto& ga = buf.of(an);
      auto& gb = buf.of(bn);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * bn->value[i];
        gb[i] += g[i] * an->value[i];
      }
    });
  }
  return out;
}

inline Tensor scale(Tape* tape, const Tensor& x, double c) {
  Tensor out(x.shape(), x.values());
  for (double& v : out.values()) v *= c;
  if (tape) {
    auto xn = x.node();
    tape->record(out, [xn, c](const std::vector<double>& g, GradBuffer& buf) {
      auto& gx = buf.of(xn);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
    });
  }
  return out;
}

inline Tensor add_scalar(Tape* tape, const Tensor& x, double c) {
  Tensor out(x.shape(), x.values());
  for (double& v : out.values()) v += c;
  if (tape) {
    auto xn = x.node();
    tape->record(out, [xn](const std::vector<double>& g, GradBuffer& buf) {
      add_into(buf.of(xn), g);
    });
  }
  return out;
}

// Adds a length-W bias to every row of a [T,W] matrix.
inline Tensor add_row_bias(Tape* tape, const Tensor& x, const Tensor& bias) {
  check(x.rank() == 2 && bias.size() == x.cols(), "add_row_bias needs bias of ",
        x.cols(), " entries, got ", bias.size());
  const std::size_t t = x.rows(), w = x.cols();
  Tensor out(x.shape(), x.values());
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t c = 0; c < w; ++c) out.at(r * w + c) += bias[c];
  if (tape) {
    auto xn = x.node(), bn = bias.node();
    tape->record(out, [xn, bn, t, w](const std::vector<double>& g,
                                     GradBuffer& buf) {
      add_into(buf.of(xn), g);
      auto& gb = buf.of(bn);
      for (std::size_t r = 0; r < t; ++r)
        for (std::size_t c = 0; c < w; ++c) gb[c] += g[r * w + c];
    });
  }
  return out;
}

inline Tensor sigmoid(Tape* tape, const Tensor& x) {
  Tensor out(x.shape(), x.values());
  for (double& v : out.values()) {
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                 : std::exp(v) / (1.0 + std::exp(v));
  }
  if (tape) {
    auto xn = x.node(), on = out.node();
    tape->record(out, [xn, on](const std::vector<double>& g, GradBuffer& buf) {
      auto& gx = buf.of(xn);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = on->value[i];
        gx[i] += g[i] * y * (1.0 - y);
      }
    });
  }
  return out;
}

inline Tensor tanh(Tape* tape, const Tensor& x) {
  Tensor out(x.shape(), x.values());
  for (double& v : out.values()) v = std::tanh(v);
  if (tape) {
    auto xn = x.node(), on = out.node();
    tape->record(out, [xn, on](const std::vector<double>& g, GradBuffer& buf) {
      auto& gx = buf.of(xn);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = on->value[i];
        gx[i] += g[i] * (1.0 - y * y);
      }
    });
  }
  return out;
}

// Max-shifted softmax over the unmasked positions; masked outputs are exactly
// zero. Shapes are preserved; the mask length must equal the element count.
inline Tensor masked_softmax(Tape* tape, const Tensor& scores,
                             const Mask& mask) {
  check(scores.size() == mask.size(), "masked_softmax needs one mask entry per ",
        "score: ", scores.size(), " scores vs ", mask.size(), " mask entries");
  std::size_t live = 0;
  double max_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    ++live;
    max_score = std::max(max_score, scores[i]);
  }
  check(live > 0, "masked_softmax with every position masked");
  Tensor out = Tensor::zeros(scores.shape());
  double denom = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    out.at(i) = std::exp(scores[i] - max_score);
    denom += out[i];
  }
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.at(i) /= denom;
  if (tape) {
    auto sn = scores.node(), on = out.node();
    tape->record(out, [sn, on, mask](const std::vector<double>& g,
                                     GradBuffer& buf) {
      auto& gs = buf.of(sn);
      double dot = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (mask[i]) dot += g[i] * on->value[i];
      for (std::size_t i = 0; i < g.size(); ++i)
        if (mask[i]) gs[i] += on->value[i] * (g[i] - dot);
    });
  }
  return out;
}

inline double logsumexp_raw(const double* v, std::size_t n) {
  double m = v[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, v[i]);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::exp(v[i] - m);
  return m + std::log(acc);
}

inline Tensor logsumexp(Tape* tape, const Tensor& x) {
  check(x.size() >= 1, "logsumexp on an empty tensor");
  const double lse = logsumexp_raw(x.values().data(), x.size());
  Tensor out = Tensor::scalar(lse);
  if (tape) {
    auto xn = x.node();
    tape->record(out, [xn, lse](const std::vector<double>& g, GradBuffer& buf) {
      auto& gx = buf.of(xn);
      for (std::size_t i = 0; i < gx.size(); ++i)
        gx[i] += g[0] * std::exp(xn->value[i] - lse);
    });
  }
  return out;
}

inline Tensor reduce_sum(Tape* tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (tape) {
    auto xn = x.node();
    tape->record(out, [xn](const std::vector<double>& g, GradBuffer& buf) {
      auto& gx = buf.of(xn);
      for (double& v : gx) v += g[0];
    });
  }
  return out;
}

inline Tensor pick(Tape* tape, const Tensor& x, std::size_t index) {
  check(index < x.size(), "pick index ", index, " out of range for ",
        shape_str(x.shape()));
  Tensor out = Tensor::scalar(x[index]);
  if (tape) {
    auto xn = x.node();
    tape->record(out, [xn, index](const std::vector<double>& g, GradBuffer& buf) {
      buf.of(xn)[index] += g[0];
    });
  }
  return out;
}

// Row lookup into an embedding table; the backward pass scatters into the
// selected rows only.
inline Tensor embedding_rows(Tape* tape, const Tensor& table,
                             const std::vector<std::size_t>& ids) {
  check(table.rank() == 2, "embedding_rows needs a rank-2 table");
  check(!ids.empty(), "embedding_rows with no ids");
  const std::size_t d = table.cols();
  Tensor out = Tensor::zeros({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    check(ids[r] < table.rows(), "embedding row ", ids[r], " out of range");
    std::copy(table.values().begin() + ids[r] * d,
              table.values().begin() + (ids[r] + 1) * d,
              out.values().begin() + r * d);
  }
  if (tape) {
    auto tn = table.node();
    tape->record(out, [tn, ids, d](const std::vector<double>& g, GradBuffer& buf) {
      auto& gt = buf.of(tn);
      for (std::size_t r = 0; r < ids.size(); ++r)
        for (std::size_t c = 0; c < d; ++c)
          gt[ids[r] * d + c] += g[r * d + c];
    });
  }
  return out;
}

}  // namespace ops
}  // namespace hermit
