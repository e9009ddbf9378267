#pragma once

#include <cmath>
#include <vector>

#include "hermit/tensor.hpp"

namespace hermit {

// Linear-chain CRF parameters. transitions[i*K+j] scores label i followed by
// label j; start and stop score the first and last label of a sequence.
struct CrfParams {
  Tensor transitions;  // [K, K]
  Tensor start;        // [K]
  Tensor stop;         // [K]
  std::size_t num_labels = 0;

  void validate() const {
    check(num_labels >= 1, "crf needs at least one label");
    check(transitions.rank() == 2 && transitions.rows() == num_labels &&
              transitions.cols() == num_labels,
          "crf transitions expected [", num_labels, ",", num_labels, "], got ",
          shape_str(transitions.shape()));
    check(start.size() == num_labels && stop.size() == num_labels,
          "crf start/stop expected ", num_labels, " entries");
  }
};

struct ViterbiPath {
  std::vector<std::size_t> tags;  // length T; masked slots are zero-filled
  double score = 0.0;
};

namespace detail {

inline std::vector<std::size_t> unmasked_steps(const Mask& mask) {
  std::vector<std::size_t> steps;
  steps.reserve(mask.size());
  for (std::size_t t = 0; t < mask.size(); ++t)
    if (mask[t]) steps.push_back(t);
  return steps;
}

inline void check_crf_inputs(const Tensor& emissions, const Mask& mask,
                             const CrfParams& p) {
  p.validate();
  check(emissions.rank() == 2 && emissions.cols() == p.num_labels,
        "crf emissions expected [T,", p.num_labels, "], got ",
        shape_str(emissions.shape()));
  check(emissions.rows() == mask.size(), "crf mask length ", mask.size(),
        " vs T=", emissions.rows());
}

// Forward (alpha) recursion over the unmasked steps in log space.
inline std::vector<std::vector<double>> crf_alphas(
    const std::vector<double>& em, std::size_t k,
    const std::vector<std::size_t>& steps, const std::vector<double>& trans,
    const std::vector<double>& start) {
  std::vector<std::vector<double>> alpha(steps.size(),
                                         std::vector<double>(k, 0.0));
  for (std::size_t j = 0; j < k; ++j)
    alpha[0][j] = start[j] + em[steps[0] * k + j];
  std::vector<double> scratch(k);
  for (std::size_t i = 1; i < steps.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t prev = 0; prev < k; ++prev)
        scratch[prev] = alpha[i - 1][prev] + trans[prev * k + j];
      alpha[i][j] = ops::logsumexp_raw(scratch.data(), k) + em[steps[i] * k + j];
    }
  }
  return alpha;
}

}  // namespace detail

// Score of one tag sequence: start + emissions + transitions + stop over the
// unmasked steps. Registered on the tape as a single fused operation.
inline Tensor crf_sequence_score(Tape* tape, const Tensor& emissions,
                                 const std::vector<std::size_t>& tags,
                                 const CrfParams& p, const Mask& mask) {
  detail::check_crf_inputs(emissions, mask, p);
  check(tags.size() == emissions.rows(), "crf tags length ", tags.size(),
        " vs T=", emissions.rows());
  const std::size_t k = p.num_labels;
  const auto steps = detail::unmasked_steps(mask);
  check(!steps.empty(), "crf_sequence_score on an empty effective sequence");
  for (std::size_t t : steps)
    check(tags[t] < k, "crf tag index ", tags[t], " out of range (K=", k, ")");

  const auto& em = emissions.values();
  double score = p.start[tags[steps.front()]] + p.stop[tags[steps.back()]];
  for (std::size_t i = 0; i < steps.size(); ++i) {
    score += em[steps[i] * k + tags[steps[i]]];
    if (i + 1 < steps.size())
      score += p.transitions[tags[steps[i]] * k + tags[steps[i + 1]]];
  }
  Tensor out = Tensor::scalar(score);
  if (tape) {
    auto en = emissions.node(), tn = p.transitions.node(),
         sn = p.start.node(), pn = p.stop.node();
    tape->record(out, [en, tn, sn, pn, tags, steps, k](
                          const std::vector<double>& g, GradBuffer& buf) {
      auto& ge = buf.of(en);
      auto& gt = buf.of(tn);
      buf.of(sn)[tags[steps.front()]] += g[0];
      buf.of(pn)[tags[steps.back()]] += g[0];
      for (std::size_t i = 0; i < steps.size(); ++i) {
        ge[steps[i] * k + tags[steps[i]]] += g[0];
        if (i + 1 < steps.size())
          gt[tags[steps[i]] * k + tags[steps[i + 1]]] += g[0];
      }
    });
  }
  return out;
}

inline Tensor crf_sequence_score(Tape* tape, const Tensor& emissions,
                                 const std::vector<std::size_t>& tags,
                                 const CrfParams& p) {
  return crf_sequence_score(tape, emissions, tags, p,
                            Mask(emissions.rows(), true));
}

// log of the summed exponentiated scores of all K^T sequences, via the
// forward algorithm. The backward rule is the forward-backward pass: the
// gradient of logZ is the marginal label (and label-pair) distribution.
inline Tensor crf_log_partition(Tape* tape, const Tensor& emissions,
                                const Mask& mask, const CrfParams& p) {
  detail::check_crf_inputs(emissions, mask, p);
  const std::size_t k = p.num_labels;
  const auto steps = detail::unmasked_steps(mask);
  check(!steps.empty(), "crf_log_partition on an empty effective sequence");

  const auto alpha = detail::crf_alphas(emissions.values(), k, steps,
                                        p.transitions.values(),
                                        p.start.values());
  std::vector<double> last(k);
  for (std::size_t j = 0; j < k; ++j) last[j] = alpha.back()[j] + p.stop[j];
  const double log_z = ops::logsumexp_raw(last.data(), k);
  Tensor out = Tensor::scalar(log_z);

  if (tape) {
    auto en = emissions.node(), tn = p.transitions.node(),
         sn = p.start.node(), pn = p.stop.node();
    tape->record(out, [en, tn, sn, pn, steps, k](const std::vector<double>& g,
                                                 GradBuffer& buf) {
      const auto& em = en->value;
      const auto& trans = tn->value;
      const std::size_t m = steps.size();
      const auto alpha = detail::crf_alphas(em, k, steps, trans, sn->value);

      // beta recursion, then marginals; node values are unchanged between
      // forward and backward within a step, so recomputing here is exact.
      std::vector<std::vector<double>> beta(m, std::vector<double>(k, 0.0));
      for (std::size_t j = 0; j < k; ++j) beta[m - 1][j] = pn->value[j];
      std::vector<double> scratch(k);
      for (std::size_t i = m - 1; i-- > 0;) {
        for (std::size_t a = 0; a < k; ++a) {
          for (std::size_t j = 0; j < k; ++j)
            scratch[j] = trans[a * k + j] + em[steps[i + 1] * k + j] +
                         beta[i + 1][j];
          beta[i][a] = ops::logsumexp_raw(scratch.data(), k);
        }
      }
      std::vector<double> last(k);
      for (std::size_t j = 0; j < k; ++j) last[j] = alpha[m - 1][j] + pn->value[j];
      const double log_z = ops::logsumexp_raw(last.data(), k);

      auto& ge = buf.of(en);
      auto& gt = buf.of(tn);
      auto& gs = buf.of(sn);
      auto& gp = buf.of(pn);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t a = 0; a < k; ++a) {
          const double marginal = std::exp(alpha[i][a] + beta[i][a] - log_z);
          ge[steps[i] * k + a] += marginal * g[0];
          if (i == 0) gs[a] += marginal * g[0];
          if (i == m - 1) gp[a] += marginal * g[0];
        }
      for (std::size_t i = 0; i + 1 < m; ++i)
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t j = 0; j < k; ++j) {
            const double pair =
                std::exp(alpha[i][a] + trans[a * k + j] +
                         em[steps[i + 1] * k + j] + beta[i + 1][j] - log_z);
            gt[a * k + j] += pair * g[0];
          }
    });
  }
  return out;
}

// Negative log-likelihood of the gold sequence: logZ - score(gold).
inline Tensor crf_nll(Tape* tape, const Tensor& emissions, const Mask& mask,
                      const std::vector<std::size_t>& gold,
                      const CrfParams& p) {
  Tensor log_z = crf_log_partition(tape, emissions, mask, p);
  Tensor gold_score = crf_sequence_score(tape, emissions, gold, p, mask);
  return ops::sub(tape, log_z, gold_score);
}

// Max-scoring sequence with deterministic ties: the lowest label index wins.
inline ViterbiPath crf_viterbi(const Tensor& emissions, const Mask& mask,
                               const CrfParams& p) {
  detail::check_crf_inputs(emissions, mask, p);
  const std::size_t k = p.num_labels;
  const auto steps = detail::unmasked_steps(mask);
  check(!steps.empty(), "crf_viterbi on an empty effective sequence");
  const auto& em = emissions.values();
  const std::size_t m = steps.size();

  std::vector<double> score(k), next(k);
  std::vector<std::vector<std::size_t>> backptr(m, std::vector<std::size_t>(k, 0));
  for (std::size_t j = 0; j < k; ++j)
    score[j] = p.start[j] + em[steps[0] * k + j];
  for (std::size_t i = 1; i < m; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      std::size_t best_prev = 0;
      for (std::size_t prev = 0; prev < k; ++prev) {
        const double cand = score[prev] + p.transitions[prev * k + j];
        if (cand > best) {
          best = cand;
          best_prev = prev;
        }
      }
      next[j] = best + em[steps[i] * k + j];
      backptr[i][j] = best_prev;
    }
    score.swap(next);
  }

  double best = -std::numeric_limits<double>::infinity();
  std::size_t best_last = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const double cand = score[j] + p.stop[j];
    if (cand > best) {
      best = cand;
      best_last = j;
    }
  }

  ViterbiPath result;
  result.score = best;
  result.tags.assign(emissions.rows(), 0);
  std::size_t label = best_last;
  for (std::size_t i = m; i-- > 0;) {
    result.tags[steps[i]] = label;
    if (i > 0) label = backptr[i][label];
  }
  return result;
}

}  // namespace hermit
