#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "hermit/attention.hpp"
#include "hermit/common.hpp"
#include "hermit/corpus.hpp"
#include "hermit/crf.hpp"
#include "hermit/embedding.hpp"
#include "hermit/lstm.hpp"
#include "hermit/tensor.hpp"

namespace hermit {

// Cumulative feature removals, matching the ablation study: self-attention,
// then the embedding shortcut connections, then the CRF output layers.
enum class AblationPreset { full, no_sa, no_sa_cn, no_sa_crf, no_sa_cn_crf };

inline std::string to_string(AblationPreset p) {
  switch (p) {
    case AblationPreset::full: return "full";
    case AblationPreset::no_sa: return "no-sa";
    case AblationPreset::no_sa_cn: return "no-sa-cn";
    case AblationPreset::no_sa_crf: return "no-sa-crf";
    case AblationPreset::no_sa_cn_crf: return "no-sa-cn-crf";
  }
  throw std::logic_error("unreachable ablation preset");
}

inline AblationPreset ablation_preset_from_string(std::string s) {
  if (!s.empty() && s[0] == '-') s = "no" + s;  // "-sa-cn" style alias
  if (s == "full") return AblationPreset::full;
  if (s == "no-sa") return AblationPreset::no_sa;
  if (s == "no-sa-cn") return AblationPreset::no_sa_cn;
  if (s == "no-sa-crf") return AblationPreset::no_sa_crf;
  if (s == "no-sa-cn-crf") return AblationPreset::no_sa_cn_crf;
  throw DataError("unknown ablation preset '" + s +
                  "' (expected full, no-sa, no-sa-cn, no-sa-crf, no-sa-cn-crf)");
}

struct HermitConfig {
  EmbeddingMode embedding_mode = EmbeddingMode::trainable;
  std::size_t embedding_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t attn_dim = 0;  // 0 picks hidden_dim
  bool use_self_attention = true;
  bool use_shortcuts = true;
  bool use_crf = true;
  std::uint64_t seed = 1;

  std::size_t attention_width() const {
    return attn_dim == 0 ? hidden_dim : attn_dim;
  }

  void apply(AblationPreset p) {
    use_self_attention = p == AblationPreset::full;
    use_shortcuts = p != AblationPreset::no_sa_cn && p != AblationPreset::no_sa_cn_crf;
    use_crf = p != AblationPreset::no_sa_crf && p != AblationPreset::no_sa_cn_crf;
  }

  void validate() const {
    check(embedding_dim >= 1, "embedding_dim must be positive");
    check(hidden_dim >= 1, "hidden_dim must be positive");
    check(!use_self_attention || attention_width() >= 1,
          "attention width must be positive");
  }

  bool operator==(const HermitConfig&) const = default;
};

struct TriPrediction {
  std::vector<std::string> da_tags;
  std::vector<std::string> fr_tags;
  std::vector<std::string> ar_tags;
};

// Intermediate activations of one forward pass, kept for inspection.
struct TriTrace {
  Mask mask;
  Tensor embedded;
  Tensor s_da, a_da;
  Tensor x_fr, s_fr, a_fr;
  Tensor x_ar, s_ar;
  Tensor da_scores, fr_scores, ar_scores;  // [T, K] per task
};

namespace detail {

inline Tensor uniform_tensor(std::mt19937_64& rng, const Shape& shape,
                             double bound) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> data(n);
  for (double& v : data) v = uniform(rng, -bound, bound);
  return Tensor(shape, std::move(data));
}

// BiLSTM input weights split by feature source, so that dropping the shortcut
// connections removes whole named parameters instead of shrinking one matrix.
struct SplitBiLstm {
  Tensor fwd_w_embed, fwd_w_lower, fwd_w_recurrent, fwd_bias;
  Tensor bwd_w_embed, bwd_w_lower, bwd_w_recurrent, bwd_bias;
  std::size_t embed_dim = 0;  // 0 when the level has no embedding input
  std::size_t lower_dim = 0;  // 0 when the level has no lower-layer input
  std::size_t hidden_dim = 0;

  BiLstmParams assemble(Tape* tape) const {
    auto join = [&](const Tensor& we, const Tensor& wl) {
      if (embed_dim == 0) return wl;
      if (lower_dim == 0) return we;
      return ops::concat(tape, we, wl);
    };
    BiLstmParams p;
    p.forward = {join(fwd_w_embed, fwd_w_lower), fwd_w_recurrent, fwd_bias,
                 embed_dim + lower_dim, hidden_dim};
    p.backward = {join(bwd_w_embed, bwd_w_lower), bwd_w_recurrent, bwd_bias,
                  embed_dim + lower_dim, hidden_dim};
    return p;
  }
};

struct TaggerHead {
  Tensor emit_weight;  // [2H, K]
  Tensor emit_bias;    // [K]
  CrfParams crf;       // populated only when the CRF layer is on
};

}  // namespace detail

inline std::vector<std::size_t> tags_to_indices(
    const LabelVocabulary& vocab, const std::vector<std::string>& tags,
    std::size_t pad_to = 0) {
  std::vector<std::size_t> out;
  out.reserve(std::max(pad_to, tags.size()));
  for (const auto& tag : tags) out.push_back(vocab.index_of(tag));
  while (out.size() < pad_to) out.push_back(0);
  return out;
}

struct LabelVocabularies {
  LabelVocabulary da, fr, ar;
};

inline LabelVocabularies collect_labels(const Corpus& corpus) {
  std::vector<const std::vector<std::string>*> da, fr, ar;
  for (const auto& s : corpus) {
    da.push_back(&s.da_tags);
    fr.push_back(&s.fr_tags);
    ar.push_back(&s.ar_tags);
  }
  return {LabelVocabulary::from_rows(da), LabelVocabulary::from_rows(fr),
          LabelVocabulary::from_rows(ar)};
}

inline std::vector<std::string> collect_tokens(const Corpus& corpus) {
  std::set<std::string> seen;
  for (const auto& s : corpus) seen.insert(s.tokens.begin(), s.tokens.end());
  return {seen.begin(), seen.end()};
}

// Three stacked sequence taggers over one shared embedding layer. Each level
// runs a BiLSTM, optionally self-attention, and feeds the next level either
// its output alone or the embeddings concatenated back in.
class HermitModel {
 public:
  HermitModel() = default;
  HermitModel(const HermitModel&) = delete;
  HermitModel& operator=(const HermitModel&) = delete;
  HermitModel(HermitModel&&) = default;
  HermitModel& operator=(HermitModel&&) = default;

  static HermitModel build(const HermitConfig& cfg, LabelVocabulary da,
                           LabelVocabulary fr, LabelVocabulary ar,
                           const std::vector<std::string>& token_vocab = {}) {
    cfg.validate();
    check(da.size() >= 1 && fr.size() >= 1 && ar.size() >= 1,
          "label vocabularies must be nonempty");
    HermitModel m;
    m.config_ = cfg;
    m.da_labels_ = std::move(da);
    m.fr_labels_ = std::move(fr);
    m.ar_labels_ = std::move(ar);

    switch (cfg.embedding_mode) {
      case EmbeddingMode::precomputed:
        m.embeddings_ = EmbeddingProvider::make_precomputed(cfg.embedding_dim);
        break;
      case EmbeddingMode::trainable:
        m.embeddings_ = EmbeddingProvider::make_trainable(
            token_vocab, cfg.embedding_dim, cfg.seed);
        m.params_.push_back(*m.embeddings_.table_parameter());
        break;
      case EmbeddingMode::fixed_random:
        m.embeddings_ = EmbeddingProvider::make_fixed_random(cfg.embedding_dim,
                                                             cfg.seed);
        break;
    }

    std::mt19937_64 rng(cfg.seed ^ 0x75bcd15e9d2a06b1ULL);
    const std::size_t d = cfg.embedding_dim;
    const std::size_t h = cfg.hidden_dim;
    const std::size_t width = 2 * h;  // every level's output width

    m.da_lstm_ = m.build_lstm(rng, "da", d, 0);
    if (cfg.use_self_attention) m.da_attn_ = m.build_attention(rng, "da");
    m.fr_lstm_ = m.build_lstm(rng, "fr", cfg.use_shortcuts ? d : 0, width);
    if (cfg.use_self_attention) m.fr_attn_ = m.build_attention(rng, "fr");
    m.ar_lstm_ = m.build_lstm(rng, "ar", cfg.use_shortcuts ? d : 0, width);

    m.da_head_ = m.build_head(rng, "da", m.da_labels_.size());
    m.fr_head_ = m.build_head(rng, "fr", m.fr_labels_.size());
    m.ar_head_ = m.build_head(rng, "ar", m.ar_labels_.size());
    return m;
  }

  const HermitConfig& config() const { return config_; }
  const LabelVocabulary& da_labels() const { return da_labels_; }
  const LabelVocabulary& fr_labels() const { return fr_labels_; }
  const LabelVocabulary& ar_labels() const { return ar_labels_; }
  EmbeddingProvider& embeddings() { return embeddings_; }
  const EmbeddingProvider& embeddings() const { return embeddings_; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  Parameter& parameter(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw std::invalid_argument("no parameter named '" + name + "'");
  }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    names.reserve(params_.size());
    for (const auto& p : params_) names.push_back(p.name);
    return names;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  // Runs the full stack. pad_to extends the sequence with masked positions so
  // batched sentences share a length; 0 keeps the true length.
  TriTrace forward(Tape* tape, const std::vector<std::string>& tokens,
                   const std::string& sentence_id = "",
                   std::size_t pad_to = 0) const {
    check(!tokens.empty(), "forward on an empty sentence");
    const std::size_t t_real = tokens.size();
    const std::size_t t_len = std::max(pad_to, t_real);

    TriTrace tr;
    tr.mask.assign(t_len, false);
    for (std::size_t t = 0; t < t_real; ++t) tr.mask[t] = true;

    Tensor e = embeddings_.embed(tape, tokens, sentence_id);
    if (t_len > t_real) e = ops::pad_rows(tape, e, t_len);
    tr.embedded = e;

    tr.s_da = bilstm_forward(tape, e, tr.mask, da_lstm_.assemble(tape));
    tr.a_da = config_.use_self_attention
                  ? self_attention(tape, tr.s_da, tr.mask, da_attn_)
                  : tr.s_da;

    tr.x_fr = config_.use_shortcuts ? ops::concat(tape, e, tr.a_da) : tr.a_da;
    tr.s_fr = bilstm_forward(tape, tr.x_fr, tr.mask, fr_lstm_.assemble(tape));
    tr.a_fr = config_.use_self_attention
                  ? self_attention(tape, tr.s_fr, tr.mask, fr_attn_)
                  : tr.s_fr;

    tr.x_ar = config_.use_shortcuts ? ops::concat(tape, e, tr.a_fr) : tr.a_fr;
    tr.s_ar = bilstm_forward(tape, tr.x_ar, tr.mask, ar_lstm_.assemble(tape));

    tr.da_scores = emissions(tape, tr.a_da, da_head_);
    tr.fr_scores = emissions(tape, tr.a_fr, fr_head_);
    tr.ar_scores = emissions(tape, tr.s_ar, ar_head_);
    return tr;
  }

  // Sum of the three task losses: CRF negative log-likelihood, or per-token
  // cross-entropy when the CRF layer is off.
  Tensor loss(Tape* tape, const AnnotatedSentence& s,
              std::size_t pad_to = 0) const {
    validate_sentence(s);
    TriTrace tr = forward(tape, s.tokens, s.id, pad_to);
    const std::size_t t_len = tr.mask.size();
    Tensor da = task_loss(tape, tr.da_scores, tr.mask,
                          tags_to_indices(da_labels_, s.da_tags, t_len),
                          da_head_);
    Tensor fr = task_loss(tape, tr.fr_scores, tr.mask,
                          tags_to_indices(fr_labels_, s.fr_tags, t_len),
                          fr_head_);
    Tensor ar = task_loss(tape, tr.ar_scores, tr.mask,
                          tags_to_indices(ar_labels_, s.ar_tags, t_len),
                          ar_head_);
    return ops::add(tape, ops::add(tape, da, fr), ar);
  }

  TriPrediction predict(const std::vector<std::string>& tokens,
                        const std::string& sentence_id = "") const {
    TriTrace tr = forward(nullptr, tokens, sentence_id, 0);
    TriPrediction out;
    out.da_tags = decode(tr.da_scores, tr.mask, da_head_, da_labels_);
    out.fr_tags = decode(tr.fr_scores, tr.mask, fr_head_, fr_labels_);
    out.ar_tags = decode(tr.ar_scores, tr.mask, ar_head_, ar_labels_);
    return out;
  }

  AnnotatedSentence annotate(const std::vector<std::string>& tokens,
                             const std::string& sentence_id = "") const {
    TriPrediction p = predict(tokens, sentence_id);
    AnnotatedSentence s;
    s.id = sentence_id;
    s.tokens = tokens;
    s.da_tags = std::move(p.da_tags);
    s.fr_tags = std::move(p.fr_tags);
    s.ar_tags = std::move(p.ar_tags);
    return s;
  }

 private:
  Tensor reg(std::string name, Tensor t) {
    params_.emplace_back(std::move(name), std::move(t));
    return params_.back().tensor;
  }

  detail::SplitBiLstm build_lstm(std::mt19937_64& rng, const std::string& task,
                                 std::size_t embed_dim, std::size_t lower_dim) {
    const std::size_t h = config_.hidden_dim;
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    detail::SplitBiLstm p;
    p.embed_dim = embed_dim;
    p.lower_dim = lower_dim;
    p.hidden_dim = h;
    auto direction = [&](const std::string& dir, Tensor& w_embed,
                         Tensor& w_lower, Tensor& w_rec, Tensor& bias) {
      const std::string base = task + ".lstm." + dir + ".";
      if (embed_dim > 0)
        w_embed = reg(base + "w_embed",
                      detail::uniform_tensor(rng, {4 * h, embed_dim}, bound));
      if (lower_dim > 0)
        w_lower = reg(base + "w_lower",
                      detail::uniform_tensor(rng, {4 * h, lower_dim}, bound));
      w_rec = reg(base + "w_recurrent",
                  detail::uniform_tensor(rng, {4 * h, h}, bound));
      Tensor b = Tensor::zeros({1, 4 * h});
      for (std::size_t i = h; i < 2 * h; ++i) b.at(i) = 1.0;  // forget gate
      bias = reg(base + "bias", std::move(b));
    };
    direction("fwd", p.fwd_w_embed, p.fwd_w_lower, p.fwd_w_recurrent, p.fwd_bias);
    direction("bwd", p.bwd_w_embed, p.bwd_w_lower, p.bwd_w_recurrent, p.bwd_bias);
    return p;
  }

  SelfAttentionParams build_attention(std::mt19937_64& rng,
                                      const std::string& task) {
    const std::size_t width = 2 * config_.hidden_dim;
    const std::size_t a = config_.attention_width();
    const double bound = 1.0 / std::sqrt(static_cast<double>(width));
    SelfAttentionParams p;
    p.input_dim = width;
    p.attn_width = a;
    p.wq = reg(task + ".attn.wq", detail::uniform_tensor(rng, {width, a}, bound));
    p.wk = reg(task + ".attn.wk", detail::uniform_tensor(rng, {width, a}, bound));
    p.wv = reg(task + ".attn.wv",
               detail::uniform_tensor(rng, {width, width}, bound));
    return p;
  }

  detail::TaggerHead build_head(std::mt19937_64& rng, const std::string& task,
                                std::size_t k) {
    const std::size_t width = 2 * config_.hidden_dim;
    const double bound = 1.0 / std::sqrt(static_cast<double>(width));
    detail::TaggerHead head;
    head.emit_weight = reg(task + ".emit.weight",
                           detail::uniform_tensor(rng, {width, k}, bound));
    head.emit_bias = reg(task + ".emit.bias", Tensor::zeros({k}));
    if (config_.use_crf) {
      head.crf.num_labels = k;
      head.crf.transitions = reg(task + ".crf.transitions", Tensor::zeros({k, k}));
      head.crf.start = reg(task + ".crf.start", Tensor::zeros({k}));
      head.crf.stop = reg(task + ".crf.stop", Tensor::zeros({k}));
    }
    return head;
  }

  static Tensor emissions(Tape* tape, const Tensor& h,
                          const detail::TaggerHead& head) {
    return ops::add_row_bias(tape, ops::matmul(tape, h, head.emit_weight),
                             head.emit_bias);
  }

  Tensor task_loss(Tape* tape, const Tensor& scores, const Mask& mask,
                   const std::vector<std::size_t>& gold,
                   const detail::TaggerHead& head) const {
    if (config_.use_crf) return crf_nll(tape, scores, mask, gold, head.crf);
    const std::size_t k = scores.cols();
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t t = 0; t < mask.size(); ++t) {
      if (!mask[t]) continue;
      Tensor row = ops::take_row(tape, scores, t);
      Tensor nll = ops::sub(tape, ops::logsumexp(tape, row),
                            ops::pick(tape, row, gold[t]));
      check(gold[t] < k, "gold label index out of range");
      total = ops::add(tape, total, nll);
    }
    return total;
  }

  std::vector<std::string> decode(const Tensor& scores, const Mask& mask,
                                  const detail::TaggerHead& head,
                                  const LabelVocabulary& vocab) const {
    std::vector<std::size_t> indices;
    if (config_.use_crf) {
      indices = crf_viterbi(scores, mask, head.crf).tags;
    } else {
      indices.assign(mask.size(), 0);
      const std::size_t k = scores.cols();
      for (std::size_t t = 0; t < mask.size(); ++t) {
        if (!mask[t]) continue;
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
          if (scores.at2(t, j) > scores.at2(t, best)) best = j;
        indices[t] = best;
      }
    }
    std::vector<std::string> tags;
    for (std::size_t t = 0; t < mask.size(); ++t)
      if (mask[t]) tags.push_back(vocab.tag(indices[t]));
    return tags;
  }

  HermitConfig config_;
  LabelVocabulary da_labels_, fr_labels_, ar_labels_;
  EmbeddingProvider embeddings_;
  std::vector<Parameter> params_;

  detail::SplitBiLstm da_lstm_, fr_lstm_, ar_lstm_;
  SelfAttentionParams da_attn_, fr_attn_;
  detail::TaggerHead da_head_, fr_head_, ar_head_;
};

}  // namespace hermit
