#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "hermit/common.hpp"
#include "hermit/corpus.hpp"

namespace hermit {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  double precision() const {
    return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
  }
  double recall() const {
    return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
  }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }

  ConfusionCounts& operator+=(const ConfusionCounts& other) {
    tp += other.tp;
    fp += other.fp;
    fn += other.fn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) {
    a += b;
    return a;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

// Utterance-level multiclass counts: a correct label is one true positive, a
// wrong one is a false positive for the predicted class and a false negative
// for the gold class.
inline ConfusionCounts intent_counts(const std::vector<std::string>& gold,
                                     const std::vector<std::string>& pred) {
  check(gold.size() == pred.size(), "intent_counts needs equal-length lists (",
        gold.size(), " vs ", pred.size(), ")");
  ConfusionCounts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == pred[i]) {
      ++c.tp;
    } else {
      ++c.fp;
      ++c.fn;
    }
  }
  return c;
}

// Lenient span matching for entities: a predicted chunk counts if its label
// matches and it overlaps the gold chunk in at least one token. Matching is
// greedy one-to-one in gold order.
inline ConfusionCounts entity_counts(const std::vector<Chunk>& gold,
                                     const std::vector<Chunk>& pred) {
  ConfusionCounts c;
  std::vector<bool> used(pred.size(), false);
  for (const Chunk& g : gold) {
    bool matched = false;
    for (std::size_t j = 0; j < pred.size(); ++j) {
      if (used[j] || pred[j].label != g.label) continue;
      const std::size_t lo = std::max(g.start, pred[j].start);
      const std::size_t hi = std::min(g.end, pred[j].end);
      if (lo < hi) {
        used[j] = true;
        matched = true;
        break;
      }
    }
    if (matched)
      ++c.tp;
    else
      ++c.fn;
  }
  for (std::size_t j = 0; j < pred.size(); ++j)
    if (!used[j]) ++c.fp;
  return c;
}

inline ConfusionCounts combined_counts(const ConfusionCounts& intent,
                                       const ConfusionCounts& entity) {
  return intent + entity;
}

// Strict CoNLL-style span counts for one tag row: a chunk scores only when
// label, start, and end all match. Predictions are repaired first, so a
// dangling I-X is read as B-X.
inline ConfusionCounts span_counts_row(const std::vector<std::string>& gold,
                                       const std::vector<std::string>& pred) {
  check(gold.size() == pred.size(), "span_counts_row needs equal-length rows");
  std::vector<Chunk> gold_chunks = extract_chunks(gold);
  std::vector<Chunk> pred_chunks = extract_chunks_lenient(pred);
  ConfusionCounts c;
  std::vector<bool> used(pred_chunks.size(), false);
  for (const Chunk& g : gold_chunks) {
    bool matched = false;
    for (std::size_t j = 0; j < pred_chunks.size(); ++j) {
      if (!used[j] && pred_chunks[j] == g) {
        used[j] = true;
        matched = true;
        break;
      }
    }
    if (matched)
      ++c.tp;
    else
      ++c.fn;
  }
  for (std::size_t j = 0; j < pred_chunks.size(); ++j)
    if (!used[j]) ++c.fp;
  return c;
}

inline ConfusionCounts span_counts(
    const std::vector<std::vector<std::string>>& gold,
    const std::vector<std::vector<std::string>>& pred) {
  check(gold.size() == pred.size(), "span_counts needs equal-length corpora");
  ConfusionCounts c;
  for (std::size_t i = 0; i < gold.size(); ++i)
    c += span_counts_row(gold[i], pred[i]);
  return c;
}

inline double span_f1(const std::vector<std::vector<std::string>>& gold,
                      const std::vector<std::vector<std::string>>& pred) {
  return span_counts(gold, pred).f1();
}

namespace detail {

// Canonical form of a tag row: the row that regenerates its repaired chunks.
inline std::vector<std::string> repair_tags(const std::vector<std::string>& tags) {
  return chunks_to_tags(extract_chunks_lenient(tags), tags.size());
}

}  // namespace detail

// A row matches when its repaired chunks equal the gold chunks exactly.
inline bool rows_match(const std::vector<std::string>& gold,
                       const std::vector<std::string>& pred) {
  check(gold.size() == pred.size(), "rows_match needs equal-length rows");
  return detail::repair_tags(pred) == detail::repair_tags(gold);
}

inline double exact_match(const std::vector<std::vector<std::string>>& gold,
                          const std::vector<std::vector<std::string>>& pred) {
  check(gold.size() == pred.size(), "exact_match needs equal-length corpora");
  if (gold.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i)
    if (rows_match(gold[i], pred[i])) ++hits;
  return static_cast<double>(hits) / gold.size();
}

// Fraction of sentences where all three rows match at once.
inline double combined_em(const Corpus& gold, const Corpus& pred) {
  check(gold.size() == pred.size(), "combined_em needs equal-length corpora");
  if (gold.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (rows_match(gold[i].da_tags, pred[i].da_tags) &&
        rows_match(gold[i].fr_tags, pred[i].fr_tags) &&
        rows_match(gold[i].ar_tags, pred[i].ar_tags))
      ++hits;
  }
  return static_cast<double>(hits) / gold.size();
}

// Utterance intent string: first dialogue-act chunk label joined with the
// first frame chunk label, "none" standing in for a missing chunk.
inline std::string derive_intent(const AnnotatedSentence& s) {
  auto first_label = [](const std::vector<std::string>& tags) -> std::string {
    std::vector<Chunk> chunks = extract_chunks_lenient(tags);
    return chunks.empty() ? "none" : chunks.front().label;
  };
  return first_label(s.da_tags) + "_" + first_label(s.fr_tags);
}

struct TaskReport {
  ConfusionCounts spans;
  double exact = 0.0;
};

struct MetricsReport {
  TaskReport da;
  TaskReport fr;
  TaskReport ar;
  TaskReport combined;       // spans summed over tasks, exact is the conjunction
  ConfusionCounts intent;    // utterance intents derived from DA and FR chunks
  ConfusionCounts entity;    // AR chunks under lenient overlap matching
  ConfusionCounts intent_entity;

  std::vector<std::pair<std::string, double>> flatten() const {
    std::vector<std::pair<std::string, double>> out;
    auto task = [&](const std::string& name, const TaskReport& t) {
      out.emplace_back(name + ".precision", t.spans.precision());
      out.emplace_back(name + ".recall", t.spans.recall());
      out.emplace_back(name + ".f1", t.spans.f1());
      out.emplace_back(name + ".exact_match", t.exact);
    };
    task("da", da);
    task("fr", fr);
    task("ar", ar);
    task("combined", combined);
    auto counts = [&](const std::string& name, const ConfusionCounts& c) {
      out.emplace_back(name + ".precision", c.precision());
      out.emplace_back(name + ".recall", c.recall());
      out.emplace_back(name + ".f1", c.f1());
    };
    counts("intent", intent);
    counts("entity", entity);
    counts("intent_entity", intent_entity);
    return out;
  }
};

inline void check_aligned(const Corpus& gold, const Corpus& pred) {
  check_data(gold.size() == pred.size(),
             str_cat("gold and predicted corpora differ in size (", gold.size(),
                     " vs ", pred.size(), ")"));
  for (std::size_t i = 0; i < gold.size(); ++i) {
    check_data(gold[i].tokens.size() == pred[i].tokens.size(),
               "sentence '" + gold[i].id + "' differs in length between gold and predictions");
  }
}

inline MetricsReport evaluate(const Corpus& gold, const Corpus& pred) {
  check_aligned(gold, pred);
  MetricsReport r;

  auto rows = [](const Corpus& c, auto member) {
    std::vector<std::vector<std::string>> out;
    out.reserve(c.size());
    for (const auto& s : c) out.push_back(s.*member);
    return out;
  };
  const auto gd = rows(gold, &AnnotatedSentence::da_tags);
  const auto pd = rows(pred, &AnnotatedSentence::da_tags);
  const auto gf = rows(gold, &AnnotatedSentence::fr_tags);
  const auto pf = rows(pred, &AnnotatedSentence::fr_tags);
  const auto ga = rows(gold, &AnnotatedSentence::ar_tags);
  const auto pa = rows(pred, &AnnotatedSentence::ar_tags);

  r.da = {span_counts(gd, pd), exact_match(gd, pd)};
  r.fr = {span_counts(gf, pf), exact_match(gf, pf)};
  r.ar = {span_counts(ga, pa), exact_match(ga, pa)};
  r.combined = {r.da.spans + r.fr.spans + r.ar.spans, combined_em(gold, pred)};

  std::vector<std::string> gold_intents, pred_intents;
  ConfusionCounts entities;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    gold_intents.push_back(derive_intent(gold[i]));
    pred_intents.push_back(derive_intent(pred[i]));
    entities += entity_counts(extract_chunks_lenient(gold[i].ar_tags),
                              extract_chunks_lenient(pred[i].ar_tags));
  }
  r.intent = intent_counts(gold_intents, pred_intents);
  r.entity = entities;
  r.intent_entity = combined_counts(r.intent, r.entity);
  return r;
}

struct PairedSample {
  double a = 0.0;
  double b = 0.0;
};

struct WilcoxonResult {
  std::size_t n = 0;    // pairs left after dropping zero differences
  double w_plus = 0.0;
  double w_minus = 0.0;
  double w = 0.0;       // min(w_plus, w_minus)
  double z = 0.0;
  double p_exact = std::numeric_limits<double>::quiet_NaN();
  double p_normal = 1.0;
  bool exact = false;   // p comes from the exact null distribution
  double p = 1.0;
};

namespace detail {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// P(W+ <= w) under the signed-rank null, by subset-sum counting. Ranks are
// doubled so tied (half-integer) average ranks stay integral.
inline double exact_signed_rank_cdf(const std::vector<long long>& doubled_ranks,
                                    long long doubled_w) {
  long long total = 0;
  for (long long r : doubled_ranks) total += r;
  std::vector<double> ways(static_cast<std::size_t>(total) + 1, 0.0);
  ways[0] = 1.0;
  for (long long r : doubled_ranks) {
    for (long long s = total; s >= r; --s)
      ways[static_cast<std::size_t>(s)] += ways[static_cast<std::size_t>(s - r)];
  }
  double below = 0.0, all = 0.0;
  for (long long s = 0; s <= total; ++s) {
    all += ways[static_cast<std::size_t>(s)];
    if (s <= doubled_w) below += ways[static_cast<std::size_t>(s)];
  }
  return below / all;
}

}  // namespace detail

// Two-sided Wilcoxon signed-rank test. Zero differences are dropped, ties get
// average ranks, and the statistic is the smaller of the signed rank sums.
// Up to `exact_limit` pairs the p-value comes from the exact distribution;
// beyond that from the tie-corrected normal approximation (no continuity
// correction). Both values are reported either way.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<PairedSample>& pairs,
                                           std::size_t exact_limit = 25) {
  std::vector<double> diffs;
  for (const auto& p : pairs) {
    const double d = p.b - p.a;
    if (d != 0.0) diffs.push_back(d);
  }
  WilcoxonResult res;
  res.n = diffs.size();
  if (diffs.empty()) {
    res.p_exact = 1.0;
    res.exact = true;
    return res;
  }

  std::vector<std::size_t> order(diffs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return std::abs(diffs[x]) < std::abs(diffs[y]);
  });

  std::vector<double> rank(diffs.size(), 0.0);
  double tie_correction = 0.0;  // sum of t^3 - t over tie groups
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() &&
           std::abs(diffs[order[j]]) == std::abs(diffs[order[i]]))
      ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) rank[order[k]] = avg;
    const double t = static_cast<double>(j - i);
    tie_correction += t * t * t - t;
    i = j;
  }

  for (std::size_t i = 0; i < diffs.size(); ++i) {
    if (diffs[i] > 0.0)
      res.w_plus += rank[i];
    else
      res.w_minus += rank[i];
  }
  res.w = std::min(res.w_plus, res.w_minus);

  const double n = static_cast<double>(res.n);
  const double mu = n * (n + 1.0) / 4.0;
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_correction / 48.0;
  res.z = var > 0.0 ? (res.w - mu) / std::sqrt(var) : 0.0;
  res.p_normal = std::min(1.0, 2.0 * detail::normal_cdf(res.z));

  if (res.n <= exact_limit) {
    std::vector<long long> doubled;
    for (std::size_t i = 0; i < diffs.size(); ++i)
      doubled.push_back(std::llround(2.0 * rank[i]));
    const double cdf = detail::exact_signed_rank_cdf(
        doubled, std::llround(2.0 * res.w));
    res.p_exact = std::min(1.0, 2.0 * cdf);
    res.exact = true;
    res.p = res.p_exact;
  } else {
    res.p = res.p_normal;
  }
  return res;
}

inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a,
                                           const std::vector<double>& b,
                                           std::size_t exact_limit = 25) {
  check(a.size() == b.size(), "wilcoxon_signed_rank needs equal-length samples");
  std::vector<PairedSample> pairs(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) pairs[i] = {a[i], b[i]};
  return wilcoxon_signed_rank(pairs, exact_limit);
}

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

inline Aggregate aggregate_folds(const std::vector<double>& values) {
  check(!values.empty(), "aggregate_folds needs at least one value");
  Aggregate agg;
  for (double v : values) agg.mean += v;
  agg.mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - agg.mean) * (v - agg.mean);
  agg.std = std::sqrt(ss / static_cast<double>(values.size()));
  return agg;
}

// Per-metric mean and spread across fold reports, keyed like "da.f1".
inline std::vector<std::tuple<std::string, double, double>> aggregate_reports(
    const std::vector<MetricsReport>& reports) {
  check(!reports.empty(), "aggregate_reports needs at least one report");
  const auto keys = reports.front().flatten();
  std::vector<std::tuple<std::string, double, double>> out;
  for (std::size_t k = 0; k < keys.size(); ++k) {
    std::vector<double> values;
    for (const auto& r : reports) {
      const auto flat = r.flatten();
      values.push_back(flat[k].second);
    }
    const Aggregate agg = aggregate_folds(values);
    out.emplace_back(keys[k].first, agg.mean, agg.std);
  }
  return out;
}

}  // namespace hermit
