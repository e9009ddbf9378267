#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "hermit/common.hpp"
#include "hermit/corpus.hpp"
#include "hermit/evaluation.hpp"
#include "hermit/model.hpp"

namespace hermit {

// Dev-set quantity watched for early stopping; higher is better (loss is
// negated).
enum class Monitor { combined_f1, combined_em, dev_loss };

inline std::string to_string(Monitor m) {
  switch (m) {
    case Monitor::combined_f1: return "combined-f1";
    case Monitor::combined_em: return "combined-em";
    case Monitor::dev_loss: return "dev-loss";
  }
  throw std::logic_error("unreachable monitor");
}

inline Monitor monitor_from_string(const std::string& s) {
  if (s == "combined-f1") return Monitor::combined_f1;
  if (s == "combined-em") return Monitor::combined_em;
  if (s == "dev-loss") return Monitor::dev_loss;
  throw DataError("unknown monitor '" + s +
                  "' (expected combined-f1, combined-em, dev-loss)");
}

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;  // global gradient norm ceiling, 0 disables
  std::size_t batch_size = 16;
  std::size_t max_epochs = 100;
  std::size_t patience = 20;  // epochs without improvement, 0 disables
  Monitor monitor = Monitor::combined_f1;
  // Training stops once the monitored metric reaches this (metrics only,
  // never dev loss); 0 disables.
  double target_metric = 1.0;
  bool shuffle = true;
  std::uint64_t shuffle_seed = 1;

  void validate() const {
    check(learning_rate > 0.0, "learning_rate must be positive");
    check(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
          "adam betas must lie in [0,1)");
    check(epsilon > 0.0, "epsilon must be positive");
    check(batch_size >= 1, "batch_size must be positive");
    check(max_epochs >= 1, "max_epochs must be positive");
  }
};

// First and second moment accumulators, parallel to the parameter list.
struct OptimizerState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static OptimizerState for_parameters(const std::vector<Parameter>& params) {
    OptimizerState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const auto& p : params) {
      s.m.emplace_back(p.tensor.size(), 0.0);
      s.v.emplace_back(p.tensor.size(), 0.0);
    }
    return s;
  }
};

// One Adam update with bias correction from the gradients accumulated on the
// parameters. Gradients are cleared afterwards. Aborts on non-finite
// gradients, naming the offending parameter.
inline void adam_step(std::vector<Parameter>& params, OptimizerState& state,
                      const TrainConfig& cfg) {
  check(state.m.size() == params.size() && state.v.size() == params.size(),
        "optimizer state does not match the parameter list");

  double norm_sq = 0.0;
  for (auto& p : params) {
    for (double g : p.tensor.grad()) {
      check_data(std::isfinite(g),
                 "non-finite gradient in parameter '" + p.name + "'");
      norm_sq += g * g;
    }
  }
  double scale = 1.0;
  if (cfg.clip_norm > 0.0) {
    const double norm = std::sqrt(norm_sq);
    if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
  }

  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].tensor.values();
    auto& g = params[i].tensor.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * scale;
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      w[j] -= cfg.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.epsilon);
    }
    params[i].tensor.zero_grad();
  }
}

// Indices of one batch plus the length every sentence is padded to.
struct PaddedBatch {
  std::vector<std::size_t> indices;
  std::size_t max_len = 0;
};

inline PaddedBatch pad_batch(const Corpus& corpus,
                             const std::vector<std::size_t>& indices) {
  check(!indices.empty(), "pad_batch on an empty batch");
  PaddedBatch b;
  b.indices = indices;
  for (std::size_t i : indices)
    b.max_len = std::max(b.max_len, corpus.at(i).length());
  return b;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean per sentence
  double dev_f1 = 0.0;      // combined span F1
  double dev_em = 0.0;      // combined exact match
  double monitored = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_metric = -std::numeric_limits<double>::infinity();
  bool stopped_early = false;
  bool reached_target = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {

inline Corpus predict_corpus(const HermitModel& model, const Corpus& corpus) {
  Corpus out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) out.push_back(model.annotate(s.tokens, s.id));
  return out;
}

inline double dev_loss(const HermitModel& model, const Corpus& dev) {
  double total = 0.0;
  for (const auto& s : dev) total += model.loss(nullptr, s).item();
  return total / static_cast<double>(dev.size());
}

}  // namespace detail

// Adam training with shuffled batches and early stopping on a dev metric.
// The best-scoring parameter values are restored before returning.
inline TrainHistory fit(HermitModel& model, const Corpus& train,
                        const Corpus& dev, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {}) {
  cfg.validate();
  check_data(!train.empty(), "training corpus is empty");
  check_data(!dev.empty(), "dev corpus is empty");

  OptimizerState opt = OptimizerState::for_parameters(model.parameters());
  TrainHistory history;
  std::vector<std::vector<double>> best_values;
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Tape tape;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    if (cfg.shuffle) {
      std::mt19937_64 rng(cfg.shuffle_seed ^ (0x9e3779b97f4a7c15ULL * epoch));
      for (std::size_t i = order.size(); i-- > 1;) {
        const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
        std::swap(order[i], order[j]);
      }
    }

    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(begin + cfg.batch_size, order.size());
      const PaddedBatch batch = pad_batch(
          train, {order.begin() + begin, order.begin() + end});
      tape.clear();
      Tensor total;
      for (std::size_t i : batch.indices) {
        Tensor l = model.loss(&tape, train[i], batch.max_len);
        total = total.defined() ? ops::add(&tape, total, l) : l;
      }
      check_data(std::isfinite(total.item()), "training loss is not finite");
      epoch_loss += total.item();
      Tensor mean = ops::scale(&tape, total,
                               1.0 / static_cast<double>(batch.indices.size()));
      tape.backward(mean);
      adam_step(model.parameters(), opt, cfg);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(train.size());
    const MetricsReport report = evaluate(dev, detail::predict_corpus(model, dev));
    rec.dev_f1 = report.combined.spans.f1();
    rec.dev_em = report.combined.exact;
    switch (cfg.monitor) {
      case Monitor::combined_f1: rec.monitored = rec.dev_f1; break;
      case Monitor::combined_em: rec.monitored = rec.dev_em; break;
      case Monitor::dev_loss: rec.monitored = -detail::dev_loss(model, dev); break;
    }
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.monitored > history.best_metric) {
      history.best_metric = rec.monitored;
      history.best_epoch = epoch;
      since_best = 0;
      best_values.clear();
      for (const auto& p : model.parameters())
        best_values.push_back(p.tensor.values());
    } else {
      ++since_best;
    }

    if (cfg.monitor != Monitor::dev_loss && cfg.target_metric > 0.0 &&
        history.best_metric >= cfg.target_metric) {
      history.reached_target = true;
      break;
    }
    if (cfg.patience > 0 && since_best >= cfg.patience) {
      history.stopped_early = true;
      break;
    }
  }

  if (!best_values.empty()) {
    auto& params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i].tensor.values() = best_values[i];
  }
  return history;
}

struct GridSearchResult {
  std::size_t best_index = 0;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::vector<double> metrics;
};

// Evaluates every candidate and keeps the argmax; the first of equal scores
// wins, so the outcome does not depend on evaluation order.
template <typename Candidate>
GridSearchResult grid_search(
    const std::vector<Candidate>& candidates,
    const std::function<double(const Candidate&)>& evaluate) {
  check(!candidates.empty(), "grid_search needs at least one candidate");
  GridSearchResult result;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double metric = evaluate(candidates[i]);
    result.metrics.push_back(metric);
    if (metric > result.best_metric) {
      result.best_metric = metric;
      result.best_index = i;
    }
  }
  return result;
}

struct CrossvalConfig {
  std::size_t k = 10;
  std::uint64_t split_seed = 1;
  HermitConfig model;
  TrainConfig train;
  std::size_t jobs = 1;  // folds trained in parallel
  // Runs on each freshly built fold model, e.g. to load precomputed
  // embeddings. Must be thread-safe when jobs > 1.
  std::function<void(HermitModel&)> prepare_model;
};

struct FoldResult {
  std::size_t fold = 0;
  MetricsReport report;
  TrainHistory history;
};

struct CrossvalResult {
  FoldSplit split;
  std::vector<FoldResult> folds;
  // metric name, mean, population std over folds
  std::vector<std::tuple<std::string, double, double>> aggregate;
};

// One train/evaluate round per fold: fold r is the test set, fold r+1 the
// dev set, the remainder the training set. Rounds are independent, so they
// can run on separate threads without changing any result.
inline CrossvalResult run_crossval(const Corpus& corpus,
                                   const CrossvalConfig& cfg,
                                   const std::function<void(const FoldResult&)>&
                                       on_fold = {}) {
  cfg.train.validate();
  CrossvalResult result;
  result.split = kfold_split(corpus.size(), cfg.k, cfg.split_seed);
  result.folds.resize(cfg.k);

  auto run_fold = [&](std::size_t fold) {
    const Corpus train_set = subset(corpus, result.split.train_indices(fold));
    const Corpus dev_set = subset(corpus, result.split.tuning_fold(fold));
    const Corpus test_set = subset(corpus, result.split.test_fold(fold));

    Corpus label_source = train_set;
    label_source.insert(label_source.end(), dev_set.begin(), dev_set.end());
    LabelVocabularies labels = collect_labels(label_source);

    HermitConfig model_cfg = cfg.model;
    model_cfg.seed = cfg.model.seed ^ (0x9e3779b97f4a7c15ULL * (fold + 1));
    TrainConfig train_cfg = cfg.train;
    train_cfg.shuffle_seed = cfg.train.shuffle_seed + fold;

    HermitModel model =
        HermitModel::build(model_cfg, labels.da, labels.fr, labels.ar,
                           collect_tokens(label_source));
    if (cfg.prepare_model) cfg.prepare_model(model);
    FoldResult fr;
    fr.fold = fold;
    fr.history = fit(model, train_set, dev_set, train_cfg);
    fr.report = evaluate(test_set, detail::predict_corpus(model, test_set));
    result.folds[fold] = std::move(fr);
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, cfg.k));
  if (jobs == 1) {
    for (std::size_t fold = 0; fold < cfg.k; ++fold) {
      run_fold(fold);
      if (on_fold) on_fold(result.folds[fold]);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&]() {
        for (std::size_t fold = next.fetch_add(1); fold < cfg.k;
             fold = next.fetch_add(1))
          run_fold(fold);
      });
    }
    for (auto& t : workers) t.join();
    if (on_fold)
      for (const auto& fr : result.folds) on_fold(fr);
  }

  std::vector<MetricsReport> reports;
  for (const auto& fr : result.folds) reports.push_back(fr.report);
  result.aggregate = aggregate_reports(reports);
  return result;
}

}  // namespace hermit
