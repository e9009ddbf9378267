#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <vector>

#include "hermit/crf.hpp"
#include "support/testutil.hpp"

using namespace hermit;
using Catch::Approx;

namespace {

CrfParams rand_crf(std::mt19937_64& rng, std::size_t k) {
  CrfParams p;
  p.num_labels = k;
  p.transitions = testutil::rand_tensor(rng, {k, k});
  p.start = testutil::rand_tensor(rng, {k});
  p.stop = testutil::rand_tensor(rng, {k});
  return p;
}

std::vector<std::vector<double>> emission_grid(const Tensor& e) {
  std::vector<std::vector<double>> out(e.rows());
  for (std::size_t t = 0; t < e.rows(); ++t)
    for (std::size_t j = 0; j < e.cols(); ++j) out[t].push_back(e.at2(t, j));
  return out;
}

std::vector<std::vector<double>> transition_grid(const CrfParams& p) {
  const std::size_t k = p.num_labels;
  std::vector<std::vector<double>> out(k, std::vector<double>(k));
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) out[a][b] = p.transitions[a * k + b];
  return out;
}

}  // namespace

TEST_CASE("log partition and viterbi agree with exhaustive enumeration",
          "[crf]") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t k = 2 + rng() % 4;   // 2..5 labels
    const std::size_t t_len = 1 + rng() % 6;  // 1..6 steps
    CrfParams p = rand_crf(rng, k);
    Tensor e = testutil::rand_tensor(rng, {t_len, k}, -2, 2);
    const auto ref = oracle::crf_enumerate(emission_grid(e),
                                           transition_grid(p),
                                           p.start.values(), p.stop.values());

    const Mask mask(t_len, true);
    Tensor log_z = crf_log_partition(nullptr, e, mask, p);
    CHECK(oracle::rel_err(log_z.item(), ref.log_partition) < 1e-9);

    ViterbiPath best = crf_viterbi(e, mask, p);
    CHECK(best.score == Approx(ref.best_score).epsilon(1e-12));
    CHECK(best.tags == ref.best_path);

    Tensor score = crf_sequence_score(nullptr, e, ref.best_path, p, mask);
    CHECK(score.item() == Approx(ref.best_score).epsilon(1e-12));
  }
}

TEST_CASE("masked crf equals enumeration on the surviving subsequence",
          "[crf]") {
  std::mt19937_64 rng(42);
  const std::size_t k = 3, t_len = 5;
  CrfParams p = rand_crf(rng, k);
  Tensor e = testutil::rand_tensor(rng, {t_len, k});
  Mask mask{true, false, true, true, false};

  std::vector<std::vector<double>> sub_em;
  const auto full = emission_grid(e);
  for (std::size_t t : {0, 2, 3}) sub_em.push_back(full[t]);
  const auto ref = oracle::crf_enumerate(sub_em, transition_grid(p),
                                         p.start.values(), p.stop.values());

  CHECK(oracle::rel_err(crf_log_partition(nullptr, e, mask, p).item(),
                        ref.log_partition) < 1e-9);

  ViterbiPath best = crf_viterbi(e, mask, p);
  CHECK(best.score == Approx(ref.best_score).epsilon(1e-12));
  CHECK(best.tags[0] == ref.best_path[0]);
  CHECK(best.tags[2] == ref.best_path[1]);
  CHECK(best.tags[3] == ref.best_path[2]);
  CHECK(best.tags[1] == 0);  // masked slots are zero-filled
  CHECK(best.tags[4] == 0);

  // the sequence score only reads unmasked steps
  std::vector<std::size_t> tags{2, 0, 1, 2, 0};
  double manual = p.start[2] + e.at2(0, 2) + p.transitions[2 * k + 1] +
                  e.at2(2, 1) + p.transitions[1 * k + 2] + e.at2(3, 2) +
                  p.stop[2];
  CHECK(crf_sequence_score(nullptr, e, tags, p, mask).item() ==
        Approx(manual).epsilon(1e-12));
}

TEST_CASE("nll is log partition minus gold score and never negative",
          "[crf]") {
  std::mt19937_64 rng(43);
  const std::size_t k = 4, t_len = 6;
  CrfParams p = rand_crf(rng, k);
  Tensor e = testutil::rand_tensor(rng, {t_len, k});
  const Mask mask(t_len, true);
  std::vector<std::size_t> gold(t_len);
  for (auto& g : gold) g = rng() % k;

  const double log_z = crf_log_partition(nullptr, e, mask, p).item();
  const double score = crf_sequence_score(nullptr, e, gold, p, mask).item();
  const double nll = crf_nll(nullptr, e, mask, gold, p).item();
  CHECK(nll == Approx(log_z - score).epsilon(1e-12));
  CHECK(nll >= 0.0);

  // even the best path cannot push the nll below zero
  ViterbiPath best = crf_viterbi(e, mask, p);
  CHECK(crf_nll(nullptr, e, mask, best.tags, p).item() >= 0.0);
}

TEST_CASE("crf gradients match finite differences", "[crf]") {
  std::mt19937_64 rng(44);
  const std::size_t k = 3, t_len = 4;
  CrfParams p = rand_crf(rng, k);
  Tensor e = testutil::rand_tensor(rng, {t_len, k});
  Mask mask{true, true, false, true};
  std::vector<std::size_t> gold{1, 2, 0, 0};

  SECTION("log partition") {
    const double err = testutil::check_gradients(
        [&](Tape* t) { return crf_log_partition(t, e, mask, p); },
        {{"emissions", e},
         {"transitions", p.transitions},
         {"start", p.start},
         {"stop", p.stop}});
    CHECK(err < 1e-6);
  }

  SECTION("sequence score") {
    const double err = testutil::check_gradients(
        [&](Tape* t) { return crf_sequence_score(t, e, gold, p, mask); },
        {{"emissions", e},
         {"transitions", p.transitions},
         {"start", p.start},
         {"stop", p.stop}});
    CHECK(err < 1e-6);
  }

  SECTION("negative log likelihood") {
    const double err = testutil::check_gradients(
        [&](Tape* t) { return crf_nll(t, e, mask, gold, p); },
        {{"emissions", e},
         {"transitions", p.transitions},
         {"start", p.start},
         {"stop", p.stop}});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("log partition emission gradients are per-step marginals", "[crf]") {
  std::mt19937_64 rng(45);
  const std::size_t k = 4, t_len = 5;
  CrfParams p = rand_crf(rng, k);
  Tensor e = testutil::rand_tensor(rng, {t_len, k});
  e.set_requires_grad(true);
  e.zero_grad();

  Tape tape;
  tape.backward(crf_log_partition(&tape, e, Mask(t_len, true), p));
  for (std::size_t t = 0; t < t_len; ++t) {
    double row = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      row += e.grad()[t * k + j];
      CHECK(e.grad()[t * k + j] >= 0.0);
    }
    CHECK(row == Approx(1.0).epsilon(1e-9));  // one label per step
  }
}

TEST_CASE("viterbi ties resolve to the lowest label indices", "[crf]") {
  const std::size_t k = 3, t_len = 4;
  CrfParams p;
  p.num_labels = k;
  p.transitions = Tensor::zeros({k, k});
  p.start = Tensor::zeros({k});
  p.stop = Tensor::zeros({k});
  Tensor e = Tensor::zeros({t_len, k});
  // every path scores zero; the all-zeros path wins deterministically
  ViterbiPath best = crf_viterbi(e, Mask(t_len, true), p);
  CHECK(best.tags == std::vector<std::size_t>(t_len, 0));
  CHECK(best.score == 0.0);
}

TEST_CASE("single-label and single-step edge cases", "[crf]") {
  CrfParams p;
  p.num_labels = 1;
  p.transitions = Tensor({1, 1}, {0.5});
  p.start = Tensor({1}, {0.25});
  p.stop = Tensor({1}, {0.125});
  Tensor e({3, 1}, {1.0, 2.0, 3.0});
  const Mask mask(3, true);
  // only one path exists, so logZ equals its score
  const double expect = 0.25 + 1 + 0.5 + 2 + 0.5 + 3 + 0.125;
  CHECK(crf_log_partition(nullptr, e, mask, p).item() == Approx(expect));
  CHECK(crf_viterbi(e, mask, p).score == Approx(expect));
  CHECK(crf_nll(nullptr, e, mask, {0, 0, 0}, p).item() ==
        Approx(0.0).margin(1e-12));

  std::mt19937_64 rng(46);
  CrfParams q = rand_crf(rng, 3);
  Tensor single = testutil::rand_tensor(rng, {1, 3});
  const auto ref = oracle::crf_enumerate(emission_grid(single),
                                         transition_grid(q), q.start.values(),
                                         q.stop.values());
  CHECK(oracle::rel_err(crf_log_partition(nullptr, single, Mask(1, true), q)
                            .item(),
                        ref.log_partition) < 1e-9);
  CHECK(crf_viterbi(single, Mask(1, true), q).tags == ref.best_path);
}

TEST_CASE("crf rejects invalid inputs", "[crf]") {
  std::mt19937_64 rng(47);
  CrfParams p = rand_crf(rng, 3);
  Tensor e = testutil::rand_tensor(rng, {4, 3});
  CHECK_THROWS_AS(crf_log_partition(nullptr, e, Mask(4, false), p),
                  std::invalid_argument);
  CHECK_THROWS_AS(crf_viterbi(e, Mask(3, true), p), std::invalid_argument);
  CHECK_THROWS_AS(crf_sequence_score(nullptr, e, {0, 1, 3, 0}, p),
                  std::invalid_argument);  // tag 3 out of range
  CHECK_THROWS_AS(crf_sequence_score(nullptr, e, {0, 1}, p),
                  std::invalid_argument);  // wrong length
  Tensor bad = testutil::rand_tensor(rng, {4, 2});
  CHECK_THROWS_AS(crf_log_partition(nullptr, bad, Mask(4, true), p),
                  std::invalid_argument);
}
