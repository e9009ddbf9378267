#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "hermit/evaluation.hpp"
#include "support/oracles.hpp"

using namespace hermit;
using Catch::Approx;

namespace {
const std::string kData = HERMIT_DATA_DIR;

std::vector<std::string> tags(std::initializer_list<const char*> v) {
  return {v.begin(), v.end()};
}
}  // namespace

TEST_CASE("confusion counts derive precision, recall, and f1", "[evaluation]") {
  ConfusionCounts c{6, 2, 4};
  CHECK(c.precision() == Approx(0.75));
  CHECK(c.recall() == Approx(0.6));
  CHECK(c.f1() == Approx(2.0 * 0.75 * 0.6 / 1.35));

  ConfusionCounts zero;
  CHECK(zero.precision() == 0.0);
  CHECK(zero.recall() == 0.0);
  CHECK(zero.f1() == 0.0);

  CHECK(ConfusionCounts{1, 2, 3} + ConfusionCounts{4, 5, 6} ==
        ConfusionCounts{5, 7, 9});
}

TEST_CASE("intent counts treat each mismatch as fp plus fn", "[evaluation]") {
  ConfusionCounts c = intent_counts({"a", "b", "c", "d"}, {"a", "x", "c", "y"});
  CHECK(c == ConfusionCounts{2, 2, 2});
  CHECK(intent_counts({}, {}) == ConfusionCounts{});
  CHECK_THROWS_AS(intent_counts({"a"}, {}), std::invalid_argument);
}

TEST_CASE("entity matching is lenient but label-aware and one-to-one",
          "[evaluation]") {
  // one-token overlap with the right label counts
  CHECK(entity_counts({{2, 5, "X"}}, {{4, 6, "X"}}) == ConfusionCounts{1, 0, 0});
  // adjacency is not overlap
  CHECK(entity_counts({{2, 5, "X"}}, {{5, 7, "X"}}) == ConfusionCounts{0, 1, 1});
  // labels must agree
  CHECK(entity_counts({{2, 5, "X"}}, {{2, 5, "Y"}}) == ConfusionCounts{0, 1, 1});
  // a single prediction cannot satisfy two gold chunks
  CHECK(entity_counts({{0, 2, "X"}, {2, 4, "X"}}, {{1, 3, "X"}}) ==
        ConfusionCounts{1, 0, 1});
  // matching is greedy in gold order
  CHECK(entity_counts({{0, 4, "X"}, {3, 6, "X"}}, {{3, 4, "X"}}) ==
        ConfusionCounts{1, 0, 1});
  // spare predictions are false positives
  CHECK(entity_counts({}, {{0, 1, "X"}, {1, 2, "Y"}}) ==
        ConfusionCounts{0, 2, 0});

  CHECK(combined_counts(ConfusionCounts{2, 1, 1}, ConfusionCounts{3, 0, 2}) ==
        ConfusionCounts{5, 1, 3});
}

TEST_CASE("combined counts give the documented precision and recall",
          "[evaluation]") {
  // 2 intents right of 3, entity counts tp=3 fp=0 fn=2:
  // combined P = 5/6, R = 5/8
  ConfusionCounts intent{2, 1, 1};
  ConfusionCounts entity{3, 0, 2};
  ConfusionCounts c = combined_counts(intent, entity);
  CHECK(c.precision() == Approx(5.0 / 6.0));
  CHECK(c.recall() == Approx(5.0 / 8.0));
  CHECK(c.f1() == Approx(2.0 * (5.0 / 6.0) * (5.0 / 8.0) /
                         ((5.0 / 6.0) + (5.0 / 8.0))));
}

TEST_CASE("span counts demand exact chunk boundaries", "[evaluation]") {
  // off-by-one boundaries fail strict matching
  CHECK(span_counts_row(tags({"B-X", "I-X", "O"}), tags({"B-X", "O", "O"})) ==
        ConfusionCounts{0, 1, 1});
  CHECK(span_counts_row(tags({"B-X", "I-X", "O"}), tags({"B-X", "I-X", "O"})) ==
        ConfusionCounts{1, 0, 0});
  // label must match too
  CHECK(span_counts_row(tags({"B-X", "I-X"}), tags({"B-Y", "I-Y"})) ==
        ConfusionCounts{0, 1, 1});
  // predictions are repaired before scoring: I-X I-X reads as one X chunk
  CHECK(span_counts_row(tags({"B-X", "I-X"}), tags({"I-X", "I-X"})) ==
        ConfusionCounts{1, 0, 0});
  // the all-O row scores nothing either way
  CHECK(span_counts_row(tags({"O", "O"}), tags({"O", "O"})) ==
        ConfusionCounts{});

  CHECK(span_f1({tags({"B-X", "O"}), tags({"B-Y", "I-Y"})},
                {tags({"B-X", "O"}), tags({"O", "B-Y"})}) == Approx(0.5));
}

TEST_CASE("exact match compares repaired rows", "[evaluation]") {
  CHECK(rows_match(tags({"B-X", "I-X"}), tags({"I-X", "I-X"})));
  CHECK_FALSE(rows_match(tags({"B-X", "I-X"}), tags({"B-X", "B-X"})));
  CHECK(rows_match(tags({"O", "O"}), tags({"O", "O"})));

  const std::vector<std::vector<std::string>> gold{
      tags({"B-X", "I-X"}), tags({"O", "B-Y"}), tags({"B-Z", "O"})};
  const std::vector<std::vector<std::string>> pred{
      tags({"I-X", "I-X"}), tags({"O", "B-Y"}), tags({"O", "B-Z"})};
  CHECK(exact_match(gold, pred) == Approx(2.0 / 3.0));
}

TEST_CASE("intent strings come from the first chunk of each row",
          "[evaluation]") {
  AnnotatedSentence s;
  s.tokens = {"a", "b"};
  s.da_tags = tags({"B-Req", "I-Req"});
  s.fr_tags = tags({"B-Locating", "I-Locating"});
  s.ar_tags = tags({"O", "O"});
  CHECK(derive_intent(s) == "Req_Locating");

  s.fr_tags = tags({"O", "O"});
  CHECK(derive_intent(s) == "Req_none");
  s.da_tags = tags({"O", "O"});
  CHECK(derive_intent(s) == "none_none");

  // only the first chunk matters
  s.da_tags = tags({"B-A", "B-B"});
  s.fr_tags = tags({"B-C", "O"});
  CHECK(derive_intent(s) == "A_C");
}

TEST_CASE("full evaluation matches the frozen fixture numbers",
          "[evaluation]") {
  std::ifstream gin(kData + "/eval_gold.conll");
  std::ifstream pin(kData + "/eval_pred.conll");
  REQUIRE(gin.good());
  REQUIRE(pin.good());
  Corpus gold = parse_conll(gin, "eval_gold.conll");
  Corpus pred = parse_conll(pin, "eval_pred.conll");
  MetricsReport report = evaluate(gold, pred);

  std::ifstream ein(kData + "/eval_expected.json");
  REQUIRE(ein.good());
  nlohmann::json expected = nlohmann::json::parse(ein);

  const auto flat = report.flatten();
  CHECK(flat.size() == expected.size());
  for (const auto& [key, value] : flat) {
    INFO(key);
    REQUIRE(expected.contains(key));
    CHECK(value == Approx(expected[key].get<double>()).epsilon(1e-9));
  }
}

TEST_CASE("evaluation rejects misaligned corpora", "[evaluation]") {
  Corpus gold = parse_conll("a\tB-A\tB-B\tO\n");
  Corpus pred = parse_conll("a\tB-A\tB-B\tO\nb\tB-A\tB-B\tO\n\n");
  CHECK_THROWS_AS(evaluate(gold, pred), DataError);

  Corpus shorter = parse_conll("a\tB-A\tB-B\tO\nb\tI-A\tI-B\tO\n");
  Corpus tiny = parse_conll("a\tB-A\tB-B\tO\n");
  CHECK_THROWS_AS(evaluate(shorter, tiny), DataError);
}

TEST_CASE("signed-rank test reproduces the textbook ten-pair case",
          "[evaluation]") {
  // ten pairs, each improving: W = 0
  std::vector<PairedSample> pairs;
  for (int i = 1; i <= 10; ++i)
    pairs.push_back({0.0, static_cast<double>(i)});
  WilcoxonResult r = wilcoxon_signed_rank(pairs);
  CHECK(r.n == 10);
  CHECK(r.w_plus == 55.0);
  CHECK(r.w_minus == 0.0);
  CHECK(r.w == 0.0);
  CHECK(r.z == Approx(-2.8031).epsilon(1e-3));
  CHECK(r.p_normal == Approx(0.0051).margin(2e-4));
  // exact two-sided p: 2 of the 1024 sign patterns reach W <= 0
  CHECK(r.exact);
  CHECK(r.p_exact == Approx(2.0 / 1024.0).epsilon(1e-12));
  CHECK(r.p == r.p_exact);
}

TEST_CASE("signed-rank edge cases", "[evaluation]") {
  // identical samples leave nothing to rank
  WilcoxonResult same = wilcoxon_signed_rank({{1.0, 1.0}, {2.0, 2.0}});
  CHECK(same.n == 0);
  CHECK(same.p == 1.0);

  // zero differences are dropped, the rest still count
  WilcoxonResult mixed =
      wilcoxon_signed_rank({{1.0, 1.0}, {2.0, 3.0}, {5.0, 4.0}});
  CHECK(mixed.n == 2);
  CHECK(mixed.w_plus == mixed.w_minus);  // ranks 1.5 each by tie averaging

  CHECK_THROWS_AS(
      wilcoxon_signed_rank(std::vector<double>{1.0}, std::vector<double>{}),
      std::invalid_argument);
}

TEST_CASE("exact signed-rank p-values agree with sign-flip enumeration",
          "[evaluation]") {
  std::mt19937_64 rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + rng() % 8;  // 3..10 pairs
    std::vector<PairedSample> pairs;
    std::vector<double> diffs;
    for (std::size_t i = 0; i < n; ++i) {
      // quantized differences so tied magnitudes actually happen
      const double d = (static_cast<double>(rng() % 9) - 4.0) / 4.0;
      pairs.push_back({1.0, 1.0 + d});
      diffs.push_back(d);
    }
    WilcoxonResult r = wilcoxon_signed_rank(pairs);
    const double ref = oracle::wilcoxon_enumerate(diffs);
    INFO("trial " << trial << " n=" << r.n);
    CHECK(r.p == Approx(ref).epsilon(1e-12).margin(1e-12));
  }
}

TEST_CASE("normal approximation tracks the exact test", "[evaluation]") {
  // differences in units of 1/64 so tied magnitudes tie exactly
  std::vector<PairedSample> pairs;
  for (double d : {4.0, -1.0, 7.0, 3.0, 6.0, 1.0, -3.0, 8.0})
    pairs.push_back({0.0, d / 64.0});
  WilcoxonResult r = wilcoxon_signed_rank(pairs);
  CHECK(r.n == 8);
  CHECK(r.w == 5.0);  // ranks 1.5 and 3.5 on the negative side
  CHECK(r.exact);
  CHECK(r.p_exact == Approx(22.0 / 256.0).epsilon(1e-12));
  CHECK(std::abs(r.p_exact - r.p_normal) < 0.02);

  // past the exact limit the reported p switches to the approximation
  WilcoxonResult approx = wilcoxon_signed_rank(pairs, 4);
  CHECK_FALSE(approx.exact);
  CHECK(approx.p == approx.p_normal);
  CHECK(std::isnan(approx.p_exact));
  CHECK(approx.p_normal == r.p_normal);
}

TEST_CASE("fold aggregation reports mean and population spread",
          "[evaluation]") {
  Aggregate a = aggregate_folds({2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0});
  CHECK(a.mean == Approx(5.0));
  CHECK(a.std == Approx(2.0));

  Aggregate single = aggregate_folds({3.25});
  CHECK(single.mean == 3.25);
  CHECK(single.std == 0.0);
  CHECK_THROWS_AS(aggregate_folds({}), std::invalid_argument);
}

TEST_CASE("report aggregation lines up metrics across folds", "[evaluation]") {
  MetricsReport r1, r2;
  r1.da.spans = {3, 1, 1};  // P 0.75, R 0.75
  r2.da.spans = {1, 1, 3};  // P 0.50, R 0.25
  r1.combined.exact = 0.5;
  r2.combined.exact = 0.7;

  const auto rows = aggregate_reports({r1, r2});
  bool saw_precision = false, saw_em = false;
  for (const auto& [name, mean, std] : rows) {
    if (name == "da.precision") {
      saw_precision = true;
      CHECK(mean == Approx(0.625));
      CHECK(std == Approx(0.125));
    }
    if (name == "combined.exact_match") {
      saw_em = true;
      CHECK(mean == Approx(0.6));
      CHECK(std == Approx(0.1));
    }
  }
  CHECK(saw_precision);
  CHECK(saw_em);
}
