#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <vector>

#include "hermit/attention.hpp"
#include "support/testutil.hpp"

using namespace hermit;
using Catch::Approx;

namespace {

SelfAttentionParams rand_attention(std::mt19937_64& rng, std::size_t width,
                                   std::size_t attn) {
  SelfAttentionParams p;
  p.input_dim = width;
  p.attn_width = attn;
  p.wq = testutil::rand_tensor(rng, {width, attn});
  p.wk = testutil::rand_tensor(rng, {width, attn});
  p.wv = testutil::rand_tensor(rng, {width, width});
  return p;
}

std::vector<std::vector<double>> grid(const Tensor& x) {
  std::vector<std::vector<double>> rows(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c)
      rows[r].push_back(x.at2(r, c));
  return rows;
}

}  // namespace

TEST_CASE("self_attention matches the double-loop reference", "[attention]") {
  std::mt19937_64 rng(31);
  const std::size_t t_len = 5, width = 4, attn = 3;
  SelfAttentionParams p = rand_attention(rng, width, attn);
  Tensor s = testutil::rand_tensor(rng, {t_len, width});
  Mask mask(t_len, true);

  Tensor out = self_attention(nullptr, s, mask, p);
  REQUIRE(out.shape() == Shape{t_len, width});
  const auto ref =
      oracle::attention_oracle(grid(s), grid(p.wq), grid(p.wk), grid(p.wv),
                               mask);
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t j = 0; j < width; ++j)
      CHECK(out.at2(t, j) == Approx(ref[t][j]).epsilon(1e-12));
}

TEST_CASE("self_attention ignores masked positions", "[attention]") {
  std::mt19937_64 rng(32);
  const std::size_t t_len = 6, width = 3, attn = 2;
  SelfAttentionParams p = rand_attention(rng, width, attn);
  Tensor s = testutil::rand_tensor(rng, {t_len, width});
  Mask mask{true, false, true, true, false, true};

  Tensor out = self_attention(nullptr, s, mask, p);
  for (std::size_t j = 0; j < width; ++j) {
    CHECK(out.at2(1, j) == 0.0);
    CHECK(out.at2(4, j) == 0.0);
  }

  // matches the reference run with the same mask...
  const auto ref =
      oracle::attention_oracle(grid(s), grid(p.wq), grid(p.wk), grid(p.wv),
                               mask);
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t j = 0; j < width; ++j)
      CHECK(out.at2(t, j) == Approx(ref[t][j]).epsilon(1e-12).margin(1e-15));

  // ...and masked rows have no influence: replacing them changes nothing
  Tensor altered({t_len, width}, s.values());
  for (std::size_t j = 0; j < width; ++j) {
    altered.at(1 * width + j) = 99.0;
    altered.at(4 * width + j) = -99.0;
  }
  Tensor out2 = self_attention(nullptr, altered, mask, p);
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t j = 0; j < width; ++j)
      CHECK(out2.at2(t, j) == Approx(out.at2(t, j)).epsilon(1e-12).margin(1e-15));
}

TEST_CASE("self_attention validates inputs", "[attention]") {
  std::mt19937_64 rng(33);
  SelfAttentionParams p = rand_attention(rng, 3, 2);
  Tensor s = Tensor::zeros({4, 3});
  CHECK_THROWS_AS(self_attention(nullptr, s, Mask(4, false), p),
                  std::invalid_argument);
  CHECK_THROWS_AS(self_attention(nullptr, s, Mask(3, true), p),
                  std::invalid_argument);
  CHECK_THROWS_AS(self_attention(nullptr, Tensor::zeros({4, 2}),
                                 Mask(4, true), p),
                  std::invalid_argument);
  p.wv = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(self_attention(nullptr, s, Mask(4, true), p),
                  std::invalid_argument);
}

TEST_CASE("uniform scores average the value rows", "[attention]") {
  // zero queries make every score equal, so attention averages the live rows
  const std::size_t t_len = 3, width = 2;
  SelfAttentionParams p;
  p.input_dim = width;
  p.attn_width = 2;
  p.wq = Tensor::zeros({width, 2});
  p.wk = Tensor::zeros({width, 2});
  std::vector<double> eye{1, 0, 0, 1};
  p.wv = Tensor({width, width}, eye);
  Tensor s({t_len, width}, {1, 2, 3, 4, 5, 6});
  Tensor out = self_attention(nullptr, s, Mask(t_len, true), p);
  for (std::size_t t = 0; t < t_len; ++t) {
    CHECK(out.at2(t, 0) == Approx(3.0));
    CHECK(out.at2(t, 1) == Approx(4.0));
  }
}

TEST_CASE("self_attention gradients match finite differences", "[attention]") {
  std::mt19937_64 rng(34);
  const std::size_t t_len = 4, width = 3, attn = 2;
  SelfAttentionParams p = rand_attention(rng, width, attn);
  Tensor s = testutil::rand_tensor(rng, {t_len, width});
  Tensor w = testutil::rand_tensor(rng, {t_len, width}, -1, 1, false);
  Mask mask{true, true, false, true};

  const double err = testutil::check_gradients(
      [&](Tape* t) {
        Tensor out = self_attention(t, s, mask, p);
        return ops::reduce_sum(t, ops::mul(t, out, w));
      },
      {{"s", s}, {"wq", p.wq}, {"wk", p.wk}, {"wv", p.wv}});
  CHECK(err < 1e-6);
}
