#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "xconv/cost.hpp"
#include "xconv/interpreter.hpp"
#include "xconv/rewrite.hpp"
#include "xconv/winograd.hpp"
#include "xconv/zoo.hpp"

namespace xconv {
namespace {

Rational random_rational(std::mt19937_64& gen) {
  std::uniform_int_distribution<int> num(-1000, 1000), den(1, 97);
  return Rational(num(gen), den(gen));
}

class BasisTest : public ::testing::TestWithParam<int> {};

TEST_P(BasisTest, IdentityHoldsExactly1d) {
  const auto& basis = winograd_basis(GetParam(), 3);
  std::mt19937_64 gen(GetParam());
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Rational> x(basis.n), w(3);
    for (auto& v : x) v = random_rational(gen);
    for (auto& v : w) v = random_rational(gen);
    ASSERT_TRUE(winograd_identity_holds(basis, x, w));
  }
}

TEST_P(BasisTest, IdentityHoldsExactly2d) {
  const auto& basis = winograd_basis(GetParam(), 3);
  std::mt19937_64 gen(10 + GetParam());
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Rational> tile(basis.n * basis.n), f(9);
    for (auto& v : tile) v = random_rational(gen);
    for (auto& v : f) v = random_rational(gen);
    ASSERT_TRUE(winograd_identity_holds_2d(basis, tile, f));
  }
}

TEST_P(BasisTest, CheckerCatchesPerturbedBasis) {
  WinogradBasis bad = winograd_basis(GetParam(), 3);
  bad.G[1][1] += Rational(1, 7);
  EXPECT_FALSE(winograd_basis_valid(bad));
  std::vector<Rational> x(bad.n, Rational(1)), w{Rational(1), Rational(2), Rational(3)};
  EXPECT_FALSE(winograd_identity_holds(bad, x, w));
}

TEST_P(BasisTest, IntegerTransformsMatchRational) {
  const auto& b = winograd_basis(GetParam(), 3);
  for (int i = 0; i < b.n; ++i)
    for (int j = 0; j < b.n; ++j) EXPECT_EQ(Rational(b.BT_int(i, j)), b.BT[i][j]);
  for (int i = 0; i < b.m; ++i)
    for (int j = 0; j < b.n; ++j) EXPECT_EQ(Rational(b.AT_int(i, j)), b.AT[i][j]);
}

INSTANTIATE_TEST_SUITE_P(Shipped, BasisTest, ::testing::Values(2, 4));

TEST(WinogradBasis, UnsupportedBasesRefused) {
  EXPECT_THROW(winograd_basis(4, 7), UnsupportedError);
  EXPECT_THROW(winograd_basis(3, 3), UnsupportedError);
  EXPECT_EQ(&winograd_basis_for_tile(6, 3), &winograd_basis(4, 3));
}

TEST(MultCounts, ReferenceConstants) {
  const auto c = mult_counts(318, 3, 6);
  EXPECT_EQ(c.dense, 910116);
  EXPECT_EQ(c.beta1, 102400);
  EXPECT_EQ(c.beta2, 230400);
  EXPECT_EQ(c.tiles, 80);
  EXPECT_EQ(c.m, 4);
}

TEST(MultCounts, ClosedFormsOverRange) {
  for (std::int64_t m_out = 1; m_out <= 80; ++m_out)
    for (int k : {2, 3, 5})
      for (int n = k + 1; n <= k + 5; ++n) {
        const auto c = mult_counts(m_out, k, n);
        const std::int64_t m = n - k + 1;
        std::int64_t tiles = 0;
        for (std::int64_t covered = 0; covered < m_out; covered += m) ++tiles;
        ASSERT_EQ(c.tiles, tiles);
        ASSERT_EQ(c.dense, m_out * m_out * k * k);
        ASSERT_EQ(c.beta1, (m_out + k - 1) * (m_out + k - 1));
        ASSERT_EQ(c.beta2, tiles * tiles * n * n);
        ASSERT_GE(c.last_tile, k);
        ASSERT_LE(c.last_tile, n);
        // gamma is tiles*n over the covered span, squared; >= 1, and 1 exactly when the last tile is full
        ASSERT_GE(c.gamma, 1.0);
        ASSERT_EQ(c.gamma == 1.0, c.last_tile == n);
        const double span = static_cast<double>((tiles - 1) * n + c.last_tile);
        ASSERT_DOUBLE_EQ(c.gamma, (tiles * n / span) * (tiles * n / span));
      }
}

TEST(MultCounts, GammaBounds) {
  // gamma = 1 / (1 - x)^2 with x = (n - n') / (T n). The first-order value 1 + 2x is a lower
  // bound, and x <= (1 - K/n) / T gives the upper one.
  EXPECT_NEAR(mult_counts(318, 3, 6).gamma, 480.0 * 480.0 / (478.0 * 478.0), 1e-12);
  EXPECT_LE(mult_counts(318, 3, 6).gamma, 1.0125);
  for (std::int64_t m_out = 1; m_out <= 400; ++m_out)
    for (int n : {4, 6}) {
      const auto c = mult_counts(m_out, 3, n);
      const double t = static_cast<double>(c.tiles);
      const double x = static_cast<double>(n - c.last_tile) / (t * n);
      const double xmax = (1.0 - 3.0 / n) / t;
      ASSERT_GE(c.gamma, 1.0 + 2.0 * x - 1e-12);
      ASSERT_LE(c.gamma, 1.0 / ((1.0 - xmax) * (1.0 - xmax)) + 1e-12);
    }
  // the first-order figure alone is not an upper bound when T is small
  const auto one = mult_counts(1, 3, 6);
  EXPECT_DOUBLE_EQ(one.gamma, 4.0);
  EXPECT_GT(one.gamma, 1.0 + 2.0 * (1.0 - 3.0 / 6.0) / one.tiles);
}

TEST(MultCounts, InvalidArguments) {
  EXPECT_THROW(mult_counts(0, 3, 6), UnsupportedError);
  EXPECT_THROW(mult_counts(10, 1, 6), UnsupportedError);
  EXPECT_THROW(mult_counts(10, 3, 3), UnsupportedError);
}

TEST(ChooseTile, MinimisesBetaTwo) {
  // 318 outputs: n=4 needs 159^2*16 = 404496, n=6 needs 230400
  EXPECT_EQ(choose_tile(318, 3, kDefaultTiles), 6);
  // 2 outputs fit one n=4 tile (16) versus one n=6 tile (36)
  EXPECT_EQ(choose_tile(2, 3, kDefaultTiles), 4);
  // 4 outputs: 2x2 tiles of 16 = 64 versus one 36
  EXPECT_EQ(choose_tile(4, 3, kDefaultTiles), 6);
  // 6 outputs: 3x3 tiles of 16 and 2x2 tiles of 36 both cost 144
  const int unsorted[] = {6, 4};
  EXPECT_EQ(choose_tile(6, 3, unsorted), 4);
}

struct ConvCase {
  Shape input;
  ConvAttrs attrs;
  int n;
};

TEST(WinogradFloat, MatchesDirectConvolution) {
  std::mt19937_64 gen(2024);
  std::uniform_int_distribution<int> side(3, 64), ch(1, 8), pad(0, 1), tile(0, 1);
  for (int trial = 0; trial < 60; ++trial) {
    ConvAttrs a;
    a.kernel = 3;
    a.pad = pad(gen);
    const int h = std::max(side(gen), 3 - 2 * a.pad);
    a.in_channels = ch(gen);
    a.out_channels = ch(gen);
    const int n = tile(gen) ? 6 : 4;
    const auto x = testing::random_real({1, a.in_channels, h, h}, gen);
    const auto w = testing::random_real({a.out_channels, a.in_channels, 3, 3}, gen);
    const auto ref = testing::naive_conv(x, w, 1, a.pad);
    const auto got = winograd_conv2d(x, w, a, n);
    ASSERT_EQ(got.shape(), ref.shape());
    ASSERT_LT(testing::max_rel_error(got, ref), 1e-8) << "h=" << h << " n=" << n;
  }
}

TEST(WinogradFloat, Depthwise) {
  std::mt19937_64 gen(9);
  ConvAttrs a{8, 8, 3, 1, 1, 8};
  const auto x = testing::random_real({2, 8, 13, 13}, gen);
  const auto w = testing::random_real({8, 1, 3, 3}, gen);
  const auto ref = testing::naive_conv(x, w, 1, 1, 8);
  for (int n : {4, 6}) EXPECT_LT(testing::max_rel_error(winograd_conv2d(x, w, a, n), ref), 1e-10);
  // partial grouping is not a Winograd shape
  EXPECT_THROW(winograd_conv2d(x, testing::random_real({8, 4, 3, 3}, gen), ConvAttrs{8, 8, 3, 1, 1, 2}, 4),
               UnsupportedError);
}

TEST(WinogradFloat, RejectsIneligibleGeometry) {
  RealTensor x({1, 2, 8, 8}), w({2, 2, 3, 3});
  EXPECT_THROW(winograd_conv2d(x, w, ConvAttrs{2, 2, 3, 2, 1, 1}, 4), UnsupportedError);
  EXPECT_THROW(winograd_conv2d(x, RealTensor({2, 2, 1, 1}), ConvAttrs{2, 2, 1, 1, 0, 1}, 4), UnsupportedError);
}

TEST(WinogradFixed, ErrorWithinFilterRoundingBound) {
  // Inputs and filters are small integers, so the only error is flooring G F G^T to scale s:
  // each transformed filter entry is off by less than 2^-s, and that error reaches an output
  // through |A^T| |B^T d B| |A| summed over input channels.
  FixedPointConfig cfg;
  std::mt19937_64 gen(11);
  std::uniform_int_distribution<int> small(-8, 8);
  ConvAttrs a{3, 4, 3, 1, 1, 1};
  RealTensor x({1, 3, 10, 10}), w({4, 3, 3, 3});
  for (auto& v : x.values()) v = small(gen);
  for (auto& v : w.values()) v = small(gen);
  const auto ref = testing::naive_conv(x, w, 1, 1);
  for (int n : {4, 6}) {
    const auto& basis = winograd_basis_for_tile(n, 3);
    const auto g = winograd_geometry(x.shape(), a, n);
    const auto u = encode_fixed(winograd_filter_transform(w, basis), cfg).words();
    const auto y = winograd_conv2d_fixed(encode_fixed(x, cfg).words(), u, a, n, cfg);

    auto v = winograd_input_transform<double>(x, g, basis.BT_real);
    v.data() = v.data().abs();
    const auto ones = RealTensor::constant({g.nn(), a.out_channels, a.in_channels}, 1.0);
    const DynMatrix<double> abs_at = basis.AT_real.cwiseAbs();
    const auto bound = winograd_output_transform<double>(winograd_multiply(ones, v, g), g, abs_at);
    for (std::int64_t i = 0; i < ref.size(); ++i) {
      const double err = std::abs(decode_scalar(y[i], cfg, 2 * cfg.scale) - ref[i]);
      ASSERT_LE(err, bound[i] * std::ldexp(1.0, -cfg.scale)) << "n=" << n << " i=" << i;
    }
  }
}

TEST(WinogradFixed, InterpreterCloseToDirect) {
  // Same network with and without the Winograd tag; the only difference is the rounding of
  // G F G^T at scale s, so outputs agree to a few ulps of the fixed grid per accumulation.
  Graph g = model_zoo("toynet", CellVariant::kDense, 16);
  materialize_weights(g);
  auto rw = rewrite_winograd(g);
  ASSERT_GT(rw.rewritten, 0);
  std::mt19937_64 gen(5);
  const auto x = testing::random_real(g.input_shape, gen);
  const auto direct = infer_clear(g, x, InferMode::kFixed);
  const auto wino = infer_clear(rw.graph, x, InferMode::kFixed);
  const auto fl = infer_float(g, x);
  EXPECT_LT(testing::max_rel_error(direct, fl), 1e-4);
  EXPECT_LT(testing::max_rel_error(wino, fl), 1e-4);
}

TEST(Rewrite, ReportsIneligibleLayers) {
  GraphBuilder b({1, 4, 16, 16});
  auto s2 = b.conv("input", 4, 3, 2, 1);
  auto pw = b.conv(s2, 4, 1, 1, 0);
  auto k3 = b.conv(pw, 4, 3, 1, 1);
  Graph g = std::move(b).finish(k3, GraphInfo{});
  auto rw = rewrite_winograd(g);
  ASSERT_EQ(rw.report.size(), 3u);
  EXPECT_EQ(rw.report[0].reason, "stride");
  EXPECT_EQ(rw.report[1].reason, "kernel");
  EXPECT_TRUE(rw.report[2].eligible);
  EXPECT_EQ(rw.rewritten, 1);
  EXPECT_TRUE(rw.graph.at(k3).conv.winograd);

  RewriteOptions only;
  only.allow = std::set<std::string>{};
  auto none = rewrite_winograd(g, only);
  EXPECT_EQ(none.rewritten, 0);
  EXPECT_EQ(none.report[2].reason, "not-allowed");
}

TEST(Rewrite, DenseNetReductionFactor) {
  Graph g = model_zoo("densenet121", CellVariant::kDense, 320);
  const auto before = total_mults(g);
  const auto after = total_mults(rewrite_winograd(g).graph);
  const double factor = static_cast<double>(before) / static_cast<double>(after);
  EXPECT_GE(factor, 1.3);
  EXPECT_LE(factor, 2.0);
}

TEST(Rewrite, ReportSerialisations) {
  Graph g = model_zoo("toynet", CellVariant::kDense, 16);
  auto rw = rewrite_winograd(g);
  const auto csv = tiling_report_csv(rw.report);
  EXPECT_EQ(csv.substr(0, csv.find('\n')).find("layer"), 0u);
  EXPECT_NE(tiling_report_json(rw.report).find("\"beta2\""), std::string::npos);
}

}  // namespace
}  // namespace xconv
