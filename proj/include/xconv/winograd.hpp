#pragma once

#include <Eigen/Core>
#include <boost/multiprecision/cpp_int.hpp>

#include <cstdint>
#include <span>
#include <vector>

#include "xconv/fixed_point.hpp"
#include "xconv/graph.hpp"
#include "xconv/ops.hpp"

namespace xconv {

using Rational = boost::multiprecision::cpp_rational;
using RationalMatrix = std::vector<std::vector<Rational>>;

/// F(m, r): m outputs of an r-tap filter from an n = m + r - 1 input tile.
/// O = A^T [(G w) . (B^T x)] in 1-D; A^T [(G F G^T) . (B^T I B)] A in 2-D.
struct WinogradBasis {
  int m = 0, r = 0, n = 0;
  RationalMatrix AT;  // m x n
  RationalMatrix BT;  // n x n
  RationalMatrix G;   // n x r

  Eigen::MatrixXd AT_real, BT_real, G_real;
  // B and A are integer for every shipped basis; the fixed path uses these.
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> AT_int, BT_int;
};

/// Shipped tables for (2,3) and (4,3), validated on first use. Throws UnsupportedError otherwise
/// (r = 7 is refused outright: its transforms are numerically unusable).
const WinogradBasis& winograd_basis(int m, int r);
/// Basis with input tile n for filter extent k.
const WinogradBasis& winograd_basis_for_tile(int n, int k);

/// Exact 1-D check: A^T[(B^T x) . (G w)] == valid correlation of x with w.
bool winograd_identity_holds(const WinogradBasis& basis, std::span<const Rational> x, std::span<const Rational> w);
/// Exact 2-D check on an n x n tile and r x r filter (row-major).
bool winograd_identity_holds_2d(const WinogradBasis& basis, std::span<const Rational> tile,
                                std::span<const Rational> filter);
/// The bilinear identity on every pair of unit vectors; implies it for all inputs.
bool winograd_basis_valid(const WinogradBasis& basis);

struct TilingCounts {
  std::int64_t m_out = 0;  // output extent per axis
  int k = 0;
  int n = 0;
  int m = 0;  // outputs per tile, n - k + 1
  std::int64_t tiles = 0;  // T
  std::int64_t last_tile = 0;  // n'
  std::int64_t dense = 0;
  std::int64_t beta1 = 0;
  std::int64_t beta2 = 0;
  double gamma = 1.0;
};

/// Per-channel-pair multiplication counts on an m_out x m_out output. Throws UnsupportedError
/// outside m_out >= 1, k >= 2, n > k.
TilingCounts mult_counts(std::int64_t m_out, int k, int n);

/// Candidate minimising beta2 on the larger output axis; ties go to the smaller tile.
int choose_tile(std::int64_t m_out, int k, std::span<const int> candidates);
inline constexpr int kDefaultTiles[] = {4, 6};

/// Rejects bases whose input-transform growth (max abs row sum of B^T, squared) does not fit
/// in the bitwidth - 2*scale headroom.
void check_winograd_headroom(const WinogradBasis& basis, const FixedPointConfig& cfg);

struct WinogradGeometry {
  int n = 0, m = 0, k = 0, pad = 0, groups = 1;
  std::int64_t batch = 0, c_in = 0, c_out = 0;
  std::int64_t h_out = 0, w_out = 0;
  std::int64_t th = 0, tw = 0;  // tiles per axis

  std::int64_t tiles() const { return th * tw; }
  std::int64_t nn() const { return static_cast<std::int64_t>(n) * n; }
  std::int64_t cg() const { return c_in / groups; }
  /// Elementwise products of the tiled conv.
  std::int64_t products() const { return batch * nn() * c_out * cg() * tiles(); }
};

/// Throws UnsupportedError for stride != 1, K < 2, non-square filters or unsupported tiles.
WinogradGeometry winograd_geometry(const Shape& input, const ConvAttrs& conv, int n);

/// G F G^T for every filter slice: [C_out, C_in/g, K, K] -> [n*n, C_out, C_in/g].
RealTensor winograd_filter_transform(const RealTensor& filter, const WinogradBasis& basis);

template <typename Scalar>
using DynMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// B^T d B on every tile of the zero-padded input: [N, C, H, W] -> [N, n*n, C, tiles].
template <typename Scalar>
Tensor<Scalar> winograd_input_transform(const Tensor<Scalar>& input, const WinogradGeometry& g,
                                        const DynMatrix<Scalar>& BT) {
  const auto pad_after = g.pad + (g.th * g.m - g.h_out);
  const auto pad_after_w = g.pad + (g.tw * g.m - g.w_out);
  Tensor<Scalar> x = pad2d(input, g.pad, static_cast<int>(std::max(pad_after, pad_after_w)));
  const auto nn = g.nn(), tiles = g.tiles(), c = g.c_in;
  Tensor<Scalar> out({g.batch, nn, c, tiles});
  DynMatrix<Scalar> d(g.n, g.n), v(g.n, g.n);
  for (std::int64_t b = 0; b < g.batch; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t ty = 0; ty < g.th; ++ty)
        for (std::int64_t tx = 0; tx < g.tw; ++tx) {
          for (int i = 0; i < g.n; ++i)
            for (int j = 0; j < g.n; ++j) d(i, j) = x(b, ch, ty * g.m + i, tx * g.m + j);
          v.noalias() = BT * d * BT.transpose();
          const auto t = ty * g.tw + tx;
          for (int i = 0; i < g.n; ++i)
            for (int j = 0; j < g.n; ++j) out(b, i * g.n + j, ch, t) = v(i, j);
        }
  return out;
}

/// Sum over input channels of U . V: U [n*n, C_out, C_in/g], V [N, n*n, C_in, tiles]
/// -> [N, n*n, C_out, tiles].
template <typename Scalar>
Tensor<Scalar> winograd_multiply(const Tensor<Scalar>& u, const Tensor<Scalar>& v, const WinogradGeometry& g) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto nn = g.nn(), tiles = g.tiles(), cg = g.cg(), og = g.c_out / g.groups;
  Tensor<Scalar> out({g.batch, nn, g.c_out, tiles});
  for (std::int64_t b = 0; b < g.batch; ++b)
    for (std::int64_t e = 0; e < nn; ++e)
      for (int grp = 0; grp < g.groups; ++grp) {
        Eigen::Map<const Mat> um(u.data().data() + (e * g.c_out + grp * og) * cg, og, cg);
        Eigen::Map<const Mat> vm(v.data().data() + ((b * nn + e) * g.c_in + grp * cg) * tiles, cg, tiles);
        Eigen::Map<Mat> om(out.data().data() + ((b * nn + e) * g.c_out + grp * og) * tiles, og, tiles);
        om.noalias() = um * vm;
      }
  return out;
}

/// A^T M A per tile, cropped to the output: [N, n*n, C_out, tiles] -> [N, C_out, H_out, W_out].
template <typename Scalar>
Tensor<Scalar> winograd_output_transform(const Tensor<Scalar>& mt, const WinogradGeometry& g,
                                         const DynMatrix<Scalar>& AT) {
  Tensor<Scalar> out({g.batch, g.c_out, g.h_out, g.w_out});
  DynMatrix<Scalar> t(g.n, g.n), y(g.m, g.m);
  for (std::int64_t b = 0; b < g.batch; ++b)
    for (std::int64_t o = 0; o < g.c_out; ++o)
      for (std::int64_t ty = 0; ty < g.th; ++ty)
        for (std::int64_t tx = 0; tx < g.tw; ++tx) {
          const auto tile = ty * g.tw + tx;
          for (int i = 0; i < g.n; ++i)
            for (int j = 0; j < g.n; ++j) t(i, j) = mt(b, i * g.n + j, o, tile);
          y.noalias() = AT * t * AT.transpose();
          for (int i = 0; i < g.m; ++i)
            for (int j = 0; j < g.m; ++j) {
              const auto oy = ty * g.m + i, ox = tx * g.m + j;
              if (oy < g.h_out && ox < g.w_out) out(b, o, oy, ox) = y(i, j);
            }
        }
  return out;
}

/// Tiled float Winograd convolution (bias not included).
RealTensor winograd_conv2d(const RealTensor& input, const RealTensor& filter, const ConvAttrs& conv, int n);

/// Fixed-point Winograd on ring words: u is the encoded filter transform [n*n, C_out, C_in/g] at
/// scale s, so the result (bias not included) sits at scale 2s, masked to the ring.
WordTensor winograd_conv2d_fixed(const WordTensor& input, const WordTensor& u, const ConvAttrs& conv, int n,
                                 const FixedPointConfig& cfg);

}  // namespace xconv
