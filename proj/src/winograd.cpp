#include "xconv/winograd.hpp"

#include <algorithm>
#include <cmath>

namespace xconv {
namespace {

Rational q(long num, long den = 1) { return Rational(num, den); }

WinogradBasis make_f23() {
  WinogradBasis b;
  b.m = 2, b.r = 3, b.n = 4;
  b.BT = {{q(1), q(0), q(-1), q(0)}, {q(0), q(1), q(1), q(0)}, {q(0), q(-1), q(1), q(0)}, {q(0), q(1), q(0), q(-1)}};
  b.G = {{q(1), q(0), q(0)}, {q(1, 2), q(1, 2), q(1, 2)}, {q(1, 2), q(-1, 2), q(1, 2)}, {q(0), q(0), q(1)}};
  b.AT = {{q(1), q(1), q(1), q(0)}, {q(0), q(1), q(-1), q(-1)}};
  return b;
}

WinogradBasis make_f43() {
  WinogradBasis b;
  b.m = 4, b.r = 3, b.n = 6;
  b.BT = {{q(4), q(0), q(-5), q(0), q(1), q(0)},  {q(0), q(-4), q(-4), q(1), q(1), q(0)},
          {q(0), q(4), q(-4), q(-1), q(1), q(0)}, {q(0), q(-2), q(-1), q(2), q(1), q(0)},
          {q(0), q(2), q(-1), q(-2), q(1), q(0)}, {q(0), q(4), q(0), q(-5), q(0), q(1)}};
  b.G = {{q(1, 4), q(0), q(0)},
         {q(-1, 6), q(-1, 6), q(-1, 6)},
         {q(-1, 6), q(1, 6), q(-1, 6)},
         {q(1, 24), q(1, 12), q(1, 6)},
         {q(1, 24), q(-1, 12), q(1, 6)},
         {q(0), q(0), q(1)}};
  b.AT = {{q(1), q(1), q(1), q(1), q(1), q(0)},
          {q(0), q(1), q(-1), q(2), q(-2), q(0)},
          {q(0), q(1), q(1), q(4), q(4), q(0)},
          {q(0), q(1), q(-1), q(8), q(-8), q(1)}};
  return b;
}

Eigen::MatrixXd to_real(const RationalMatrix& m) {
  Eigen::MatrixXd out(m.size(), m[0].size());
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) out(i, j) = m[i][j].convert_to<double>();
  return out;
}

Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> to_int(const RationalMatrix& m) {
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> out(m.size(), m[0].size());
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) {
      if (denominator(m[i][j]) != 1) throw UnsupportedError("winograd transform is not integral");
      out(i, j) = numerator(m[i][j]).convert_to<std::int64_t>();
    }
  return out;
}

WinogradBasis finish(WinogradBasis b) {
  if (!winograd_basis_valid(b)) {
    throw UnsupportedError("winograd table F(" + std::to_string(b.m) + "," + std::to_string(b.r) +
                           ") fails its correctness identity");
  }
  b.AT_real = to_real(b.AT);
  b.BT_real = to_real(b.BT);
  b.G_real = to_real(b.G);
  b.AT_int = to_int(b.AT);
  b.BT_int = to_int(b.BT);
  return b;
}

std::vector<Rational> matvec(const RationalMatrix& m, std::span<const Rational> x) {
  std::vector<Rational> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j)
      if (m[i][j] != 0) out[i] += m[i][j] * x[j];
  return out;
}

// M X M^T for a row-major square-ish X of cols x cols.
std::vector<Rational> sandwich(const RationalMatrix& m, std::span<const Rational> x, std::size_t cols) {
  const std::size_t rows = m.size();
  std::vector<Rational> tmp(rows * cols), out(rows * rows);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      for (std::size_t k = 0; k < cols; ++k)
        if (m[i][k] != 0) tmp[i * cols + j] += m[i][k] * x[k * cols + j];
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < rows; ++j)
      for (std::size_t k = 0; k < cols; ++k)
        if (m[j][k] != 0) out[i * rows + j] += tmp[i * cols + k] * m[j][k];
  return out;
}

}  // namespace

bool winograd_identity_holds(const WinogradBasis& b, std::span<const Rational> x, std::span<const Rational> w) {
  auto bx = matvec(b.BT, x);
  auto gw = matvec(b.G, w);
  for (int i = 0; i < b.n; ++i) bx[i] *= gw[i];
  const auto y = matvec(b.AT, bx);
  for (int i = 0; i < b.m; ++i) {
    Rational direct = 0;
    for (int j = 0; j < b.r; ++j) direct += x[i + j] * w[j];
    if (y[i] != direct) return false;
  }
  return true;
}

bool winograd_identity_holds_2d(const WinogradBasis& b, std::span<const Rational> tile,
                                std::span<const Rational> filter) {
  auto v = sandwich(b.BT, tile, b.n);
  const auto u = sandwich(b.G, filter, b.r);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= u[i];
  const auto y = sandwich(b.AT, v, b.n);
  for (int i = 0; i < b.m; ++i)
    for (int j = 0; j < b.m; ++j) {
      Rational direct = 0;
      for (int p = 0; p < b.r; ++p)
        for (int s = 0; s < b.r; ++s) direct += tile[(i + p) * b.n + j + s] * filter[p * b.r + s];
      if (y[i * b.m + j] != direct) return false;
    }
  return true;
}

bool winograd_basis_valid(const WinogradBasis& b) {
  if (b.n != b.m + b.r - 1 || static_cast<int>(b.AT.size()) != b.m || static_cast<int>(b.BT.size()) != b.n ||
      static_cast<int>(b.G.size()) != b.n) {
    return false;
  }
  std::vector<Rational> x(b.n), w(b.r);
  for (int i = 0; i < b.n; ++i)
    for (int j = 0; j < b.r; ++j) {
      std::fill(x.begin(), x.end(), Rational(0));
      std::fill(w.begin(), w.end(), Rational(0));
      x[i] = 1;
      w[j] = 1;
      if (!winograd_identity_holds(b, x, w)) return false;
    }
  return true;
}

const WinogradBasis& winograd_basis(int m, int r) {
  if (r == 7) throw UnsupportedError("7x7 winograd bases are not supported (transform precision)");
  if (r == 3 && m == 2) {
    static const WinogradBasis f23 = finish(make_f23());
    return f23;
  }
  if (r == 3 && m == 4) {
    static const WinogradBasis f43 = finish(make_f43());
    return f43;
  }
  throw UnsupportedError("no winograd basis F(" + std::to_string(m) + "," + std::to_string(r) + ")");
}

const WinogradBasis& winograd_basis_for_tile(int n, int k) { return winograd_basis(n - k + 1, k); }

TilingCounts mult_counts(std::int64_t m_out, int k, int n) {
  if (m_out < 1 || k < 2 || n <= k) {
    throw UnsupportedError("mult_counts needs M_out >= 1, K >= 2, n > K (got " + std::to_string(m_out) + ", " +
                           std::to_string(k) + ", " + std::to_string(n) + ")");
  }
  TilingCounts c;
  c.m_out = m_out;
  c.k = k;
  c.n = n;
  c.m = n - k + 1;
  c.dense = m_out * m_out * k * k;
  c.beta1 = (m_out + k - 1) * (m_out + k - 1);
  c.tiles = (m_out + c.m - 1) / c.m;
  c.last_tile = m_out - (c.tiles - 1) * c.m + k - 1;
  c.beta2 = c.tiles * c.tiles * n * n;
  const double covered = static_cast<double>((c.tiles - 1) * n + c.last_tile);
  c.gamma = static_cast<double>(c.tiles * c.tiles * n * n) / (covered * covered);
  return c;
}

int choose_tile(std::int64_t m_out, int k, std::span<const int> candidates) {
  if (candidates.empty()) throw UnsupportedError("choose_tile: empty candidate set");
  int best = 0;
  std::int64_t best_beta = 0;
  std::vector<int> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end());
  for (int n : sorted) {
    if (n <= k) throw UnsupportedError("tile " + std::to_string(n) + " is not larger than K=" + std::to_string(k));
    const auto beta = mult_counts(m_out, k, n).beta2;
    if (best == 0 || beta < best_beta) best = n, best_beta = beta;
  }
  return best;
}

void check_winograd_headroom(const WinogradBasis& basis, const FixedPointConfig& cfg) {
  const double row = basis.BT_real.cwiseAbs().rowwise().sum().maxCoeff();
  const double growth_bits = std::log2(row * row);
  const int headroom = cfg.bitwidth - 2 * cfg.scale - 2;
  if (growth_bits >= headroom) {
    throw OverflowError("F(" + std::to_string(basis.m) + "," + std::to_string(basis.r) + ") input transform grows " +
                        std::to_string(growth_bits) + " bits; ring leaves " + std::to_string(headroom));
  }
}

WinogradGeometry winograd_geometry(const Shape& input, const ConvAttrs& c, int n) {
  if (input.size() != 4) throw ShapeError("winograd expects a rank-4 input");
  if (c.stride != 1) throw UnsupportedError("winograd requires stride 1");
  if (c.kernel < 2) throw UnsupportedError("winograd requires K > 1");
  if (c.groups != 1 && !c.depthwise()) throw UnsupportedError("winograd supports dense or depthwise convolutions");
  const WinogradBasis& basis = winograd_basis_for_tile(n, c.kernel);
  WinogradGeometry g;
  g.n = n;
  g.m = basis.m;
  g.k = c.kernel;
  g.pad = c.pad;
  g.groups = c.groups;
  g.batch = input[0];
  g.c_in = input[1];
  g.c_out = c.out_channels;
  g.h_out = conv_out_extent(input[2], c.kernel, 1, c.pad);
  g.w_out = conv_out_extent(input[3], c.kernel, 1, c.pad);
  if (g.c_in != c.in_channels || g.h_out <= 0 || g.w_out <= 0) {
    throw ShapeError("winograd input " + to_string(input) + " does not fit the convolution");
  }
  g.th = (g.h_out + g.m - 1) / g.m;
  g.tw = (g.w_out + g.m - 1) / g.m;
  return g;
}

RealTensor winograd_filter_transform(const RealTensor& filter, const WinogradBasis& basis) {
  const auto c_out = filter.dim(0), cg = filter.dim(1), k = filter.dim(2);
  if (k != basis.r || filter.dim(3) != k) throw ShapeError("filter does not match the winograd basis");
  const auto nn = static_cast<std::int64_t>(basis.n) * basis.n;
  RealTensor u({nn, c_out, cg});
  Eigen::MatrixXd f(k, k);
  for (std::int64_t o = 0; o < c_out; ++o)
    for (std::int64_t c = 0; c < cg; ++c) {
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) f(i, j) = filter(o, c, i, j);
      const Eigen::MatrixXd t = basis.G_real * f * basis.G_real.transpose();
      for (int i = 0; i < basis.n; ++i)
        for (int j = 0; j < basis.n; ++j) u[((i * basis.n + j) * c_out + o) * cg + c] = t(i, j);
    }
  return u;
}

RealTensor winograd_conv2d(const RealTensor& input, const RealTensor& filter, const ConvAttrs& conv, int n) {
  const auto g = winograd_geometry(input.shape(), conv, n);
  const auto& basis = winograd_basis_for_tile(n, conv.kernel);
  const RealTensor u = winograd_filter_transform(filter, basis);
  const RealTensor v = winograd_input_transform<double>(input, g, basis.BT_real);
  return winograd_output_transform<double>(winograd_multiply(u, v, g), g, basis.AT_real);
}

WordTensor winograd_conv2d_fixed(const WordTensor& input, const WordTensor& u, const ConvAttrs& conv, int n,
                                 const FixedPointConfig& cfg) {
  const auto g = winograd_geometry(input.shape(), conv, n);
  const auto& basis = winograd_basis_for_tile(n, conv.kernel);
  check_winograd_headroom(basis, cfg);
  const DynMatrix<std::uint64_t> bt = basis.BT_int.cast<std::uint64_t>();
  const DynMatrix<std::uint64_t> at = basis.AT_int.cast<std::uint64_t>();
  WordTensor v = winograd_input_transform<std::uint64_t>(input, g, bt);
  WordTensor y = winograd_output_transform<std::uint64_t>(winograd_multiply(u, v, g), g, at);
  reduce_in_place(y, cfg);
  return y;
}

}  // namespace xconv
