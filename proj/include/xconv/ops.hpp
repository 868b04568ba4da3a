#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "xconv/tensor.hpp"

namespace xconv {

struct ConvParams {
  int stride = 1;
  int pad = 0;
  int groups = 1;
};

inline std::int64_t conv_out_extent(std::int64_t in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename Scalar>
Tensor<Scalar> pad2d(const Tensor<Scalar>& x, int pad_before, int pad_after) {
  if (pad_before == 0 && pad_after == 0) return x;
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<Scalar> out({n, c, h + pad_before + pad_after, w + pad_before + pad_after});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) out(b, ch, i + pad_before, j + pad_before) = x(b, ch, i, j);
  return out;
}

/// Grouped 2-D cross-correlation. filter is [C_out, C_in/groups, K, K]. Integer scalars wrap
/// modulo 2^64, which is exact ring arithmetic once the caller masks to the ring.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& filter, const ConvParams& p) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  if (input.rank() != 4 || filter.rank() != 4) throw ShapeError("conv2d expects rank-4 input and filter");
  const auto n = input.dim(0), c_in = input.dim(1);
  const auto c_out = filter.dim(0), k = filter.dim(2);
  const int g = p.groups;
  if (g <= 0 || c_in % g || c_out % g || filter.dim(1) != c_in / g || filter.dim(3) != k) {
    throw ShapeError("conv2d filter " + to_string(filter.shape()) + " incompatible with input " +
                     to_string(input.shape()) + " and groups " + std::to_string(g));
  }
  const Tensor<Scalar> x = pad2d(input, p.pad, p.pad);
  const auto h = x.dim(2), w = x.dim(3);
  const auto ho = (h - k) / p.stride + 1, wo = (w - k) / p.stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d output would be empty for input " + to_string(input.shape()));
  const auto cig = c_in / g, cog = c_out / g;
  Tensor<Scalar> out({n, c_out, ho, wo});
  Mat cols(cig * k * k, ho * wo);
  for (std::int64_t b = 0; b < n; ++b) {
    for (int grp = 0; grp < g; ++grp) {
      for (std::int64_t c = 0; c < cig; ++c)
        for (std::int64_t ky = 0; ky < k; ++ky)
          for (std::int64_t kx = 0; kx < k; ++kx) {
            const auto row = (c * k + ky) * k + kx;
            for (std::int64_t oy = 0; oy < ho; ++oy)
              for (std::int64_t ox = 0; ox < wo; ++ox)
                cols(row, oy * wo + ox) = x(b, grp * cig + c, oy * p.stride + ky, ox * p.stride + kx);
          }
      Eigen::Map<const Mat> wmat(filter.data().data() + grp * cog * cig * k * k, cog, cig * k * k);
      Eigen::Map<Mat> omat(out.data().data() + ((b * c_out) + grp * cog) * ho * wo, cog, ho * wo);
      omat.noalias() = wmat * cols;
    }
  }
  return out;
}

/// y = x_flat * W^T for W of shape [out, in].
template <typename Scalar>
Tensor<Scalar> fully_connected(const Tensor<Scalar>& input, const Tensor<Scalar>& weight) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto n = input.dim(0);
  const auto in_features = input.size() / n;
  if (weight.rank() != 2 || weight.dim(1) != in_features) {
    throw ShapeError("fully-connected weight " + to_string(weight.shape()) + " does not accept " +
                     std::to_string(in_features) + " features");
  }
  Tensor<Scalar> out({n, weight.dim(0)});
  Eigen::Map<const Mat> x(input.data().data(), n, in_features);
  Eigen::Map<const Mat> wm(weight.data().data(), weight.dim(0), in_features);
  Eigen::Map<Mat> y(out.data().data(), n, weight.dim(0));
  y.noalias() = x * wm.transpose();
  return out;
}

/// True when perm is a permutation of 0..n-1.
inline bool is_bijection(std::span<const int> perm) {
  std::vector<char> seen(perm.size(), 0);
  for (int v : perm) {
    if (v < 0 || static_cast<std::size_t>(v) >= perm.size() || seen[v]) return false;
    seen[v] = 1;
  }
  return true;
}

/// Output channel c takes input channel perm[c].
template <typename Scalar>
Tensor<Scalar> channel_shuffle(const Tensor<Scalar>& x, std::span<const int> perm) {
  if (static_cast<std::int64_t>(perm.size()) != x.dim(1)) {
    throw ShapeError("shuffle permutation has " + std::to_string(perm.size()) + " entries for " +
                     std::to_string(x.dim(1)) + " channels");
  }
  if (!is_bijection(perm)) throw ShapeError("shuffle permutation is not a bijection");
  Tensor<Scalar> out(x.shape());
  const auto plane = x.dim(2) * x.dim(3);
  for (std::int64_t b = 0; b < x.dim(0); ++b)
    for (std::int64_t c = 0; c < x.dim(1); ++c)
      out.data().segment((b * x.dim(1) + c) * plane, plane) = x.data().segment((b * x.dim(1) + perm[c]) * plane, plane);
  return out;
}

template <typename Scalar>
Tensor<Scalar> concat_channels(std::span<const Tensor<Scalar>* const> parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  Shape shape = parts[0]->shape();
  std::int64_t channels = 0;
  for (auto* t : parts) {
    if (t->rank() != 4 || t->dim(0) != shape[0] || t->dim(2) != shape[2] || t->dim(3) != shape[3]) {
      throw ShapeError("concat operand " + to_string(t->shape()) + " incompatible with " + to_string(shape));
    }
    channels += t->dim(1);
  }
  shape[1] = channels;
  Tensor<Scalar> out(shape);
  const auto plane = shape[2] * shape[3];
  for (std::int64_t b = 0; b < shape[0]; ++b) {
    std::int64_t c0 = 0;
    for (auto* t : parts) {
      const auto block = t->dim(1) * plane;
      out.data().segment((b * channels + c0) * plane, block) = t->data().segment(b * block, block);
      c0 += t->dim(1);
    }
  }
  return out;
}

/// For every pooling output, the flat input indices under its window. Padded positions are
/// replaced by the window's first in-bounds element, which leaves max unchanged.
std::vector<std::vector<std::int64_t>> pool_windows(const Shape& in, int window, int stride, int pad,
                                                    Shape* out_shape);

/// Window sums with zero padding (the numerator of an average pool).
template <typename Scalar>
Tensor<Scalar> window_sum(const Tensor<Scalar>& input, int window, int stride, int pad) {
  const Tensor<Scalar> x = pad2d(input, pad, pad);
  const auto ho = (x.dim(2) - window) / stride + 1, wo = (x.dim(3) - window) / stride + 1;
  Tensor<Scalar> out({x.dim(0), x.dim(1), ho, wo});
  for (std::int64_t b = 0; b < x.dim(0); ++b)
    for (std::int64_t c = 0; c < x.dim(1); ++c)
      for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          Scalar acc{0};
          for (int ky = 0; ky < window; ++ky)
            for (int kx = 0; kx < window; ++kx) acc += x(b, c, oy * stride + ky, ox * stride + kx);
          out(b, c, oy, ox) = acc;
        }
  return out;
}

template <typename Scalar>
Tensor<Scalar> global_sum(const Tensor<Scalar>& x) {
  Tensor<Scalar> out({x.dim(0), x.dim(1), 1, 1});
  const auto plane = x.dim(2) * x.dim(3);
  for (std::int64_t i = 0; i < x.dim(0) * x.dim(1); ++i) out[i] = x.data().segment(i * plane, plane).sum();
  return out;
}

}  // namespace xconv
