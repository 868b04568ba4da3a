#include "xconv/cells.hpp"

#include <numeric>

namespace xconv {
namespace {

constexpr std::pair<CellVariant, std::string_view> kVariantNames[] = {
    {CellVariant::kDense, "dense"},
    {CellVariant::kFactorized, "factorized"},
    {CellVariant::kShuffle, "shuffle"},
    {CellVariant::kXOp, "xop"},
};

struct Stage {
  GraphBuilder& b;
  const CellOptions& options;

  std::string conv(const std::string& from, int c_out, int kernel, int stride, int groups) {
    std::string y = b.conv(from, c_out, kernel, stride, kernel / 2, groups);
    if (options.batchnorm) y = b.batchnorm(y);
    return y;
  }
};

// A strided identity for the permutation branch: 1x1-window average pool = subsampling.
std::string subsample(GraphBuilder& b, const std::string& from, int stride) {
  return stride == 1 ? from : b.avgpool(from, 1, stride, 0, "subsample");
}

void require_even(int v, const char* what, CellVariant variant) {
  if (v % 2) {
    throw ShapeError(std::string(to_string(variant)) + " cell needs an even " + what + ", got " + std::to_string(v));
  }
}

}  // namespace

std::string_view to_string(CellVariant v) {
  for (auto [k, n] : kVariantNames)
    if (k == v) return n;
  return "?";
}

CellVariant parse_cell_variant(std::string_view name) {
  for (auto [k, n] : kVariantNames)
    if (n == name) return k;
  if (name == "x-op" || name == "x") return CellVariant::kXOp;
  throw UnsupportedError("unknown cell variant '" + std::string(name) + "'");
}

char mnemonic(CellVariant v) {
  switch (v) {
    case CellVariant::kDense: return 'D';
    case CellVariant::kFactorized: return 'F';
    case CellVariant::kShuffle: return 'S';
    case CellVariant::kXOp: return 'X';
  }
  return '?';
}

std::vector<int> interleave_permutation(int channels, int groups) {
  std::vector<int> perm(channels);
  const int per_group = channels / groups;
  for (int c = 0; c < channels; ++c) perm[c] = (c % groups) * per_group + c / groups;
  return perm;
}

std::vector<int> random_permutation(int channels, Prg& prg) {
  std::vector<int> perm(channels);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = channels - 1; i > 0; --i) std::swap(perm[i], perm[prg.below(static_cast<std::uint64_t>(i) + 1)]);
  return perm;
}

std::string expand_cell(GraphBuilder& b, const std::string& from, CellVariant variant, const CellDims& d, Prg& prg,
                        const CellOptions& options) {
  if (b.channels(from) != d.c_in) {
    throw ShapeError("cell input has " + std::to_string(b.channels(from)) + " channels, dims say " +
                     std::to_string(d.c_in));
  }
  const int mid = d.lead_pointwise ? d.c_mid : d.c_in;
  if (!d.lead_pointwise && d.c_mid != d.c_in) throw ShapeError("cell without lead pointwise needs c_mid == c_in");
  const int k = d.kernel;
  Stage st{b, options};
  auto permutation = [&](int channels) {
    return options.random_shuffle ? random_permutation(channels, prg) : interleave_permutation(channels, 2);
  };

  if (variant == CellVariant::kXOp) {
    require_even(mid, "C'", variant);
    require_even(d.c_out, "C_out", variant);
    std::string x = from;
    if (d.lead_pointwise) {
      require_even(d.c_in, "C_in", variant);
      x = b.relu(st.conv(x, mid, 1, 1, 2));
    }
    const std::string depthwise = st.conv(x, mid, k, d.stride, mid);
    const std::string shuffled = subsample(b, b.shuffle(x, permutation(mid)), d.stride);
    const std::string merged = b.relu(b.add(depthwise, shuffled));
    return st.conv(merged, d.c_out, 1, 1, 2);
  }

  std::string x = from;
  if (d.lead_pointwise) x = b.relu(st.conv(x, mid, 1, 1, 1));
  switch (variant) {
    case CellVariant::kDense:
      if (d.dense_fuses_tail) return st.conv(x, d.c_out, k, d.stride, 1);
      x = b.relu(st.conv(x, mid, k, d.stride, 1));
      break;
    case CellVariant::kFactorized:
      x = b.relu(st.conv(x, mid, k, d.stride, mid));
      break;
    case CellVariant::kShuffle: {
      require_even(mid, "C'", variant);
      const int half = mid / 2;
      const std::string conv_half = st.conv(b.slice(x, 0, half), half, k, d.stride, half);
      const std::string perm_half =
          subsample(b, b.shuffle(b.slice(x, half, mid), permutation(half)), d.stride);
      x = b.relu(b.concat({conv_half, perm_half}));
      break;
    }
    case CellVariant::kXOp:
      break;
  }
  return st.conv(x, d.c_out, 1, 1, 1);
}

Graph cell_graph(CellVariant variant, const CellDims& dims, int size, std::uint64_t seed, const CellOptions& options) {
  GraphBuilder b({1, dims.c_in, size, size});
  Prg prg(derive(session_key(seed), "cell-permutations"));
  const std::string out = expand_cell(b, "input", variant, dims, prg, options);
  GraphInfo info;
  info.backbone = "cell";
  info.variant = std::string(to_string(variant));
  info.weight_seed = seed;
  Graph g = std::move(b).finish(out, info);
  materialize_weights(g);
  return g;
}

}  // namespace xconv
