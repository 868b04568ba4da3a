#include "xconv/zoo.hpp"

#include <charconv>

namespace xconv {
namespace {

struct Net {
  GraphBuilder b;
  Prg prg;
  CellOptions options;

  std::string conv_bn_relu(const std::string& x, int c_out, int k, int stride, int pad, bool relu = true) {
    std::string y = b.batchnorm(b.conv(x, c_out, k, stride, pad));
    return relu ? b.relu(y) : y;
  }
  std::string cell(const std::string& x, CellVariant v, const CellDims& d) { return expand_cell(b, x, v, d, prg, options); }
  std::string head(const std::string& x, int classes = kZooClasses) {
    return b.fully_connected(b.global_avgpool(x), classes);
  }
};

Net make_net(int channels, int size, std::uint64_t seed) {
  return Net{GraphBuilder({1, channels, size, size}), Prg(derive(session_key(seed), "zoo-permutations")),
             CellOptions{true, true}};
}

std::string densenet121(Net& n, CellVariant v) {
  std::string x = n.b.maxpool(n.conv_bn_relu("input", 64, 7, 2, 3), 3, 2, 1);
  const int blocks[] = {6, 12, 24, 16};
  for (int bi = 0; bi < 4; ++bi) {
    for (int li = 0; li < blocks[bi]; ++li) {
      const int c = static_cast<int>(n.b.channels(x));
      CellDims d{c, 128, 32, 3, 1, true, true};
      const std::string grown = n.b.relu(n.cell(x, v, d));
      x = n.b.concat({x, grown});
    }
    if (bi < 3) {
      const int c = static_cast<int>(n.b.channels(x));
      x = n.b.avgpool(n.conv_bn_relu(x, c / 2, 1, 1, 0), 2, 2);
    }
  }
  return n.head(x);
}

std::string resnet_stem(Net& n) { return n.b.maxpool(n.conv_bn_relu("input", 64, 7, 2, 3), 3, 2, 1); }

std::string shortcut(Net& n, const std::string& x, int c_out, int stride) {
  if (stride == 1 && n.b.channels(x) == c_out) return x;
  return n.b.batchnorm(n.b.conv(x, c_out, 1, stride, 0, 1, "downsample"));
}

std::string resnet50(Net& n, CellVariant v) {
  std::string x = resnet_stem(n);
  const int planes[] = {64, 128, 256, 512};
  const int blocks[] = {3, 4, 6, 3};
  for (int si = 0; si < 4; ++si) {
    for (int bi = 0; bi < blocks[si]; ++bi) {
      const int stride = (si > 0 && bi == 0) ? 2 : 1;
      const int c_in = static_cast<int>(n.b.channels(x));
      CellDims d{c_in, planes[si], 4 * planes[si], 3, stride, true, false};
      const std::string body = n.cell(x, v, d);
      x = n.b.relu(n.b.add(body, shortcut(n, x, 4 * planes[si], stride)));
    }
  }
  return n.head(x);
}

std::string resnet18(Net& n, CellVariant v) {
  std::string x = resnet_stem(n);
  const int planes[] = {64, 128, 256, 512};
  for (int si = 0; si < 4; ++si) {
    for (int bi = 0; bi < 2; ++bi) {
      const int stride = (si > 0 && bi == 0) ? 2 : 1;
      const int c_in = static_cast<int>(n.b.channels(x));
      const int p = planes[si];
      std::string y = n.b.relu(n.cell(x, v, CellDims{c_in, c_in, p, 3, stride, false, true}));
      y = n.cell(y, v, CellDims{p, p, p, 3, 1, false, true});
      x = n.b.relu(n.b.add(y, shortcut(n, x, p, stride)));
    }
  }
  return n.head(x);
}

std::string mobilenetv3l(Net& n, CellVariant v) {
  // kernel, expansion, output, stride. Squeeze-excite is dropped and hard-swish is ReLU.
  struct Block {
    int k, exp, out, stride;
  };
  static constexpr Block kBlocks[] = {
      {3, 16, 16, 1},   {3, 64, 24, 2},   {3, 72, 24, 1},   {5, 72, 40, 2},   {5, 120, 40, 1},
      {5, 120, 40, 1},  {3, 240, 80, 2},  {3, 200, 80, 1},  {3, 184, 80, 1},  {3, 184, 80, 1},
      {3, 480, 112, 1}, {3, 672, 112, 1}, {5, 672, 160, 2}, {5, 960, 160, 1}, {5, 960, 160, 1},
  };
  std::string x = n.conv_bn_relu("input", 16, 3, 2, 1);
  for (const auto& blk : kBlocks) {
    const int c_in = static_cast<int>(n.b.channels(x));
    CellDims d{c_in, blk.exp, blk.out, blk.k, blk.stride, blk.exp != c_in, false};
    const std::string y = n.cell(x, v, d);
    x = (blk.stride == 1 && c_in == blk.out) ? n.b.add(y, x) : y;
  }
  x = n.conv_bn_relu(x, 960, 1, 1, 0);
  x = n.b.relu(n.b.fully_connected(n.b.global_avgpool(x), 1280));
  return n.b.fully_connected(x, kZooClasses);
}

std::string shufflenetv2(Net& n, CellVariant v) {
  std::string x = n.b.maxpool(n.conv_bn_relu("input", 24, 3, 2, 1), 3, 2, 1);
  const int widths[] = {116, 232, 464};
  const int repeats[] = {4, 8, 4};
  for (int si = 0; si < 3; ++si) {
    const int c_out = widths[si];
    const int half = c_out / 2;
    for (int r = 0; r < repeats[si]; ++r) {
      const int c_in = static_cast<int>(n.b.channels(x));
      std::string left, right;
      if (r == 0) {
        left = n.b.relu(n.cell(x, v, CellDims{c_in, c_in, half, 3, 2, false, false}));
        right = n.b.relu(n.cell(x, v, CellDims{c_in, half, half, 3, 2, true, false}));
      } else {
        left = n.b.slice(x, 0, half);
        right = n.b.relu(n.cell(n.b.slice(x, half, c_in), v, CellDims{half, half, half, 3, 1, true, false}));
      }
      x = n.b.shuffle(n.b.concat({left, right}), interleave_permutation(c_out, 2), "channel_shuffle");
    }
  }
  x = n.conv_bn_relu(x, 1024, 1, 1, 0);
  return n.head(x);
}

std::string toynet(Net& n, CellVariant v) {
  std::string x = n.b.relu(n.b.conv("input", 8, 3, 2, 1));
  x = n.b.relu(n.cell(x, v, CellDims{8, 8, 8, 3, 1, false, true}));
  x = n.b.maxpool(x, 2, 2, 0);
  return n.b.fully_connected(x, 10);
}

}  // namespace

const std::vector<std::string>& zoo_backbones() {
  static const std::vector<std::string> names{"densenet121", "resnet50", "resnet18", "mobilenetv3l", "shufflenetv2",
                                              "toynet"};
  return names;
}

Graph model_zoo(std::string_view backbone, CellVariant variant, int input_size, std::uint64_t seed) {
  if (input_size < 8) throw UnsupportedError("input size " + std::to_string(input_size) + " is too small");
  Net n = make_net(3, input_size, seed);
  std::string out;
  if (backbone == "densenet121") {
    out = densenet121(n, variant);
  } else if (backbone == "resnet50") {
    out = resnet50(n, variant);
  } else if (backbone == "resnet18") {
    out = resnet18(n, variant);
  } else if (backbone == "mobilenetv3l") {
    out = mobilenetv3l(n, variant);
  } else if (backbone == "shufflenetv2") {
    out = shufflenetv2(n, variant);
  } else if (backbone == "toynet") {
    n.options = CellOptions{false, true};
    out = toynet(n, variant);
  } else {
    throw UnsupportedError("unsupported backbone '" + std::string(backbone) + "'");
  }
  GraphInfo info;
  info.backbone = std::string(backbone);
  info.variant = std::string(to_string(variant));
  info.weight_seed = seed;
  return std::move(n.b).finish(out, info);
}

Graph model_zoo_spec(std::string_view spec, std::uint64_t seed) {
  const auto first = spec.find(':');
  if (first == std::string_view::npos) throw UnsupportedError("zoo spec must be backbone:variant[:size]");
  const auto second = spec.find(':', first + 1);
  const auto backbone = spec.substr(0, first);
  const auto variant = spec.substr(first + 1, second == std::string_view::npos ? std::string_view::npos : second - first - 1);
  int size = 320;
  if (second != std::string_view::npos) {
    const auto text = spec.substr(second + 1);
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), size);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      throw UnsupportedError("bad input size in zoo spec '" + std::string(spec) + "'");
    }
  }
  return model_zoo(backbone, parse_cell_variant(variant), size, seed);
}

CellDims resnet50_stage1_dims() { return CellDims{64, 64, 256, 3, 1, true, false}; }

}  // namespace xconv
