#include "xconv/graph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "xconv/ops.hpp"
#include "xconv/rng.hpp"

namespace xconv {
namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 12> kKindNames{{
    {LayerKind::kInput, "input"},
    {LayerKind::kConv2d, "conv2d"},
    {LayerKind::kShuffle, "shuffle"},
    {LayerKind::kSlice, "slice"},
    {LayerKind::kRelu, "relu"},
    {LayerKind::kMaxPool, "maxpool"},
    {LayerKind::kAvgPool, "avgpool"},
    {LayerKind::kGlobalAvgPool, "global-avgpool"},
    {LayerKind::kFullyConnected, "fully-connected"},
    {LayerKind::kAdd, "add"},
    {LayerKind::kConcat, "concat"},
    {LayerKind::kBatchNorm, "batchnorm"},
}};

[[noreturn]] void fail(const Layer& layer, const std::string& what) {
  throw ShapeError("layer '" + layer.name + "': " + what);
}

void expect_inputs(const Layer& layer, std::size_t count) {
  if (layer.inputs.size() != count) {
    fail(layer, "expects " + std::to_string(count) + " input(s), got " + std::to_string(layer.inputs.size()));
  }
}

void expect_param_shape(const Layer& layer, const std::string& key, const Shape& shape) {
  auto it = layer.params.find(key);
  if (it != layer.params.end() && it->second.shape() != shape) {
    fail(layer, "parameter '" + key + "' has shape " + to_string(it->second.shape()) + ", expected " +
                    to_string(shape));
  }
}

Shape pool_shape(const Layer& layer, const Shape& in) {
  const auto& p = layer.pool;
  if (in.size() != 4) fail(layer, "pooling expects a rank-4 input, got " + to_string(in));
  if (p.window <= 0 || p.stride <= 0 || p.pad < 0 || p.pad >= p.window) fail(layer, "invalid pooling attributes");
  const auto ho = conv_out_extent(in[2], p.window, p.stride, p.pad);
  const auto wo = conv_out_extent(in[3], p.window, p.stride, p.pad);
  if (ho <= 0 || wo <= 0) fail(layer, "pooling window larger than input " + to_string(in));
  return {in[0], in[1], ho, wo};
}

// Output shape of one layer given its input shapes; throws ShapeError naming the layer/edge.
Shape layer_shape(const Layer& layer, const std::vector<const Shape*>& in, const Shape& graph_input) {
  switch (layer.kind) {
    case LayerKind::kInput:
      expect_inputs(layer, 0);
      return graph_input;
    case LayerKind::kConv2d: {
      expect_inputs(layer, 1);
      const auto& c = layer.conv;
      const Shape& x = *in[0];
      if (x.size() != 4) fail(layer, "conv2d expects a rank-4 input, got " + to_string(x));
      if (x[1] != c.in_channels) {
        fail(layer, "C_in mismatch on edge '" + layer.inputs[0] + "' -> '" + layer.name + "': layer expects " +
                        std::to_string(c.in_channels) + " channels, producer gives " + std::to_string(x[1]));
      }
      if (c.groups <= 0 || c.in_channels % c.groups || c.out_channels % c.groups) {
        fail(layer, "groups " + std::to_string(c.groups) + " do not divide C_in=" + std::to_string(c.in_channels) +
                        " and C_out=" + std::to_string(c.out_channels));
      }
      if (c.kernel <= 0 || c.stride <= 0 || c.pad < 0) fail(layer, "invalid conv2d attributes");
      if (c.winograd && c.stride != 1) fail(layer, "winograd requires stride 1");
      const auto ho = conv_out_extent(x[2], c.kernel, c.stride, c.pad);
      const auto wo = conv_out_extent(x[3], c.kernel, c.stride, c.pad);
      if (ho <= 0 || wo <= 0) fail(layer, "filter larger than padded input " + to_string(x));
      expect_param_shape(layer, "weight", {c.out_channels, c.in_channels / c.groups, c.kernel, c.kernel});
      expect_param_shape(layer, "bias", {c.out_channels});
      return {x[0], c.out_channels, ho, wo};
    }
    case LayerKind::kShuffle: {
      expect_inputs(layer, 1);
      const Shape& x = *in[0];
      if (x.size() != 4 || static_cast<std::int64_t>(layer.perm.size()) != x[1]) {
        fail(layer, "permutation length " + std::to_string(layer.perm.size()) + " does not match input " +
                        to_string(x));
      }
      if (!is_bijection(layer.perm)) fail(layer, "permutation is not a bijection");
      return x;
    }
    case LayerKind::kSlice: {
      expect_inputs(layer, 1);
      const Shape& x = *in[0];
      if (x.size() != 4 || layer.slice_begin < 0 || layer.slice_begin >= layer.slice_end ||
          layer.slice_end > x[1]) {
        fail(layer, "channel range [" + std::to_string(layer.slice_begin) + ", " + std::to_string(layer.slice_end) +
                        ") invalid for input " + to_string(x));
      }
      return {x[0], layer.slice_end - layer.slice_begin, x[2], x[3]};
    }
    case LayerKind::kRelu:
      expect_inputs(layer, 1);
      return *in[0];
    case LayerKind::kBatchNorm: {
      expect_inputs(layer, 1);
      const Shape& x = *in[0];
      if (x.size() < 2) fail(layer, "batchnorm needs a channel axis");
      for (const char* key : {"gamma", "beta", "mean", "var"}) expect_param_shape(layer, key, {x[1]});
      return x;
    }
    case LayerKind::kMaxPool:
    case LayerKind::kAvgPool:
      expect_inputs(layer, 1);
      return pool_shape(layer, *in[0]);
    case LayerKind::kGlobalAvgPool: {
      expect_inputs(layer, 1);
      const Shape& x = *in[0];
      if (x.size() != 4) fail(layer, "global-avgpool expects a rank-4 input");
      return {x[0], x[1], 1, 1};
    }
    case LayerKind::kFullyConnected: {
      expect_inputs(layer, 1);
      const Shape& x = *in[0];
      const auto features = numel(x) / x[0];
      if (features != layer.in_features) {
        fail(layer, "in_features mismatch on edge '" + layer.inputs[0] + "' -> '" + layer.name + "': layer expects " +
                        std::to_string(layer.in_features) + ", producer gives " + std::to_string(features));
      }
      if (layer.out_features <= 0) fail(layer, "out_features must be positive");
      expect_param_shape(layer, "weight", {layer.out_features, layer.in_features});
      expect_param_shape(layer, "bias", {layer.out_features});
      return {x[0], layer.out_features};
    }
    case LayerKind::kAdd:
      expect_inputs(layer, 2);
      if (*in[0] != *in[1]) {
        fail(layer, "operand shapes differ: " + to_string(*in[0]) + " vs " + to_string(*in[1]));
      }
      return *in[0];
    case LayerKind::kConcat: {
      if (in.empty()) fail(layer, "concat needs at least one input");
      Shape out = *in[0];
      if (out.size() != 4) fail(layer, "concat expects rank-4 inputs");
      for (std::size_t i = 1; i < in.size(); ++i) {
        const Shape& s = *in[i];
        if (s.size() != 4 || s[0] != out[0] || s[2] != out[2] || s[3] != out[3]) {
          fail(layer, "operand '" + layer.inputs[i] + "' " + to_string(s) + " incompatible with " + to_string(out));
        }
        out[1] += s[1];
      }
      return out;
    }
  }
  fail(layer, "unknown layer kind");
}

std::vector<Shape> infer_all(const Graph& graph) {
  if (graph.layers.empty() || graph.layers.front().kind != LayerKind::kInput) {
    throw ShapeError("graph must start with its single input layer");
  }
  std::map<std::string_view, std::size_t> index;
  std::vector<Shape> shapes;
  shapes.reserve(graph.layers.size());
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    const Layer& layer = graph.layers[i];
    if (i > 0 && layer.kind == LayerKind::kInput) fail(layer, "a graph has exactly one input layer");
    if (index.count(layer.name)) fail(layer, "duplicate layer name");
    std::vector<const Shape*> in;
    for (const auto& src : layer.inputs) {
      auto it = index.find(src);
      if (it == index.end()) {
        fail(layer, "input '" + src + "' is not defined before this layer (unknown or cyclic edge)");
      }
      in.push_back(&shapes[it->second]);
    }
    shapes.push_back(layer_shape(layer, in, graph.input_shape));
    index.emplace(layer.name, i);
  }
  if (!index.count(graph.output)) throw ShapeError("output layer '" + graph.output + "' does not exist");
  return shapes;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (auto [k, name] : kKindNames)
    if (k == kind) return name;
  return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (auto [k, n] : kKindNames)
    if (n == name) return k;
  throw ParseError("unknown layer kind '" + std::string(name) + "'");
}

std::optional<std::size_t> Graph::find(std::string_view name) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].name == name) return i;
  return std::nullopt;
}

std::size_t Graph::index_of(std::string_view name) const {
  auto i = find(name);
  if (!i) throw ShapeError("no layer named '" + std::string(name) + "'");
  return *i;
}

const Layer& Graph::at(std::string_view name) const { return layers[index_of(name)]; }
Layer& Graph::at(std::string_view name) { return layers[index_of(name)]; }

std::vector<Shape> infer_shapes(const Graph& graph) { return infer_all(graph); }

ShapeReport validate_shapes(const Graph& graph) {
  ShapeReport report;
  try {
    auto shapes = infer_all(graph);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      report.shapes.push_back({graph.layers[i].name, graph.layers[i].kind, shapes[i]});
    }
  } catch (const ShapeError& e) {
    report.ok = false;
    report.error = e.what();
    const std::string msg = e.what();
    const auto open = msg.find('\'');
    if (msg.rfind("layer '", 0) == 0 && open != std::string::npos) {
      report.layer = msg.substr(open + 1, msg.find('\'', open + 1) - open - 1);
    }
  }
  return report;
}

void materialize_weights(Graph& graph) {
  const auto shapes = infer_all(graph);
  auto missing = [](const Layer& l, const char* key) { return !l.params.count(key); };
  bool needed = false;
  for (const auto& l : graph.layers) {
    if ((l.has_multiplications() && missing(l, "weight")) || (l.kind == LayerKind::kBatchNorm && missing(l, "gamma"))) {
      needed = true;
    }
  }
  if (!needed) return;
  if (!graph.info.weight_seed) throw ShapeError("graph has layers without weights and no weight seed");
  const Seed root = derive(session_key(*graph.info.weight_seed), "weights");

  auto uniform = [](Prg& prg, Shape shape, double lo, double hi) {
    RealTensor t(std::move(shape));
    for (auto& v : t.values()) v = prg.uniform(lo, hi);
    return t;
  };
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    Layer& l = graph.layers[i];
    Prg prg(derive(root, l.name));
    if (l.kind == LayerKind::kConv2d) {
      const auto& c = l.conv;
      const double fan_in = static_cast<double>(c.in_channels / c.groups) * c.kernel * c.kernel;
      const double bound = std::sqrt(6.0 / fan_in);
      if (missing(l, "weight")) {
        l.params["weight"] = uniform(prg, {c.out_channels, c.in_channels / c.groups, c.kernel, c.kernel}, -bound, bound);
      }
      if (missing(l, "bias")) l.params["bias"] = uniform(prg, {c.out_channels}, -0.05, 0.05);
    } else if (l.kind == LayerKind::kFullyConnected) {
      const double bound = std::sqrt(6.0 / l.in_features);
      if (missing(l, "weight")) l.params["weight"] = uniform(prg, {l.out_features, l.in_features}, -bound, bound);
      if (missing(l, "bias")) l.params["bias"] = uniform(prg, {l.out_features}, -0.05, 0.05);
    } else if (l.kind == LayerKind::kBatchNorm && missing(l, "gamma")) {
      const auto c = shapes[i][1];
      l.params["gamma"] = uniform(prg, {c}, 0.8, 1.2);
      l.params["beta"] = uniform(prg, {c}, -0.1, 0.1);
      l.params["mean"] = uniform(prg, {c}, -0.1, 0.1);
      l.params["var"] = uniform(prg, {c}, 0.8, 1.2);
    }
  }
}

Graph fold_batchnorm(const Graph& input) {
  Graph graph = input;
  const bool has_bn = std::any_of(graph.layers.begin(), graph.layers.end(),
                                  [](const Layer& l) { return l.kind == LayerKind::kBatchNorm; });
  if (!has_bn) return graph;
  if (graph.info.weight_seed) materialize_weights(graph);

  std::map<std::string, int> consumers;
  for (const auto& l : graph.layers)
    for (const auto& src : l.inputs) ++consumers[src];

  std::map<std::string, std::string> renamed;  // folded batchnorm -> producer
  std::vector<Layer> kept;
  for (auto& layer : graph.layers) {
    for (auto& src : layer.inputs)
      if (auto it = renamed.find(src); it != renamed.end()) src = it->second;
    if (layer.kind != LayerKind::kBatchNorm) {
      kept.push_back(std::move(layer));
      continue;
    }
    const std::string& src = layer.inputs.at(0);
    auto producer = std::find_if(kept.begin(), kept.end(), [&](const Layer& l) { return l.name == src; });
    if (producer == kept.end() || !producer->has_multiplications() || consumers[src] != 1 ||
        !producer->ring_params.empty()) {
      throw ShapeError("layer '" + layer.name + "': orphan batchnorm (must be the sole consumer of a conv2d or "
                       "fully-connected layer)");
    }
    renamed[layer.name] = producer->name;
    const bool bn_params = layer.params.count("gamma") > 0;
    if (bn_params != (producer->params.count("weight") > 0)) {
      throw ShapeError("layer '" + layer.name + "': batchnorm and its producer disagree on carrying parameters");
    }
    if (!bn_params) continue;  // architecture only
    const auto& gamma = layer.params.at("gamma");
    const auto& beta = layer.params.at("beta");
    const auto& mean = layer.params.at("mean");
    const auto& var = layer.params.at("var");
    RealTensor& w = producer->params.at("weight");
    const auto channels = w.dim(0);
    const auto per_channel = w.size() / channels;
    RealTensor bias = producer->params.count("bias") ? producer->params.at("bias") : RealTensor({channels});
    for (std::int64_t c = 0; c < channels; ++c) {
      const double scale = gamma[c] / std::sqrt(var[c] + layer.eps);
      w.data().segment(c * per_channel, per_channel) *= scale;
      bias[c] = (bias[c] - mean[c]) * scale + beta[c];
    }
    producer->params["bias"] = std::move(bias);
  }
  graph.layers = std::move(kept);
  if (auto it = renamed.find(graph.output); it != renamed.end()) graph.output = it->second;
  return graph;
}

std::vector<std::vector<std::int64_t>> pool_windows(const Shape& in, int window, int stride, int pad,
                                                    Shape* out_shape) {
  const auto n = in[0], c = in[1], h = in[2], w = in[3];
  const auto ho = conv_out_extent(h, window, stride, pad), wo = conv_out_extent(w, window, stride, pad);
  if (out_shape) *out_shape = {n, c, ho, wo};
  std::vector<std::vector<std::int64_t>> windows;
  windows.reserve(n * c * ho * wo);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          std::vector<std::int64_t> idx;
          idx.reserve(window * window);
          std::int64_t first = -1;
          for (int ky = 0; ky < window; ++ky)
            for (int kx = 0; kx < window; ++kx) {
              const auto y = oy * stride + ky - pad, x = ox * stride + kx - pad;
              const bool inside = y >= 0 && y < h && x >= 0 && x < w;
              const auto flat = inside ? ((b * c + ch) * h + y) * w + x : -1;
              if (inside && first < 0) first = flat;
              idx.push_back(flat);
            }
          for (auto& v : idx)
            if (v < 0) v = first;
          windows.push_back(std::move(idx));
        }
  return windows;
}

GraphBuilder::GraphBuilder(Shape input_shape) {
  graph_.input_shape = input_shape;
  Layer in;
  in.name = "input";
  in.kind = LayerKind::kInput;
  graph_.layers.push_back(in);
  shapes_["input"] = std::move(input_shape);
}

const Shape& GraphBuilder::shape_of(const std::string& name) const { return shapes_.at(name); }

std::string GraphBuilder::unique(const std::string& prefix) {
  std::string name;
  do {
    name = prefix + "_" + std::to_string(counters_[prefix]++);
  } while (shapes_.count(name));
  return name;
}

std::string GraphBuilder::push(Layer layer) {
  std::vector<const Shape*> in;
  for (const auto& src : layer.inputs) in.push_back(&shapes_.at(src));
  shapes_[layer.name] = layer_shape(layer, in, graph_.input_shape);
  graph_.layers.push_back(std::move(layer));
  return graph_.layers.back().name;
}

std::string GraphBuilder::conv(const std::string& from, int out_channels, int kernel, int stride, int pad, int groups,
                               const std::string& prefix) {
  Layer l;
  l.name = unique(prefix);
  l.kind = LayerKind::kConv2d;
  l.inputs = {from};
  l.conv.in_channels = static_cast<int>(channels(from));
  l.conv.out_channels = out_channels;
  l.conv.kernel = kernel;
  l.conv.stride = stride;
  l.conv.pad = pad;
  l.conv.groups = groups;
  return push(std::move(l));
}

namespace {
Layer simple(std::string name, LayerKind kind, std::vector<std::string> inputs) {
  Layer l;
  l.name = std::move(name);
  l.kind = kind;
  l.inputs = std::move(inputs);
  return l;
}
}  // namespace

std::string GraphBuilder::batchnorm(const std::string& from, const std::string& prefix) {
  return push(simple(unique(prefix), LayerKind::kBatchNorm, {from}));
}

std::string GraphBuilder::relu(const std::string& from, const std::string& prefix) {
  return push(simple(unique(prefix), LayerKind::kRelu, {from}));
}

std::string GraphBuilder::maxpool(const std::string& from, int window, int stride, int pad, const std::string& prefix) {
  Layer l = simple(unique(prefix), LayerKind::kMaxPool, {from});
  l.pool = {window, stride, pad};
  return push(std::move(l));
}

std::string GraphBuilder::avgpool(const std::string& from, int window, int stride, int pad, const std::string& prefix) {
  Layer l = simple(unique(prefix), LayerKind::kAvgPool, {from});
  l.pool = {window, stride, pad};
  return push(std::move(l));
}

std::string GraphBuilder::global_avgpool(const std::string& from, const std::string& prefix) {
  return push(simple(unique(prefix), LayerKind::kGlobalAvgPool, {from}));
}

std::string GraphBuilder::fully_connected(const std::string& from, int out_features, const std::string& prefix) {
  Layer l = simple(unique(prefix), LayerKind::kFullyConnected, {from});
  const auto& s = shape_of(from);
  l.in_features = static_cast<int>(numel(s) / s[0]);
  l.out_features = out_features;
  return push(std::move(l));
}

std::string GraphBuilder::add(const std::string& a, const std::string& b, const std::string& prefix) {
  return push(simple(unique(prefix), LayerKind::kAdd, {a, b}));
}

std::string GraphBuilder::concat(const std::vector<std::string>& parts, const std::string& prefix) {
  return push(simple(unique(prefix), LayerKind::kConcat, parts));
}

std::string GraphBuilder::shuffle(const std::string& from, std::vector<int> perm, const std::string& prefix) {
  Layer l = simple(unique(prefix), LayerKind::kShuffle, {from});
  l.perm = std::move(perm);
  return push(std::move(l));
}

std::string GraphBuilder::slice(const std::string& from, int begin, int end, const std::string& prefix) {
  Layer l = simple(unique(prefix), LayerKind::kSlice, {from});
  l.slice_begin = begin;
  l.slice_end = end;
  return push(std::move(l));
}

Graph GraphBuilder::finish(const std::string& output, GraphInfo info) && {
  if (!shapes_.count(output)) throw ShapeError("output layer '" + output + "' does not exist");
  graph_.output = output;
  graph_.info = std::move(info);
  return std::move(graph_);
}

}  // namespace xconv
