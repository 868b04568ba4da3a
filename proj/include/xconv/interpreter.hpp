#pragma once

#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "xconv/fixed_point.hpp"
#include "xconv/graph.hpp"
#include "xconv/ops.hpp"

namespace xconv {

/// Encoded model-owner data for one layer of a fixed-point program.
struct PreparedLayer {
  // conv: weight [C_out, C_in/g, K, K], or the Winograd filter transform [n*n, C_out, C_in/g]
  // when the layer is tagged; fc: weight [out, in]. Scale s.
  WordTensor weight;
  WordTensor bias;  // scale 2s, one per output channel / feature
  // avgpool / global-avgpool: public reciprocal of the window size at scale s (0 = plain subsampling).
  std::uint64_t coefficient = 0;
  bool truncates = false;  // result is truncated by s after this layer
};

/// Batchnorm-free graph with every weight encoded: the common input of clear fixed-point and
/// secure execution, so both see identical constants.
struct FixedProgram {
  Graph graph;
  FixedPointConfig cfg;
  std::vector<PreparedLayer> layers;  // index-aligned with graph.layers
  std::vector<Shape> shapes;
};

/// Folds batchnorm, draws missing weights and encodes them. Throws OverflowError when a weight is
/// unrepresentable or a Winograd basis exceeds the ring headroom. Without weights (the client's
/// view) every weight and bias word is zero and only public constants are encoded.
FixedProgram compile_fixed(const Graph& graph, bool with_weights = true);

/// Index of the last layer that reads each layer's output (the graph output lives forever).
std::vector<std::size_t> last_uses(const Graph& graph);

/// Evaluates the DAG in order, freeing intermediates after their last consumer.
/// step(index, layer, inputs) produces the layer's value.
template <typename Value, typename Step>
Value execute_graph(const Graph& graph, Value input, Step&& step) {
  const auto last = last_uses(graph);
  std::vector<Value> values(graph.layers.size());
  std::map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    const Layer& layer = graph.layers[i];
    index.emplace(layer.name, i);
    if (layer.kind == LayerKind::kInput) {
      values[i] = std::move(input);
      continue;
    }
    std::vector<const Value*> in;
    for (const auto& src : layer.inputs) in.push_back(&values.at(index.at(src)));
    values[i] = step(i, layer, in);
    for (const auto& src : layer.inputs) {
      const auto j = index.at(src);
      if (last[j] == i) values[j] = Value{};
    }
  }
  return std::move(values[index.at(graph.output)]);
}

/// Channel range [begin, end) of an NCHW tensor.
template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& x, int begin, int end) {
  const auto plane = x.dim(2) * x.dim(3);
  const auto c = static_cast<std::int64_t>(end - begin);
  Tensor<Scalar> out({x.dim(0), c, x.dim(2), x.dim(3)});
  for (std::int64_t b = 0; b < x.dim(0); ++b)
    out.data().segment(b * c * plane, c * plane) = x.data().segment((b * x.dim(1) + begin) * plane, c * plane);
  return out;
}

/// Gathers the strided 1x1 windows of a window-1 pool.
template <typename Scalar>
Tensor<Scalar> subsample(const Tensor<Scalar>& x, int stride) {
  const auto ho = (x.dim(2) - 1) / stride + 1, wo = (x.dim(3) - 1) / stride + 1;
  Tensor<Scalar> out({x.dim(0), x.dim(1), ho, wo});
  for (std::int64_t b = 0; b < x.dim(0); ++b)
    for (std::int64_t c = 0; c < x.dim(1); ++c)
      for (std::int64_t i = 0; i < ho; ++i)
        for (std::int64_t j = 0; j < wo; ++j) out(b, c, i, j) = x(b, c, i * stride, j * stride);
  return out;
}

/// Data-movement and addition layers, which behave identically on clear values and on shares.
/// Returns false when the layer is not one of them. Integer scalars are masked with `mask`.
template <typename Scalar>
bool local_layer(const Layer& layer, const std::vector<const Tensor<Scalar>*>& in, Tensor<Scalar>& out,
                 std::uint64_t mask = ~std::uint64_t{0}) {
  switch (layer.kind) {
    case LayerKind::kShuffle:
      out = channel_shuffle(*in[0], std::span<const int>(layer.perm));
      return true;
    case LayerKind::kSlice:
      out = slice_channels(*in[0], layer.slice_begin, layer.slice_end);
      return true;
    case LayerKind::kConcat:
      out = concat_channels<Scalar>(std::span<const Tensor<Scalar>* const>(in.data(), in.size()));
      return true;
    case LayerKind::kAdd:
      if (in[0]->shape() != in[1]->shape()) throw ShapeError("layer '" + layer.name + "': add operand shapes differ");
      out = Tensor<Scalar>(in[0]->shape(), in[0]->data() + in[1]->data());
      if constexpr (std::is_integral_v<Scalar>) out.data() = out.data().unaryExpr([mask](Scalar v) { return v & mask; });
      return true;
    case LayerKind::kAvgPool:
      if (layer.pool.window != 1 || layer.pool.pad != 0) return false;
      out = subsample(*in[0], layer.pool.stride);
      return true;
    default:
      return false;
  }
}

/// Real-arithmetic reference inference (batchnorm evaluated directly, Winograd-tagged layers
/// through the tiled transform).
RealTensor infer_float(const Graph& graph, const RealTensor& input);

/// Bitwise reference for secure execution. Throws OverflowError when a value that is about to be
/// truncated leaves (-2^(l-2), 2^(l-2)).
RingTensor infer_fixed(const FixedProgram& program, const RingTensor& input);
RingTensor infer_fixed(const Graph& graph, const RealTensor& input);

enum class InferMode { kFloat, kFixed };
/// Float or decoded fixed-point output.
RealTensor infer_clear(const Graph& graph, const RealTensor& input, InferMode mode);

/// Clear fixed-point ReLU and pairwise maximum b + relu(a - b), shared with the secure path.
std::uint64_t fixed_relu(std::uint64_t v, const FixedPointConfig& cfg);
WordTensor fixed_maxpool(const WordTensor& x, const PoolAttrs& pool, const FixedPointConfig& cfg);

}  // namespace xconv
