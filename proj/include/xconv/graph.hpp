#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "xconv/fixed_point.hpp"
#include "xconv/tensor.hpp"

namespace xconv {

enum class LayerKind {
  kInput,
  kConv2d,
  kShuffle,
  kSlice,
  kRelu,
  kMaxPool,
  kAvgPool,
  kGlobalAvgPool,
  kFullyConnected,
  kAdd,
  kConcat,
  kBatchNorm,
};

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

struct ConvAttrs {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int groups = 1;
  bool winograd = false;
  int tile = 0;  // Winograd input tile extent n, when winograd is set

  bool depthwise() const { return groups > 1 && groups == in_channels && groups == out_channels; }
  bool pointwise() const { return kernel == 1; }
};

struct PoolAttrs {
  int window = 1;
  int stride = 1;
  int pad = 0;
};

struct Layer {
  std::string name;
  LayerKind kind = LayerKind::kInput;
  std::vector<std::string> inputs;

  ConvAttrs conv;
  PoolAttrs pool;
  int in_features = 0;   // fully-connected
  int out_features = 0;  // fully-connected
  std::vector<int> perm;  // shuffle: output channel c reads input channel perm[c]
  int slice_begin = 0;    // slice: channel range [begin, end)
  int slice_end = 0;
  double eps = 1e-5;      // batchnorm

  // Model-owner data. conv: weight [C_out, C_in/g, K, K], bias [C_out]; fc: weight [out, in],
  // bias [out]; batchnorm: gamma, beta, mean, var.
  std::map<std::string, RealTensor> params;
  // Optional pre-encoded weights; when present they override encoding of `params`.
  std::map<std::string, RingTensor> ring_params;

  bool has_multiplications() const {
    return kind == LayerKind::kConv2d || kind == LayerKind::kFullyConnected;
  }
};

struct GraphInfo {
  std::string backbone;
  std::string variant;
  FixedPointConfig fixed;
  std::optional<std::uint64_t> weight_seed;  // missing params are derived from this seed
};

/// DAG of layers stored in topological order; layers.front() is the single input node.
struct Graph {
  Shape input_shape;
  std::vector<Layer> layers;
  std::string output;
  GraphInfo info;

  std::optional<std::size_t> find(std::string_view name) const;
  const Layer& at(std::string_view name) const;
  Layer& at(std::string_view name);
  std::size_t index_of(std::string_view name) const;
};

struct LayerShape {
  std::string name;
  LayerKind kind;
  Shape shape;
};

/// Per-layer inferred shapes, or the first inconsistency. Never throws for graph defects.
struct ShapeReport {
  bool ok = true;
  std::string error;
  std::string layer;
  std::vector<LayerShape> shapes;
};

ShapeReport validate_shapes(const Graph& graph);
/// Inferred output shape of every layer (index-aligned with graph.layers); throws ShapeError.
std::vector<Shape> infer_shapes(const Graph& graph);

/// Folds every batchnorm into its producing conv / fully-connected layer. A graph without
/// batchnorm layers is returned unchanged; a graph without weights is folded structurally.
Graph fold_batchnorm(const Graph& graph);

/// Fills every missing parameter from graph.info.weight_seed (He-uniform weights, small biases,
/// well-conditioned batchnorm statistics). Deterministic per (seed, layer name).
void materialize_weights(Graph& graph);

/// Hex BLAKE2b digest of the public architecture (no weights).
std::string graph_hash(const Graph& graph);

std::string to_json(const Graph& graph, bool with_weights = true);
Graph graph_from_json(std::string_view text, const std::string& base_dir = ".");
Graph load_graph(const std::string& path);
void save_graph(const std::string& path, const Graph& graph, bool with_weights = true);

/// Incremental graph construction with shape tracking.
class GraphBuilder {
 public:
  explicit GraphBuilder(Shape input_shape);

  const Shape& shape_of(const std::string& name) const;
  std::int64_t channels(const std::string& name) const { return shape_of(name).at(1); }
  std::string unique(const std::string& prefix);

  std::string conv(const std::string& from, int out_channels, int kernel, int stride, int pad, int groups = 1,
                   const std::string& prefix = "conv");
  std::string batchnorm(const std::string& from, const std::string& prefix = "bn");
  std::string relu(const std::string& from, const std::string& prefix = "relu");
  std::string maxpool(const std::string& from, int window, int stride, int pad, const std::string& prefix = "maxpool");
  std::string avgpool(const std::string& from, int window, int stride, int pad = 0,
                      const std::string& prefix = "avgpool");
  std::string global_avgpool(const std::string& from, const std::string& prefix = "gap");
  std::string fully_connected(const std::string& from, int out_features, const std::string& prefix = "fc");
  std::string add(const std::string& a, const std::string& b, const std::string& prefix = "add");
  std::string concat(const std::vector<std::string>& parts, const std::string& prefix = "concat");
  std::string shuffle(const std::string& from, std::vector<int> perm, const std::string& prefix = "shuffle");
  std::string slice(const std::string& from, int begin, int end, const std::string& prefix = "slice");

  Graph finish(const std::string& output, GraphInfo info) &&;

 private:
  std::string push(Layer layer);

  Graph graph_;
  std::map<std::string, Shape> shapes_;
  std::map<std::string, int> counters_;
};

}  // namespace xconv
