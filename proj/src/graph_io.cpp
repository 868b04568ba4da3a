#include <sodium.h>

#include <filesystem>
#include <json.hpp>

#include "xconv/graph.hpp"
#include "xconv/io_util.hpp"

namespace xconv {
namespace {

using nlohmann::json;

constexpr const char* kFormat = "xconv2pc-graph/1";

json tensor_json(const RealTensor& t) {
  return json{{"shape", t.shape()}, {"data", std::vector<double>(t.values().begin(), t.values().end())}};
}

RealTensor tensor_from_json(const json& j, const std::string& where) {
  try {
    Shape shape = j.at("shape").get<Shape>();
    auto data = j.at("data").get<std::vector<double>>();
    if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
      throw ParseError(where + ": data length does not match shape");
    }
    RealTensor t(shape);
    std::copy(data.begin(), data.end(), t.values().begin());
    return t;
  } catch (const json::exception& e) {
    throw ParseError(where + ": " + e.what());
  }
}

std::string to_base64(std::string_view bytes) {
  std::string out(sodium_base64_encoded_len(bytes.size(), sodium_base64_VARIANT_ORIGINAL), '\0');
  sodium_bin2base64(out.data(), out.size(), reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(),
                    sodium_base64_VARIANT_ORIGINAL);
  out.resize(out.size() - 1);  // trailing NUL
  return out;
}

std::string from_base64(const std::string& text, const std::string& where) {
  std::string out(text.size(), '\0');
  std::size_t len = 0;
  if (sodium_base642bin(reinterpret_cast<unsigned char*>(out.data()), out.size(), text.data(), text.size(), nullptr,
                        &len, nullptr, sodium_base64_VARIANT_ORIGINAL) != 0) {
    throw ParseError(where + ": invalid base64");
  }
  out.resize(len);
  return out;
}

json layer_json(const Layer& l, bool with_weights) {
  json j{{"name", l.name}, {"kind", std::string(to_string(l.kind))}, {"inputs", l.inputs}};
  json attrs = json::object();
  switch (l.kind) {
    case LayerKind::kConv2d:
      attrs = {{"in_channels", l.conv.in_channels}, {"out_channels", l.conv.out_channels},
               {"kernel", l.conv.kernel},           {"stride", l.conv.stride},
               {"pad", l.conv.pad},                 {"groups", l.conv.groups},
               {"winograd", l.conv.winograd},       {"tile", l.conv.tile}};
      break;
    case LayerKind::kMaxPool:
    case LayerKind::kAvgPool:
      attrs = {{"window", l.pool.window}, {"stride", l.pool.stride}, {"pad", l.pool.pad}};
      break;
    case LayerKind::kFullyConnected:
      attrs = {{"in_features", l.in_features}, {"out_features", l.out_features}};
      break;
    case LayerKind::kShuffle:
      attrs = {{"perm", l.perm}};
      break;
    case LayerKind::kSlice:
      attrs = {{"begin", l.slice_begin}, {"end", l.slice_end}};
      break;
    case LayerKind::kBatchNorm:
      attrs = {{"eps", l.eps}};
      break;
    default:
      break;
  }
  j["attrs"] = attrs;
  if (with_weights) {
    if (!l.params.empty()) {
      json p = json::object();
      for (const auto& [k, t] : l.params) p[k] = tensor_json(t);
      j["params"] = p;
    }
    if (!l.ring_params.empty()) {
      json p = json::object();
      for (const auto& [k, t] : l.ring_params) p[k] = {{"rtv1_base64", to_base64(serialize(t))}};
      j["ring_params"] = p;
    }
  }
  return j;
}

json graph_json(const Graph& g, bool with_weights) {
  json j{{"format", kFormat},
         {"input_shape", g.input_shape},
         {"output", g.output},
         {"fixedpoint", {{"bitwidth", g.info.fixed.bitwidth}, {"scale", g.info.fixed.scale}}},
         {"meta", {{"backbone", g.info.backbone}, {"variant", g.info.variant}}}};
  if (with_weights && g.info.weight_seed) j["weights"] = {{"seed", *g.info.weight_seed}};
  json layers = json::array();
  for (const auto& l : g.layers) layers.push_back(layer_json(l, with_weights));
  j["layers"] = std::move(layers);
  return j;
}

template <typename T>
T attr(const json& attrs, const char* key, T fallback) {
  return attrs.contains(key) ? attrs.at(key).get<T>() : fallback;
}

Layer layer_from_json(const json& j, const std::string& base_dir) {
  Layer l;
  l.name = j.at("name").get<std::string>();
  l.kind = parse_layer_kind(j.at("kind").get<std::string>());
  if (j.contains("inputs")) l.inputs = j.at("inputs").get<std::vector<std::string>>();
  const json attrs = j.contains("attrs") ? j.at("attrs") : json::object();
  switch (l.kind) {
    case LayerKind::kConv2d:
      l.conv.in_channels = attrs.at("in_channels").get<int>();
      l.conv.out_channels = attrs.at("out_channels").get<int>();
      l.conv.kernel = attrs.at("kernel").get<int>();
      l.conv.stride = attr(attrs, "stride", 1);
      l.conv.pad = attr(attrs, "pad", 0);
      l.conv.groups = attr(attrs, "groups", 1);
      l.conv.winograd = attr(attrs, "winograd", false);
      l.conv.tile = attr(attrs, "tile", 0);
      break;
    case LayerKind::kMaxPool:
    case LayerKind::kAvgPool:
      l.pool.window = attrs.at("window").get<int>();
      l.pool.stride = attr(attrs, "stride", l.pool.window);
      l.pool.pad = attr(attrs, "pad", 0);
      break;
    case LayerKind::kFullyConnected:
      l.in_features = attrs.at("in_features").get<int>();
      l.out_features = attrs.at("out_features").get<int>();
      break;
    case LayerKind::kShuffle:
      l.perm = attrs.at("perm").get<std::vector<int>>();
      break;
    case LayerKind::kSlice:
      l.slice_begin = attrs.at("begin").get<int>();
      l.slice_end = attrs.at("end").get<int>();
      break;
    case LayerKind::kBatchNorm:
      l.eps = attr(attrs, "eps", 1e-5);
      break;
    default:
      break;
  }
  if (j.contains("params")) {
    for (const auto& [k, v] : j.at("params").items()) {
      l.params[k] = tensor_from_json(v, "layer '" + l.name + "' param '" + k + "'");
    }
  }
  if (j.contains("ring_params")) {
    for (const auto& [k, v] : j.at("ring_params").items()) {
      const std::string where = "layer '" + l.name + "' ring param '" + k + "'";
      if (v.contains("rtv1_base64")) {
        l.ring_params[k] = deserialize_ring(from_base64(v.at("rtv1_base64").get<std::string>(), where));
      } else if (v.contains("file")) {
        auto path = std::filesystem::path(base_dir) / v.at("file").get<std::string>();
        l.ring_params[k] = read_ring_file(path.string());
      } else {
        throw ParseError(where + ": expected 'rtv1_base64' or 'file'");
      }
    }
  }
  return l;
}

}  // namespace

std::string to_json(const Graph& graph, bool with_weights) { return graph_json(graph, with_weights).dump(1); }

Graph graph_from_json(std::string_view text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed graph JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  try {
    Graph g;
    g.input_shape = j.at("input_shape").get<Shape>();
    g.output = j.at("output").get<std::string>();
    if (j.contains("fixedpoint")) {
      g.info.fixed.bitwidth = j.at("fixedpoint").at("bitwidth").get<int>();
      g.info.fixed.scale = j.at("fixedpoint").at("scale").get<int>();
    }
    g.info.fixed.validate();
    if (j.contains("meta")) {
      g.info.backbone = j.at("meta").value("backbone", "");
      g.info.variant = j.at("meta").value("variant", "");
    }
    if (j.contains("weights") && j.at("weights").contains("seed")) {
      g.info.weight_seed = j.at("weights").at("seed").get<std::uint64_t>();
    }
    for (const auto& lj : j.at("layers")) g.layers.push_back(layer_from_json(lj, base_dir));
    return g;
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid graph document: ") + e.what());
  }
}

Graph load_graph(const std::string& path) {
  auto dir = std::filesystem::path(path).parent_path().string();
  return graph_from_json(read_file(path), dir.empty() ? "." : dir);
}

void save_graph(const std::string& path, const Graph& graph, bool with_weights) {
  write_file(path, to_json(graph, with_weights));
}

std::string graph_hash(const Graph& graph) {
  json j = graph_json(graph, false);
  j["meta"] = json::object();  // naming metadata does not change the computation
  const std::string canon = j.dump();
  unsigned char digest[32];
  crypto_generichash(digest, sizeof digest, reinterpret_cast<const unsigned char*>(canon.data()), canon.size(),
                     nullptr, 0);
  char hex[65];
  sodium_bin2hex(hex, sizeof hex, digest, sizeof digest);
  return hex;
}

}  // namespace xconv
