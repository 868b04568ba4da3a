#include "xconv/rewrite.hpp"

#include <json.hpp>
#include <sstream>

namespace xconv {

std::string winograd_ineligibility(const ConvAttrs& c) {
  if (c.stride != 1) return "stride";
  if (c.kernel < 2 || c.kernel == 7) return "kernel";
  if (c.groups != 1 && !c.depthwise()) return "groups";
  try {
    winograd_basis(kDefaultTiles[0] - c.kernel + 1, c.kernel);
  } catch (const UnsupportedError&) {
    return "kernel";
  }
  return {};
}

RewriteResult rewrite_winograd(const Graph& graph, const RewriteOptions& options) {
  RewriteResult result{graph, {}, 0};
  const auto shapes = infer_shapes(graph);
  for (std::size_t i = 0; i < result.graph.layers.size(); ++i) {
    Layer& l = result.graph.layers[i];
    if (l.kind != LayerKind::kConv2d) continue;
    TilingRow row;
    row.layer = l.name;
    row.reason = winograd_ineligibility(l.conv);
    if (row.reason.empty() && options.allow && !options.allow->count(l.name)) row.reason = "not-allowed";
    row.eligible = row.reason.empty();
    if (row.eligible) {
      std::vector<int> usable;
      for (int n : options.tiles) {
        if (n > l.conv.kernel) {
          try {
            winograd_basis_for_tile(n, l.conv.kernel);
            usable.push_back(n);
          } catch (const UnsupportedError&) {
          }
        }
      }
      if (usable.empty()) {
        row.eligible = false;
        row.reason = "kernel";
      } else {
        const Shape& out = shapes[i];
        const int n = choose_tile(std::max(out[2], out[3]), l.conv.kernel, usable);
        const auto counts = mult_counts(out[2], l.conv.kernel, n);
        row.n = n;
        row.tiles = counts.tiles;
        row.beta1 = counts.beta1;
        row.beta2 = counts.beta2;
        row.dense = counts.dense;
        row.gamma = counts.gamma;
        l.conv.winograd = true;
        l.conv.tile = n;
        ++result.rewritten;
      }
    }
    result.report.push_back(std::move(row));
  }
  return result;
}

std::string tiling_report_json(const std::vector<TilingRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"layer", r.layer},
                 {"eligible", r.eligible},
                 {"reason", r.reason},
                 {"n", r.n},
                 {"T", r.tiles},
                 {"beta1", r.beta1},
                 {"beta2", r.beta2},
                 {"dense", r.dense},
                 {"gamma", r.gamma}});
  }
  return j.dump(1);
}

std::string tiling_report_csv(const std::vector<TilingRow>& rows) {
  std::ostringstream out;
  out << "layer,eligible,reason,n,T,beta1,beta2,dense,gamma\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.layer << ',' << (r.eligible ? 1 : 0) << ',' << r.reason << ',' << r.n << ',' << r.tiles << ','
        << r.beta1 << ',' << r.beta2 << ',' << r.dense << ',' << r.gamma << '\n';
  }
  return out.str();
}

}  // namespace xconv
