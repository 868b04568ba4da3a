#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xconv/graph.hpp"
#include "xconv/winograd.hpp"

namespace xconv {

struct RewriteOptions {
  std::vector<int> tiles{4, 6};
  // When set, only these layers may be rewritten; others are skipped as "not-allowed".
  std::optional<std::set<std::string>> allow;
};

/// One row of the tiling report. Counts are per (input, output) channel pair on the height axis.
struct TilingRow {
  std::string layer;
  bool eligible = false;
  std::string reason;  // stride | kernel | groups | not-allowed; empty when rewritten
  int n = 0;
  std::int64_t tiles = 0;
  std::int64_t beta1 = 0;
  std::int64_t beta2 = 0;
  std::int64_t dense = 0;
  double gamma = 0.0;
};

struct RewriteResult {
  Graph graph;
  std::vector<TilingRow> report;
  int rewritten = 0;
};

/// Why a convolution cannot take the Winograd path, or empty when it can.
std::string winograd_ineligibility(const ConvAttrs& conv);

/// Tags every eligible convolution with winograd and a tile from choose_tile.
RewriteResult rewrite_winograd(const Graph& graph, const RewriteOptions& options = {});

std::string tiling_report_json(const std::vector<TilingRow>& rows);
std::string tiling_report_csv(const std::vector<TilingRow>& rows);

}  // namespace xconv
