#include "xconv/cost.hpp"

#include <algorithm>
#include <json.hpp>
#include <sstream>

#include "xconv/rewrite.hpp"
#include "xconv/secure/protocol.hpp"
#include "xconv/winograd.hpp"
#include "xconv/zoo.hpp"

namespace xconv {
namespace {

CostCategory category_of(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return CostCategory::kConv;
    case LayerKind::kRelu:
    case LayerKind::kMaxPool: return CostCategory::kNonlinear;
    default: return CostCategory::kOtherLinear;
  }
}

CostCategory parse_category(std::string_view name) {
  for (auto c : {CostCategory::kConv, CostCategory::kOtherLinear, CostCategory::kNonlinear})
    if (to_string(c) == name) return c;
  throw ParseError("unknown cost category '" + std::string(name) + "'");
}

double and_bits(int k) {
  double bits = 0;
  for (int w : secure::comparison_and_widths(k)) bits += 2.0 * w;
  return bits;
}

std::string csv_number(double v) {
  std::ostringstream out;
  out.precision(15);
  out << v;
  return out.str();
}

}  // namespace

std::string_view to_string(CostCategory c) {
  switch (c) {
    case CostCategory::kConv: return "conv";
    case CostCategory::kOtherLinear: return "other-linear";
    case CostCategory::kNonlinear: return "nonlinear";
  }
  return "?";
}

std::vector<LayerCount> count_mults(const Graph& graph) {
  const auto shapes = infer_shapes(graph);
  std::map<std::string_view, std::size_t> index;
  std::vector<LayerCount> out;
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    const Layer& l = graph.layers[i];
    index.emplace(l.name, i);
    if (l.kind == LayerKind::kInput) continue;
    const Shape& in = shapes[index.at(l.inputs.at(0))];
    const Shape& y = shapes[i];
    LayerCount c{l.name, l.kind, category_of(l.kind)};
    switch (l.kind) {
      case LayerKind::kConv2d: {
        const auto& cv = l.conv;
        const std::int64_t cg = cv.in_channels / cv.groups;
        if (cv.winograd) {
          const auto g = winograd_geometry(in, cv, cv.tile);
          c.mults = g.products();
        } else {
          c.mults = y[0] * y[2] * y[3] * cv.out_channels * cg * cv.kernel * cv.kernel;
        }
        c.truncations = numel(y);
        break;
      }
      case LayerKind::kFullyConnected:
        c.mults = y[0] * static_cast<std::int64_t>(l.in_features) * l.out_features;
        c.truncations = numel(y);
        break;
      case LayerKind::kRelu:
        c.relus = numel(y);
        break;
      case LayerKind::kMaxPool:
        c.comparisons = numel(y) * (static_cast<std::int64_t>(l.pool.window) * l.pool.window - 1);
        break;
      case LayerKind::kAvgPool:
        if (l.pool.window > 1 || l.pool.pad > 0) c.truncations = numel(y);
        break;
      case LayerKind::kGlobalAvgPool:
        c.truncations = numel(y);
        break;
      default:
        break;
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::int64_t total_mults(const std::vector<LayerCount>& counts) {
  std::int64_t total = 0;
  for (const auto& c : counts) total += c.mults;
  return total;
}

std::int64_t total_mults(const Graph& graph) { return total_mults(count_mults(graph)); }

double engine_truncation_bytes(const FixedPointConfig& cfg) { return 8.0 + (and_bits(cfg.scale) + 1.0) / 8.0; }

double engine_comparison_bytes(const FixedPointConfig& cfg) {
  return 8.0 + (and_bits(cfg.bitwidth - 1) + 1.0) / 8.0 + kEngineBytesPerMult;
}

CostProfile CostProfile::standard(const FixedPointConfig& cfg) {
  CostProfile p;
  p.name = "standard";
  p.bytes_per_relu = engine_comparison_bytes(cfg);
  p.bytes_per_comparison = engine_comparison_bytes(cfg);
  p.bytes_per_truncation = engine_truncation_bytes(cfg);
  return p;
}

CostProfile CostProfile::engine(const FixedPointConfig& cfg) {
  CostProfile p = standard(cfg);
  p.name = "engine";
  p.bytes_per_mult = kEngineBytesPerMult;
  return p;
}

void CostProfile::validate() const {
  if (bytes_per_mult < 0 || bytes_per_relu < 0 || bytes_per_comparison < 0 || bytes_per_truncation < 0) {
    throw UnsupportedError("cost profile '" + name + "' has a negative constant");
  }
}

double CommEstimate::total() const {
  double t = 0;
  for (const auto& [k, v] : bytes) t += v;
  return t;
}

double CommEstimate::linear_share() const {
  const double t = total();
  if (t == 0) return 0;
  auto get = [&](CostCategory c) { return bytes.count(c) ? bytes.at(c) : 0.0; };
  return (get(CostCategory::kConv) + get(CostCategory::kOtherLinear)) / t;
}

double CommEstimate::conv_share_of_linear() const {
  auto get = [&](CostCategory c) { return bytes.count(c) ? bytes.at(c) : 0.0; };
  const double linear = get(CostCategory::kConv) + get(CostCategory::kOtherLinear);
  return linear == 0 ? 0 : get(CostCategory::kConv) / linear;
}

CommEstimate estimate_comm(const Graph& graph, const CostProfile& profile) {
  profile.validate();
  CommEstimate est;
  for (auto c : {CostCategory::kConv, CostCategory::kOtherLinear, CostCategory::kNonlinear}) est.bytes[c] = 0;
  for (const auto& c : count_mults(graph)) {
    LayerCostReport row{c.layer, std::string(to_string(c.kind)), c.mults, 0.0, std::nullopt, c.category};
    row.est_bytes = c.mults * profile.bytes_per_mult + c.relus * profile.bytes_per_relu +
                    c.comparisons * profile.bytes_per_comparison;
    est.mults += c.mults;
    est.bytes[row.category] += row.est_bytes;
    est.rows.push_back(row);
    if (c.truncations > 0) {
      LayerCostReport t{c.layer, "truncate", 0, c.truncations * profile.bytes_per_truncation, std::nullopt,
                        CostCategory::kNonlinear};
      est.bytes[t.category] += t.est_bytes;
      est.rows.push_back(t);
    }
  }
  return est;
}

void merge_measured(std::vector<LayerCostReport>& rows,
                    const std::map<std::pair<std::string, std::string>, double>& measured) {
  for (auto& row : rows) {
    std::optional<double> sum;
    for (const auto& [key, bytes] : measured) {
      if (key.first != row.layer) continue;
      const bool trunc_op = key.second == "trunc";
      if (trunc_op == (row.kind == "truncate")) sum = sum.value_or(0.0) + bytes;
    }
    row.meas_bytes = sum;
  }
}

ReportFormat parse_report_format(std::string_view name) {
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "json") return ReportFormat::kJson;
  throw UnsupportedError("unknown report format '" + std::string(name) + "' (csv or json)");
}

std::string emit_report(const std::vector<LayerCostReport>& rows, ReportFormat format) {
  if (format == ReportFormat::kJson) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) {
      j.push_back({{"layer", r.layer},
                   {"kind", r.kind},
                   {"mults", r.mults},
                   {"est_bytes", r.est_bytes},
                   {"meas_bytes", r.meas_bytes ? nlohmann::json(*r.meas_bytes) : nlohmann::json(nullptr)},
                   {"category", std::string(to_string(r.category))}});
    }
    return j.dump(1);
  }
  std::string out = "layer,kind,mults,est_bytes,meas_bytes,category\n";
  for (const auto& r : rows) {
    out += r.layer + ',' + r.kind + ',' + std::to_string(r.mults) + ',' + csv_number(r.est_bytes) + ',' +
           (r.meas_bytes ? csv_number(*r.meas_bytes) : "") + ',' + std::string(to_string(r.category)) + '\n';
  }
  return out;
}

std::vector<LayerCostReport> parse_report_json(std::string_view text) {
  try {
    std::vector<LayerCostReport> rows;
    for (const auto& j : nlohmann::json::parse(text)) {
      LayerCostReport r;
      r.layer = j.at("layer").get<std::string>();
      r.kind = j.at("kind").get<std::string>();
      r.mults = j.at("mults").get<std::int64_t>();
      r.est_bytes = j.at("est_bytes").get<double>();
      if (!j.at("meas_bytes").is_null()) r.meas_bytes = j.at("meas_bytes").get<double>();
      r.category = parse_category(j.at("category").get<std::string>());
      rows.push_back(std::move(r));
    }
    return rows;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid cost report: ") + e.what());
  }
}

std::string backbone_mnemonic(std::string_view backbone) {
  if (backbone == "densenet121") return "D";
  if (backbone == "resnet50") return "R";
  if (backbone == "resnet18") return "R'";
  if (backbone == "mobilenetv3l") return "M";
  if (backbone == "shufflenetv2") return "S";
  if (backbone == "toynet") return "T";
  throw UnsupportedError("unsupported backbone '" + std::string(backbone) + "'");
}

std::string variant_mnemonic(std::string_view backbone, CellVariant variant, bool winograd) {
  return backbone_mnemonic(backbone) + mnemonic(variant) + (winograd ? "W" : "");
}

std::vector<VariantRow> compare_variants(const CompareOptions& options, const CostProfile& profile) {
  std::vector<VariantRow> rows;
  for (const auto& backbone : options.backbones)
    for (auto variant : options.variants)
      for (bool wino : options.winograd) {
        Graph g = model_zoo(backbone, variant, options.input_size);
        if (wino) g = rewrite_winograd(g).graph;
        const auto est = estimate_comm(g, profile);
        rows.push_back({variant_mnemonic(backbone, variant, wino), backbone, variant, wino, est.mults, est.total()});
      }
  auto base = std::find_if(rows.begin(), rows.end(), [&](const VariantRow& r) { return r.mnemonic == options.baseline; });
  if (base == rows.end()) {
    // The baseline may be outside the requested grid; evaluate it on its own.
    const VariantRow* found = nullptr;
    for (const auto& backbone : zoo_backbones()) {
      for (auto v : {CellVariant::kDense, CellVariant::kFactorized, CellVariant::kShuffle, CellVariant::kXOp})
        for (bool wino : {false, true}) {
          if (variant_mnemonic(backbone, v, wino) != options.baseline) continue;
          Graph g = model_zoo(backbone, v, options.input_size);
          if (wino) g = rewrite_winograd(g).graph;
          const auto est = estimate_comm(g, profile);
          rows.insert(rows.begin(), VariantRow{options.baseline, backbone, v, wino, est.mults, est.total()});
          found = &rows.front();
        }
    }
    if (!found) throw UnsupportedError("baseline '" + options.baseline + "' is not a known mnemonic");
    base = rows.begin();
  }
  const double base_mults = static_cast<double>(base->mults), base_bytes = base->est_bytes;
  for (auto& r : rows) {
    r.mult_reduction = base_mults / static_cast<double>(r.mults);
    r.byte_reduction = base_bytes / r.est_bytes;
  }
  return rows;
}

std::string emit_comparison(const std::vector<VariantRow>& rows, ReportFormat format) {
  if (format == ReportFormat::kJson) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) {
      j.push_back({{"model", r.mnemonic},
                   {"backbone", r.backbone},
                   {"variant", std::string(to_string(r.variant))},
                   {"winograd", r.winograd},
                   {"mults", r.mults},
                   {"est_bytes", r.est_bytes},
                   {"mult_reduction", r.mult_reduction},
                   {"byte_reduction", r.byte_reduction}});
    }
    return j.dump(1);
  }
  std::string out = "model,backbone,variant,winograd,mults,est_bytes,mult_reduction,byte_reduction\n";
  for (const auto& r : rows) {
    out += r.mnemonic + ',' + r.backbone + ',' + std::string(to_string(r.variant)) + ',' + (r.winograd ? "1" : "0") +
           ',' + std::to_string(r.mults) + ',' + csv_number(r.est_bytes) + ',' + csv_number(r.mult_reduction) + ',' +
           csv_number(r.byte_reduction) + '\n';
  }
  return out;
}

}  // namespace xconv
