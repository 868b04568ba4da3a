#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "xconv/cells.hpp"
#include "xconv/graph.hpp"

namespace xconv {

enum class CostCategory { kConv, kOtherLinear, kNonlinear };
std::string_view to_string(CostCategory c);

/// Work of one layer in the units the secure engine consumes: multiplication triples,
/// ReLU elements, pairwise maxpool comparisons and truncated elements.
struct LayerCount {
  std::string layer;
  LayerKind kind = LayerKind::kInput;
  CostCategory category = CostCategory::kOtherLinear;
  std::int64_t mults = 0;
  std::int64_t relus = 0;
  std::int64_t comparisons = 0;
  std::int64_t truncations = 0;
};

/// Exact per-layer counts. Dense conv N*H_o*W_o*C_out*(C_in/g)*K^2, Winograd-tagged conv
/// N*T_h*T_w*n^2*C_out*(C_in/g), fully-connected N*in*out. Scaling by public constants
/// (average pooling, batchnorm) and data movement cost nothing. Throws ShapeError.
std::vector<LayerCount> count_mults(const Graph& graph);
std::int64_t total_mults(const std::vector<LayerCount>& counts);
std::int64_t total_mults(const Graph& graph);

struct CostProfile {
  std::string name = "paper";
  double bytes_per_mult = 1228.8;
  double bytes_per_relu = 0.0;
  double bytes_per_comparison = 0.0;
  double bytes_per_truncation = 0.0;

  /// Multiplication constant from the paper, nonlinear constants from this engine.
  static CostProfile standard(const FixedPointConfig& cfg = {});
  /// Every constant is this engine's exact per-party online payload.
  static CostProfile engine(const FixedPointConfig& cfg = {});
  void validate() const;
};

/// Exact per-party payload bytes of the engine's protocols, per element.
double engine_truncation_bytes(const FixedPointConfig& cfg);
double engine_comparison_bytes(const FixedPointConfig& cfg);
inline constexpr double kEngineBytesPerMult = 16.0;

struct LayerCostReport {
  std::string layer;
  std::string kind;  // layer kind, or "truncate" for the truncation that follows a layer
  std::int64_t mults = 0;
  double est_bytes = 0.0;
  std::optional<double> meas_bytes;
  CostCategory category = CostCategory::kOtherLinear;
};

struct CommEstimate {
  std::vector<LayerCostReport> rows;
  std::map<CostCategory, double> bytes;
  std::int64_t mults = 0;

  double total() const;
  double linear_share() const;           // (conv + other-linear) / total
  double conv_share_of_linear() const;   // conv / (conv + other-linear)
};

CommEstimate estimate_comm(const Graph& graph, const CostProfile& profile);

/// Fills meas_bytes from a per-(layer, op) byte table; truncation rows take op "trunc",
/// layer rows every other op of the same layer.
void merge_measured(std::vector<LayerCostReport>& rows,
                    const std::map<std::pair<std::string, std::string>, double>& measured);

enum class ReportFormat { kCsv, kJson };
ReportFormat parse_report_format(std::string_view name);
std::string emit_report(const std::vector<LayerCostReport>& rows, ReportFormat format);
std::vector<LayerCostReport> parse_report_json(std::string_view text);

/// Backbone letters D, R, R', M, S (and T for toynet).
std::string backbone_mnemonic(std::string_view backbone);
std::string variant_mnemonic(std::string_view backbone, CellVariant variant, bool winograd);

struct VariantRow {
  std::string mnemonic;
  std::string backbone;
  CellVariant variant = CellVariant::kDense;
  bool winograd = false;
  std::int64_t mults = 0;
  double est_bytes = 0.0;
  double mult_reduction = 1.0;  // baseline / this
  double byte_reduction = 1.0;
};

struct CompareOptions {
  std::vector<std::string> backbones;
  std::vector<CellVariant> variants;
  std::vector<bool> winograd{false};
  int input_size = 320;
  std::string baseline = "DD";
};

/// Table-3 style comparison. Throws UnsupportedError for unknown backbones or a baseline that is
/// not among the rows.
std::vector<VariantRow> compare_variants(const CompareOptions& options, const CostProfile& profile);
std::string emit_comparison(const std::vector<VariantRow>& rows, ReportFormat format);

}  // namespace xconv
