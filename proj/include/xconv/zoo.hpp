#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "xconv/cells.hpp"
#include "xconv/graph.hpp"

namespace xconv {

inline constexpr std::uint64_t kZooSeed = 20230101;
inline constexpr int kZooClasses = 5;

/// Supported backbones: densenet121, resnet50, resnet18, mobilenetv3l, shufflenetv2, toynet.
const std::vector<std::string>& zoo_backbones();

/// Backbone x variant network at input_size x input_size (RGB, batch 1). Layers carry no
/// parameters until materialize_weights() draws them from the graph's weight seed.
/// Throws UnsupportedError for unknown backbones.
Graph model_zoo(std::string_view backbone, CellVariant variant, int input_size = 320,
                std::uint64_t seed = kZooSeed);

/// Parses "backbone:variant:size" (size optional, default 320).
Graph model_zoo_spec(std::string_view spec, std::uint64_t seed = kZooSeed);

/// First bottleneck of ResNet-50's first stage (64 -> 64 -> 256, K = 3) on the stride-2
/// stem output of a 320 x 320 image (160 x 160), projection shortcut excluded.
CellDims resnet50_stage1_dims();
inline constexpr int kResnet50Stage1Extent = 160;

}  // namespace xconv
