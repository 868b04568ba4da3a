#include "xconv/interpreter.hpp"

#include <cmath>

#include "xconv/winograd.hpp"

namespace xconv {
namespace {

RealTensor signed_values(const WordTensor& t, const FixedPointConfig& cfg) {
  RealTensor out(t.shape());
  for (std::int64_t i = 0; i < t.size(); ++i) out[i] = static_cast<double>(cfg.to_signed(t[i]));
  return out;
}

// The ring result is exact modulo 2^l; a floating shadow of the same integer computation tells
// whether the true value stayed inside the truncation bound. The margin dwarfs the shadow's
// rounding error.
void check_bound(const RealTensor& shadow, const FixedPointConfig& cfg, const Layer& layer) {
  const double bound = std::ldexp(1.0, cfg.bitwidth - 2) * (1.0 - std::ldexp(1.0, -20));
  for (std::int64_t i = 0; i < shadow.size(); ++i) {
    if (!(std::abs(shadow[i]) < bound)) {
      throw OverflowError("layer '" + layer.name + "': fixed-point accumulator leaves the 2^" +
                          std::to_string(cfg.bitwidth - 2) + " truncation bound at element " + std::to_string(i));
    }
  }
}

template <typename Scalar>
void add_channel_bias(Tensor<Scalar>& y, const Tensor<Scalar>& bias) {
  const auto channels = y.dim(1);
  const auto plane = y.size() / (y.dim(0) * channels);
  for (std::int64_t b = 0; b < y.dim(0); ++b)
    for (std::int64_t c = 0; c < channels; ++c) {
      y.data().segment((b * channels + c) * plane, plane) += bias[c];
    }
}

WordTensor encode_words(const RealTensor& t, const FixedPointConfig& cfg, int scale) {
  return encode_fixed(t, cfg, scale).words();
}

WordTensor ring_param(const Layer& l, const std::string& key, const FixedPointConfig& cfg, int scale) {
  const RingTensor& r = l.ring_params.at(key);
  if (r.config().bitwidth != cfg.bitwidth) {
    throw ShapeError("layer '" + l.name + "': ring parameter '" + key + "' has bitwidth " +
                     std::to_string(r.config().bitwidth));
  }
  const int shift = scale - r.config().scale;
  if (shift < 0) throw ShapeError("layer '" + l.name + "': ring parameter '" + key + "' has too many fraction bits");
  WordTensor w = r.words();
  for (auto& v : w.values()) v = cfg.reduce(v << shift);
  return w;
}

RealTensor real_param(const Layer& l, const std::string& key, const FixedPointConfig& cfg) {
  if (l.ring_params.count(key)) return decode_fixed(l.ring_params.at(key));
  (void)cfg;
  return l.params.at(key);
}

PreparedLayer prepare(const Layer& l, const Shape& in_shape, const FixedPointConfig& cfg) {
  PreparedLayer p;
  const int s = cfg.scale;
  switch (l.kind) {
    case LayerKind::kConv2d:
    case LayerKind::kFullyConnected: {
      p.truncates = true;
      if (l.kind == LayerKind::kConv2d && l.conv.winograd) {
        const auto& basis = winograd_basis_for_tile(l.conv.tile, l.conv.kernel);
        check_winograd_headroom(basis, cfg);
        p.weight = encode_words(winograd_filter_transform(real_param(l, "weight", cfg), basis), cfg, s);
      } else {
        p.weight = l.ring_params.count("weight") ? ring_param(l, "weight", cfg, s)
                                                 : encode_words(l.params.at("weight"), cfg, s);
      }
      const auto outputs = l.kind == LayerKind::kConv2d ? l.conv.out_channels : l.out_features;
      if (l.ring_params.count("bias")) {
        p.bias = ring_param(l, "bias", cfg, 2 * s);
      } else if (l.params.count("bias")) {
        p.bias = encode_words(l.params.at("bias"), cfg, 2 * s);
      } else {
        p.bias = WordTensor({outputs});
      }
      break;
    }
    case LayerKind::kAvgPool:
      if (l.pool.window > 1 || l.pool.pad > 0) {
        p.coefficient = encode_scalar(1.0 / (l.pool.window * l.pool.window), cfg, s);
        p.truncates = true;
      }
      break;
    case LayerKind::kGlobalAvgPool:
      p.coefficient = encode_scalar(1.0 / static_cast<double>(in_shape[2] * in_shape[3]), cfg, s);
      p.truncates = true;
      break;
    default:
      break;
  }
  return p;
}

// Shapes and public constants only.
PreparedLayer prepare_public(const Layer& l, const Shape& in_shape, const FixedPointConfig& cfg) {
  PreparedLayer p;
  if (l.kind == LayerKind::kConv2d) {
    const auto& c = l.conv;
    const auto cg = c.in_channels / c.groups;
    if (c.winograd) {
      const auto n = static_cast<std::int64_t>(c.tile);
      p.weight = WordTensor({n * n, c.out_channels, cg});
    } else {
      p.weight = WordTensor({c.out_channels, cg, c.kernel, c.kernel});
    }
    p.bias = WordTensor({c.out_channels});
    p.truncates = true;
  } else if (l.kind == LayerKind::kFullyConnected) {
    p.weight = WordTensor({l.out_features, l.in_features});
    p.bias = WordTensor({l.out_features});
    p.truncates = true;
  } else {
    p = prepare(l, in_shape, cfg);
  }
  return p;
}

WordTensor scale_words(const WordTensor& x, std::uint64_t c, const FixedPointConfig& cfg) {
  WordTensor out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = cfg.reduce(x[i] * c);
  return out;
}

RealTensor float_layer(const Layer& l, const std::vector<const RealTensor*>& in) {
  RealTensor out;
  if (local_layer(l, in, out)) return out;
  const RealTensor& x = *in[0];
  switch (l.kind) {
    case LayerKind::kConv2d: {
      const auto& c = l.conv;
      out = c.winograd ? winograd_conv2d(x, l.params.at("weight"), c, c.tile)
                       : conv2d(x, l.params.at("weight"), ConvParams{c.stride, c.pad, c.groups});
      if (l.params.count("bias")) add_channel_bias(out, l.params.at("bias"));
      return out;
    }
    case LayerKind::kFullyConnected:
      out = fully_connected(x, l.params.at("weight"));
      if (l.params.count("bias")) out.data() += l.params.at("bias").data().replicate(x.dim(0), 1);
      return out;
    case LayerKind::kRelu:
      return RealTensor(x.shape(), x.data().max(0.0));
    case LayerKind::kMaxPool: {
      Shape shape;
      const auto windows = pool_windows(x.shape(), l.pool.window, l.pool.stride, l.pool.pad, &shape);
      out = RealTensor(shape);
      for (std::size_t i = 0; i < windows.size(); ++i) {
        double m = x[windows[i][0]];
        for (auto j : windows[i]) m = std::max(m, x[j]);
        out[static_cast<std::int64_t>(i)] = m;
      }
      return out;
    }
    case LayerKind::kAvgPool:
      out = window_sum(x, l.pool.window, l.pool.stride, l.pool.pad);
      out.data() /= static_cast<double>(l.pool.window * l.pool.window);
      return out;
    case LayerKind::kGlobalAvgPool:
      out = global_sum(x);
      out.data() /= static_cast<double>(x.dim(2) * x.dim(3));
      return out;
    case LayerKind::kBatchNorm: {
      out = x;
      const auto channels = x.dim(1);
      const auto plane = x.size() / (x.dim(0) * channels);
      for (std::int64_t b = 0; b < x.dim(0); ++b)
        for (std::int64_t c = 0; c < channels; ++c) {
          const double scale = l.params.at("gamma")[c] / std::sqrt(l.params.at("var")[c] + l.eps);
          auto seg = out.data().segment((b * channels + c) * plane, plane);
          seg = (seg - l.params.at("mean")[c]) * scale + l.params.at("beta")[c];
        }
      return out;
    }
    default:
      throw UnsupportedError("layer '" + l.name + "': no float kernel for " + std::string(to_string(l.kind)));
  }
}

}  // namespace

std::vector<std::size_t> last_uses(const Graph& graph) {
  std::map<std::string_view, std::size_t> index;
  std::vector<std::size_t> last(graph.layers.size(), 0);
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    index.emplace(graph.layers[i].name, i);
    for (const auto& src : graph.layers[i].inputs) last[index.at(src)] = i;
  }
  last[index.at(graph.output)] = graph.layers.size();
  return last;
}

FixedProgram compile_fixed(const Graph& graph, bool with_weights) {
  FixedProgram p;
  Graph source = graph;
  if (!with_weights) {
    source.info.weight_seed.reset();
    for (auto& l : source.layers) {
      l.params.clear();
      l.ring_params.clear();
    }
  }
  p.graph = fold_batchnorm(source);
  if (with_weights) materialize_weights(p.graph);
  p.cfg = p.graph.info.fixed;
  p.cfg.validate();
  p.shapes = infer_shapes(p.graph);
  const auto& layers = p.graph.layers;
  std::map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    index.emplace(layers[i].name, i);
    const Shape in_shape = layers[i].inputs.empty() ? Shape{} : p.shapes[index.at(layers[i].inputs[0])];
    p.layers.push_back(with_weights ? prepare(layers[i], in_shape, p.cfg) : prepare_public(layers[i], in_shape, p.cfg));
  }
  return p;
}

RealTensor infer_float(const Graph& graph, const RealTensor& input) {
  Graph g = graph;
  materialize_weights(g);
  infer_shapes(g);
  if (input.shape() != g.input_shape) {
    throw ShapeError("input shape " + to_string(input.shape()) + " does not match graph input " +
                     to_string(g.input_shape));
  }
  return execute_graph<RealTensor>(g, input, [](std::size_t, const Layer& l, const std::vector<const RealTensor*>& in) {
    return float_layer(l, in);
  });
}

std::uint64_t fixed_relu(std::uint64_t v, const FixedPointConfig& cfg) { return cfg.to_signed(v) >= 0 ? v : 0; }

WordTensor fixed_maxpool(const WordTensor& x, const PoolAttrs& pool, const FixedPointConfig& cfg) {
  Shape shape;
  const auto windows = pool_windows(x.shape(), pool.window, pool.stride, pool.pad, &shape);
  WordTensor out(shape);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    std::uint64_t m = x[windows[i][0]];
    for (std::size_t j = 1; j < windows[i].size(); ++j) {
      m = cfg.reduce(m + fixed_relu(cfg.reduce(x[windows[i][j]] - m), cfg));
    }
    out[static_cast<std::int64_t>(i)] = m;
  }
  return out;
}

RingTensor infer_fixed(const FixedProgram& program, const RingTensor& input) {
  const auto& cfg = program.cfg;
  if (input.config() != cfg) throw ShapeError("input fixed-point config does not match the program");
  if (input.shape() != program.graph.input_shape) {
    throw ShapeError("input shape " + to_string(input.shape()) + " does not match graph input " +
                     to_string(program.graph.input_shape));
  }
  WordTensor out = execute_graph<WordTensor>(
      program.graph, input.words(), [&](std::size_t i, const Layer& l, const std::vector<const WordTensor*>& in) {
        WordTensor y;
        if (local_layer(l, in, y, cfg.mask())) return y;
        const WordTensor& x = *in[0];
        const PreparedLayer& p = program.layers[i];
        RealTensor shadow;
        switch (l.kind) {
          case LayerKind::kConv2d: {
            const auto& c = l.conv;
            if (c.winograd) {
              y = winograd_conv2d_fixed(x, p.weight, c, c.tile, cfg);
              const auto g = winograd_geometry(x.shape(), c, c.tile);
              const auto& basis = winograd_basis_for_tile(c.tile, c.kernel);
              shadow = winograd_output_transform<double>(
                  winograd_multiply(signed_values(p.weight, cfg),
                                    winograd_input_transform<double>(signed_values(x, cfg), g, basis.BT_real), g),
                  g, basis.AT_real);
            } else {
              const ConvParams params{c.stride, c.pad, c.groups};
              y = conv2d(x, p.weight, params);
              shadow = conv2d(signed_values(x, cfg), signed_values(p.weight, cfg), params);
            }
            add_channel_bias(y, p.bias);
            add_channel_bias(shadow, signed_values(p.bias, cfg));
            break;
          }
          case LayerKind::kFullyConnected:
            y = fully_connected(x, p.weight);
            y.data() += p.bias.data().replicate(x.dim(0), 1);
            shadow = fully_connected(signed_values(x, cfg), signed_values(p.weight, cfg));
            shadow.data() += signed_values(p.bias, cfg).data().replicate(x.dim(0), 1);
            break;
          case LayerKind::kRelu:
            y = WordTensor(x.shape());
            for (std::int64_t j = 0; j < x.size(); ++j) y[j] = fixed_relu(x[j], cfg);
            return y;
          case LayerKind::kMaxPool:
            return fixed_maxpool(x, l.pool, cfg);
          case LayerKind::kAvgPool:
            y = scale_words(window_sum(x, l.pool.window, l.pool.stride, l.pool.pad), p.coefficient, cfg);
            shadow = window_sum(signed_values(x, cfg), l.pool.window, l.pool.stride, l.pool.pad);
            shadow.data() *= static_cast<double>(cfg.to_signed(p.coefficient));
            break;
          case LayerKind::kGlobalAvgPool:
            y = scale_words(global_sum(x), p.coefficient, cfg);
            shadow = global_sum(signed_values(x, cfg));
            shadow.data() *= static_cast<double>(cfg.to_signed(p.coefficient));
            break;
          default:
            throw UnsupportedError("layer '" + l.name + "': " + std::string(to_string(l.kind)) +
                                   " has no fixed-point kernel (fold batchnorm first)");
        }
        reduce_in_place(y, cfg);
        check_bound(shadow, cfg, l);
        return truncate_signed(y, cfg.scale, cfg);
      });
  return RingTensor(std::move(out), cfg);
}

RingTensor infer_fixed(const Graph& graph, const RealTensor& input) {
  const FixedProgram program = compile_fixed(graph);
  return infer_fixed(program, encode_fixed(input, program.cfg));
}

RealTensor infer_clear(const Graph& graph, const RealTensor& input, InferMode mode) {
  if (mode == InferMode::kFloat) return infer_float(graph, input);
  return decode_fixed(infer_fixed(graph, input));
}

}  // namespace xconv
