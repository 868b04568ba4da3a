#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "xconv/cells.hpp"
#include "xconv/graph.hpp"
#include "xconv/interpreter.hpp"
#include "xconv/zoo.hpp"

namespace xconv {
namespace {

Graph conv_bn_graph(std::mt19937_64& gen, bool bn_is_output) {
  GraphBuilder b({1, 3, 8, 8});
  auto c = b.conv("input", 4, 3, 1, 1);
  auto n = b.batchnorm(c);
  std::string out = bn_is_output ? n : b.relu(n);
  Graph g = std::move(b).finish(out, GraphInfo{});
  auto& conv = g.at(c);
  conv.params["weight"] = testing::random_real({4, 3, 3, 3}, gen);
  conv.params["bias"] = testing::random_real({4}, gen);
  auto& bn = g.at(n);
  bn.params["gamma"] = testing::random_real({4}, gen, 0.5, 1.5);
  bn.params["beta"] = testing::random_real({4}, gen);
  bn.params["mean"] = testing::random_real({4}, gen);
  bn.params["var"] = testing::random_real({4}, gen, 0.2, 2.0);
  return g;
}

TEST(GraphShapes, BuilderTracksShapes) {
  GraphBuilder b({1, 3, 32, 32});
  auto c = b.conv("input", 16, 3, 2, 1);
  EXPECT_EQ(b.shape_of(c), (Shape{1, 16, 16, 16}));
  auto p = b.maxpool(c, 3, 2, 1);
  EXPECT_EQ(b.shape_of(p), (Shape{1, 16, 8, 8}));
  auto s = b.slice(p, 4, 12);
  EXPECT_EQ(b.shape_of(s), (Shape{1, 8, 8, 8}));
  auto cat = b.concat({p, s});
  EXPECT_EQ(b.shape_of(cat), (Shape{1, 24, 8, 8}));
  auto gap = b.global_avgpool(cat);
  EXPECT_EQ(b.shape_of(gap), (Shape{1, 24, 1, 1}));
  auto fc = b.fully_connected(gap, 7);
  EXPECT_EQ(b.shape_of(fc), (Shape{1, 7}));
  Graph g = std::move(b).finish(fc, GraphInfo{});
  const auto shapes = infer_shapes(g);
  EXPECT_EQ(shapes.back(), (Shape{1, 7}));
  EXPECT_TRUE(validate_shapes(g).ok);
}

TEST(GraphShapes, ReportsFirstInconsistency) {
  GraphBuilder b({1, 4, 8, 8});
  auto c = b.conv("input", 4, 3, 1, 1);
  Graph g = std::move(b).finish(c, GraphInfo{});
  g.at(c).conv.in_channels = 5;
  const auto report = validate_shapes(g);
  EXPECT_FALSE(report.ok);
  EXPECT_EQ(report.layer, c);
  EXPECT_THROW(infer_shapes(g), ShapeError);
}

TEST(GraphShapes, RejectsNonBijectiveShuffle) {
  GraphBuilder b({1, 4, 2, 2});
  auto s = b.shuffle("input", {0, 1, 2, 3});
  Graph g = std::move(b).finish(s, GraphInfo{});
  g.at(s).perm = {0, 0, 2, 3};
  EXPECT_FALSE(validate_shapes(g).ok);
}

TEST(GraphShapes, RejectsUnknownInputAndAddMismatch) {
  GraphBuilder b({1, 4, 8, 8});
  auto c = b.conv("input", 8, 1, 1, 0);
  auto a = b.add(c, c);
  Graph g = std::move(b).finish(a, GraphInfo{});
  g.at(a).inputs[1] = "input";
  EXPECT_FALSE(validate_shapes(g).ok);
  g.at(a).inputs[1] = "nowhere";
  EXPECT_FALSE(validate_shapes(g).ok);
}

TEST(GraphJson, RoundTripPreservesEverything) {
  std::mt19937_64 gen(1);
  for (auto variant : {CellVariant::kDense, CellVariant::kFactorized, CellVariant::kShuffle, CellVariant::kXOp}) {
    Graph g = cell_graph(variant, CellDims{8, 8, 16, 3, 1, true, false}, 8, 42, CellOptions{true, true});
    materialize_weights(g);
    const auto text = to_json(g);
    Graph back = graph_from_json(text);
    EXPECT_EQ(to_json(back), text) << to_string(variant);
    EXPECT_EQ(graph_hash(back), graph_hash(g));
  }
}

TEST(GraphJson, RingParamsRoundTrip) {
  std::mt19937_64 gen(2);
  Graph g = conv_bn_graph(gen, false);
  FixedPointConfig cfg;
  WordTensor w({4, 3, 3, 3});
  for (auto& v : w.values()) v = gen() & cfg.mask();
  g.layers[1].ring_params["weight"] = RingTensor(w, cfg);
  Graph back = graph_from_json(to_json(g));
  EXPECT_EQ(back.layers[1].ring_params.at("weight"), g.layers[1].ring_params.at("weight"));
}

TEST(GraphJson, MalformedInputReportsByteOffset) {
  try {
    graph_from_json("{\"input_shape\": [1, 3, 8, 8],, }");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos);
  }
  EXPECT_THROW(graph_from_json("{\"output\": \"x\"}"), ParseError);
  EXPECT_THROW(graph_from_json(R"({"input_shape":[1],"output":"a","layers":[{"name":"a","kind":"warp"}]})"),
               ParseError);
}

TEST(GraphHash, IgnoresWeightsButNotArchitecture) {
  Graph a = model_zoo("toynet", CellVariant::kDense, 16);
  Graph b = a;
  materialize_weights(b);
  EXPECT_EQ(graph_hash(a), graph_hash(b));
  b.layers[1].conv.pad = 0;
  EXPECT_NE(graph_hash(a), graph_hash(b));
}

TEST(BatchNormFold, MatchesDirectEvaluation) {
  std::mt19937_64 gen(3);
  for (bool bn_out : {false, true}) {
    Graph g = conv_bn_graph(gen, bn_out);
    Graph folded = fold_batchnorm(g);
    for (const auto& l : folded.layers) EXPECT_NE(l.kind, LayerKind::kBatchNorm);
    const auto x = testing::random_real({1, 3, 8, 8}, gen);
    const auto ref = infer_float(g, x);
    const auto got = infer_float(folded, x);
    ASSERT_EQ(ref.shape(), got.shape());
    EXPECT_LT(testing::max_rel_error(got, ref), 1e-12);
  }
}

TEST(BatchNormFold, IdentityLeavesWeights) {
  std::mt19937_64 gen(4);
  Graph g = conv_bn_graph(gen, false);
  auto& bn = g.layers[2].params;
  bn["gamma"] = RealTensor::constant({4}, 1.0);
  bn["beta"] = RealTensor({4});
  bn["mean"] = RealTensor({4});
  bn["var"] = RealTensor::constant({4}, 1.0);
  g.layers[2].eps = 0.0;
  const Graph folded = fold_batchnorm(g);
  EXPECT_EQ(folded.layers[1].params.at("weight"), g.layers[1].params.at("weight"));
  EXPECT_EQ(folded.layers[1].params.at("bias"), g.layers[1].params.at("bias"));
}

TEST(BatchNormFold, OrphanBatchNormRejected) {
  GraphBuilder b({1, 4, 8, 8});
  auto r = b.relu("input");
  auto n = b.batchnorm(r);
  Graph g = std::move(b).finish(n, GraphInfo{});
  EXPECT_THROW(fold_batchnorm(g), ShapeError);
}

TEST(BatchNormFold, NoBatchNormIsIdentity) {
  Graph g = model_zoo("toynet", CellVariant::kDense, 16);
  EXPECT_EQ(to_json(fold_batchnorm(g)), to_json(g));
}

TEST(Weights, MaterializeIsDeterministicPerSeed) {
  Graph a = model_zoo("toynet", CellVariant::kDense, 16, 5);
  Graph b = model_zoo("toynet", CellVariant::kDense, 16, 5);
  Graph c = model_zoo("toynet", CellVariant::kDense, 16, 6);
  materialize_weights(a);
  materialize_weights(b);
  materialize_weights(c);
  EXPECT_EQ(a.layers[1].params.at("weight"), b.layers[1].params.at("weight"));
  EXPECT_FALSE(a.layers[1].params.at("weight") == c.layers[1].params.at("weight"));
}

TEST(Zoo, EveryBackboneAndVariantValidates) {
  for (const auto& bb : zoo_backbones()) {
    for (auto v : {CellVariant::kDense, CellVariant::kFactorized, CellVariant::kShuffle, CellVariant::kXOp}) {
      Graph g = model_zoo(bb, v, bb == "toynet" ? 16 : 64);
      const auto report = validate_shapes(g);
      EXPECT_TRUE(report.ok) << bb << "/" << to_string(v) << ": " << report.error;
    }
  }
  EXPECT_THROW(model_zoo("vgg", CellVariant::kDense), UnsupportedError);
}

TEST(Cells, ShuffleNeedsEvenChannels) {
  EXPECT_THROW(cell_graph(CellVariant::kShuffle, CellDims{3, 3, 8, 3, 1, false, true}, 8, 1), ShapeError);
}

TEST(Cells, InterleavePermutationIsBijection) {
  const auto p = interleave_permutation(8, 2);
  EXPECT_EQ(p, (std::vector<int>{0, 4, 1, 5, 2, 6, 3, 7}));
  EXPECT_TRUE(is_bijection(p));
}

}  // namespace
}  // namespace xconv
