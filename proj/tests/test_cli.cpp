#include <algorithm>
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "xconv/fixed_point.hpp"
#include "xconv/graph.hpp"
#include "xconv/interpreter.hpp"
#include "xconv/secure/wire.hpp"
#include "xconv/zoo.hpp"

namespace fs = std::filesystem;

namespace xconv {
namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("xconv2pc_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  static std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  Result run(const std::string& args) const {
    const auto out = path("stdout.txt"), err = path("stderr.txt");
    const std::string cmd = std::string(XCONV2PC_PATH) + " " + args + " >" + out + " 2>" + err;
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  fs::path dir_;
};

std::uint16_t free_port() {
  secure::TcpListener l(secure::Endpoint{"127.0.0.1", 0});
  return l.port();
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("run --zoo toynet:dense:16").code, 1);  // --seed is required
  EXPECT_EQ(run("run --local --zoo toynet:dense:16 --seed 1").code, 1);  // --out is required
  EXPECT_EQ(run("run --role party7 --zoo toynet:dense:16 --seed 1").code, 1);
  EXPECT_EQ(run("bench --op conv9").code, 1);
}

TEST_F(Cli, ParseAndIoErrors) {
  std::ofstream(path("bad.json")) << "{\"layers\": [ }";
  const auto r = run("describe " + path("bad.json"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("byte"), std::string::npos);
  EXPECT_EQ(run("describe " + path("missing.json")).code, 10);
  EXPECT_EQ(run("describe --zoo vgg:dense").code, 9);
}

TEST_F(Cli, ShapeErrorExitCode) {
  Graph g = model_zoo("toynet", CellVariant::kDense, 16);
  g.layers[1].conv.in_channels = 4;
  save_graph(path("g.json"), g, false);
  EXPECT_EQ(run("describe " + path("g.json")).code, 3);
}

TEST_F(Cli, DescribeFormats) {
  const auto text = run("describe --zoo toynet:dense:16");
  ASSERT_EQ(text.code, 0);
  EXPECT_NE(text.out.find("conv_0"), std::string::npos);
  const auto json = run("describe --zoo toynet:dense:16 --format json");
  ASSERT_EQ(json.code, 0);
  EXPECT_EQ(json.out.front(), '{');
}

TEST_F(Cli, ExportedGraphRoundTrips) {
  ASSERT_EQ(run("export-zoo --zoo toynet:xop:16 --weights --out " + path("t.json")).code, 0);
  const Graph g = load_graph(path("t.json"));
  EXPECT_EQ(graph_hash(g), graph_hash(model_zoo("toynet", CellVariant::kXOp, 16)));
}

TEST_F(Cli, LocalRunEqualsClearInference) {
  ASSERT_EQ(run("infer --zoo toynet:dense:16 --seed 4 --out " + path("clear.rtv")).code, 0);
  const auto r = run("run --local --zoo toynet:dense:16 --seed 4 --out " + path("secure.rtv") + " --ledger " +
                     path("ledger"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_ring_file(path("secure.rtv")), read_ring_file(path("clear.rtv")));
  EXPECT_EQ(slurp(path("clear.rtv")), slurp(path("secure.rtv")));
  EXPECT_TRUE(fs::exists(path("ledger.p0.csv")));
  EXPECT_TRUE(fs::exists(path("ledger.p1.csv")));
}

TEST_F(Cli, VerifyLocalProcesses) {
  const auto r = run("verify --local --zoo toynet:dense:16 --trials 2 --seed 11");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("2/2"), std::string::npos);
}

TEST_F(Cli, HandshakeMismatchExitsFour) {
  ASSERT_EQ(run("dealer --zoo toynet:dense:16 --seed 5 --out " + path("m")).code, 0);
  const auto port = std::to_string(free_port());
  const std::string exe = XCONV2PC_PATH;
  const std::string cmd = "(" + exe + " run --role party0 --zoo toynet:dense:16 --seed 5 --material " +
                          path("m.p0.dlr") + " --listen :" + port + " 2>/dev/null; echo $? >" + path("p0") + ") & " +
                          exe + " run --role party1 --zoo toynet:dense:16 --seed 6 --material " + path("m.p1.dlr") +
                          " --connect :" + port + " 2>/dev/null; echo $? >" + path("p1") + "; wait";
  ASSERT_EQ(std::system(("sh -c '" + cmd + "'").c_str()), 0);
  EXPECT_EQ(std::stoi(slurp(path("p0"))), 4);
  EXPECT_EQ(std::stoi(slurp(path("p1"))), 4);
}

TEST_F(Cli, CorruptMaterialExitsSix) {
  ASSERT_EQ(run("dealer --zoo toynet:dense:16 --seed 5 --out " + path("m")).code, 0);
  auto bytes = slurp(path("m.p1.dlr"));
  bytes[bytes.size() / 2] ^= 0x40;
  std::ofstream(path("m.p1.dlr"), std::ios::binary) << bytes;
  EXPECT_EQ(run("run --local --zoo toynet:dense:16 --seed 5 --out " + path("o.rtv") + " --material " + path("m")).code,
            6);
}

TEST_F(Cli, WinogradReportAndBench) {
  const auto w = run("winograd --zoo resnet18:dense:64 --format json");
  ASSERT_EQ(w.code, 0) << w.err;
  EXPECT_NE(w.out.find("beta2"), std::string::npos);
  const auto b = run("bench --op dense --sizes 8,16");
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(b.out.rfind("op,size,mults,linear_bytes,total_bytes,rounds", 0), 0u);
}

TEST_F(Cli, BenchEveryOperatorWithDefaultChannels) {
  const auto b = run("bench --op dense,factorized,shuffle,xop-cell,bottleneck --sizes 8");
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(std::count(b.out.begin(), b.out.end(), '\n'), 6);
}

TEST_F(Cli, ProfileAndCompare) {
  const auto p = run("profile --zoo toynet:dense:16 --profile engine --format json");
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_EQ(p.out.front(), '[');
  const auto c = run("compare --backbones toynet --variants dense,xop --size 16 --baseline TD");
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_NE(c.out.find("TX"), std::string::npos);
  EXPECT_EQ(run("compare --backbones toynet --size 16 --baseline QQ").code, 9);
}

}  // namespace
}  // namespace xconv
