// xconv2pc: build, inspect, rewrite, cost and securely run convolutional networks.

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <csignal>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "xconv/cost.hpp"
#include "xconv/interpreter.hpp"
#include "xconv/io_util.hpp"
#include "xconv/rewrite.hpp"
#include "xconv/secure/runtime.hpp"
#include "xconv/zoo.hpp"

extern char** environ;

namespace fs = std::filesystem;
using namespace xconv;
using nlohmann::json;

namespace {

// Bad flag combinations found after parsing; CLI11 reports them like parse errors (exit 1).
struct UsageError : CLI::ValidationError {
  explicit UsageError(const std::string& what) : CLI::ValidationError(what) {}
};

// ---- logging -------------------------------------------------------------------------------

enum class Level { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

Level log_level() {
  static const Level level = [] {
    const char* env = std::getenv("XCONV2PC_LOG");
    const std::string v = env ? env : "warn";
    if (v == "error") return Level::kError;
    if (v == "info") return Level::kInfo;
    if (v == "debug") return Level::kDebug;
    return Level::kWarn;
  }();
  return level;
}

void log(Level level, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (level <= log_level()) std::cerr << "xconv2pc[" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

// ---- shared option groups ------------------------------------------------------------------

struct GraphSource {
  std::string graph;
  std::string zoo;
  int bitwidth = 0;
  int scale = 0;

  void add(CLI::App* cmd) {
    cmd->add_option("--graph", graph, "graph JSON file");
    cmd->add_option("--zoo", zoo, "generated network backbone:variant[:size]");
    cmd->add_option("--bitwidth", bitwidth, "ring bitwidth override");
    cmd->add_option("--scale", scale, "fraction bits override");
  }

  Graph load() const {
    if (graph.empty() == zoo.empty()) throw UsageError("give exactly one of --graph and --zoo");
    Graph g = graph.empty() ? model_zoo_spec(zoo) : load_graph(graph);
    if (bitwidth) g.info.fixed.bitwidth = bitwidth;
    if (scale) g.info.fixed.scale = scale;
    g.info.fixed.validate();
    return g;
  }

  std::vector<std::string> args() const {
    std::vector<std::string> a;
    if (!graph.empty()) a.insert(a.end(), {"--graph", graph});
    if (!zoo.empty()) a.insert(a.end(), {"--zoo", zoo});
    if (bitwidth) a.insert(a.end(), {"--bitwidth", std::to_string(bitwidth)});
    if (scale) a.insert(a.end(), {"--scale", std::to_string(scale)});
    return a;
  }
};

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
  } else {
    write_file(out, text);
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string part; std::getline(in, part, sep);)
    if (!part.empty()) out.push_back(part);
  return out;
}

CostProfile load_profile(const std::string& name, const FixedPointConfig& cfg) {
  if (name.empty() || name == "standard" || name == "paper") return CostProfile::standard(cfg);
  if (name == "engine") return CostProfile::engine(cfg);
  CostProfile p;
  try {
    const json j = json::parse(read_file(name));
    p.name = j.value("name", fs::path(name).stem().string());
    p.bytes_per_mult = j.value("bytes_per_mult", p.bytes_per_mult);
    p.bytes_per_relu = j.at("bytes_per_relu").get<double>();
    p.bytes_per_comparison = j.at("bytes_per_comparison").get<double>();
    p.bytes_per_truncation = j.at("bytes_per_truncation").get<double>();
  } catch (const json::exception& e) {
    throw ParseError("cost profile " + name + ": " + e.what());
  }
  p.validate();
  return p;
}

RealTensor read_real_input(const std::string& path) { return decode_fixed(read_ring_file(path)); }

std::string real_json(const RealTensor& t) {
  return json{{"shape", t.shape()}, {"data", std::vector<double>(t.values().begin(), t.values().end())}}.dump();
}

// ---- child processes for --local -----------------------------------------------------------

std::string self_exe() { return fs::read_symlink("/proc/self/exe").string(); }

pid_t spawn(const std::vector<std::string>& args) {
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  pid_t pid = 0;
  if (posix_spawn(&pid, argv[0], nullptr, nullptr, argv.data(), environ) != 0) {
    throw IoError("cannot spawn " + args[0]);
  }
  return pid;
}

int exit_code(int status) {
  return WIFEXITED(status) ? WEXITSTATUS(status) : static_cast<int>(ExitCode::kTransport);
}

// Waits for every child; the first non-zero exit terminates the rest so a peer blocked on a
// connection that will never come does not sit out its timeout. Codes follow `pids`.
std::vector<int> wait_all(const std::vector<pid_t>& pids) {
  std::vector<int> codes(pids.size(), -1);
  std::size_t left = pids.size();
  while (left > 0) {
    int status = 0;
    const pid_t pid = waitpid(-1, &status, 0);
    if (pid < 0) {
      if (errno == EINTR) continue;
      break;
    }
    const auto it = std::find(pids.begin(), pids.end(), pid);
    if (it == pids.end()) continue;
    const auto i = static_cast<std::size_t>(it - pids.begin());
    codes[i] = exit_code(status);
    --left;
    if (codes[i] != 0) {
      for (std::size_t j = 0; j < pids.size(); ++j)
        if (codes[j] < 0) kill(pids[j], SIGTERM);
    }
  }
  for (auto& c : codes)
    if (c < 0) c = static_cast<int>(ExitCode::kTransport);
  return codes;
}

std::uint16_t free_port() {
  secure::TcpListener probe(secure::Endpoint{"127.0.0.1", 0});
  return probe.port();
}

fs::path scratch_dir() {
  static int counter = 0;
  const auto dir = fs::temp_directory_path() / ("xconv2pc-" + std::to_string(getpid()) + "-" + std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

struct LocalRun {
  GraphSource source;
  std::uint64_t seed = 0;
  std::string input;     // optional RTV1 file; the client draws one from the seed otherwise
  std::string material;  // optional file prefix; a dealer process otherwise
  std::string out;       // client output
  std::string ledger;    // prefix for .p0.csv / .p1.csv
};

// Root cause first: a peer's disconnect (transport) is usually a consequence.
int aggregate(const std::vector<int>& codes) {
  for (int c : codes)
    if (c != 0 && c != static_cast<int>(ExitCode::kTransport)) return c;
  for (int c : codes)
    if (c != 0) return c;
  return 0;
}

int run_local(const LocalRun& r) {
  const std::string exe = self_exe();
  const auto common = r.source.args();
  const std::string seed = std::to_string(r.seed);
  const std::string peer = "127.0.0.1:" + std::to_string(free_port());
  std::vector<std::string> material0, material1;
  std::optional<pid_t> dealer;
  if (r.material.empty()) {
    const std::string dealer_ep = "127.0.0.1:" + std::to_string(free_port());
    std::vector<std::string> args{exe, "run", "--role", "dealer", "--listen", dealer_ep, "--seed", seed};
    args.insert(args.end(), common.begin(), common.end());
    dealer = spawn(args);
    material0 = material1 = {"--dealer", dealer_ep};
  } else {
    material0 = {"--material", r.material + ".p0.dlr"};
    material1 = {"--material", r.material + ".p1.dlr"};
  }
  std::vector<std::string> a0{exe, "run", "--role", "party0", "--listen", peer, "--seed", seed};
  a0.insert(a0.end(), common.begin(), common.end());
  a0.insert(a0.end(), material0.begin(), material0.end());
  if (!r.ledger.empty()) a0.insert(a0.end(), {"--ledger", r.ledger + ".p0.csv"});
  std::vector<std::string> a1{exe, "run", "--role", "party1", "--connect", peer, "--seed", seed, "--out", r.out};
  a1.insert(a1.end(), common.begin(), common.end());
  a1.insert(a1.end(), material1.begin(), material1.end());
  if (!r.input.empty()) a1.insert(a1.end(), {"--input", r.input});
  if (!r.ledger.empty()) a1.insert(a1.end(), {"--ledger", r.ledger + ".p1.csv"});
  const pid_t p0 = spawn(a0);
  const pid_t p1 = spawn(a1);
  std::vector<pid_t> pids{p1, p0};
  if (dealer) pids.push_back(*dealer);
  const auto codes = wait_all(pids);
  log(Level::kDebug, "local session exit codes: party1=" + std::to_string(codes[0]) + " party0=" +
                         std::to_string(codes[1]) + (dealer ? " dealer=" + std::to_string(codes[2]) : ""));
  const int code = aggregate(codes);
  if (code == 0 && !r.ledger.empty()) {
    const auto l0 = secure::CommLedger::from_csv(read_file(r.ledger + ".p0.csv"));
    const auto l1 = secure::CommLedger::from_csv(read_file(r.ledger + ".p1.csv"));
    const auto violation = secure::mirror_violation(l0, l1);
    if (!violation.empty()) throw MismatchError("ledgers are not mirror images: " + violation);
  }
  return code;
}

// ---- commands ------------------------------------------------------------------------------

int cmd_describe(const GraphSource& src, const std::string& format, const std::string& out) {
  const Graph g = src.load();
  const ShapeReport report = validate_shapes(g);
  if (!report.ok) throw ShapeError("layer '" + report.layer + "': " + report.error);
  std::map<std::string, LayerCount> counts;
  for (auto& c : count_mults(g)) counts.emplace(c.layer, c);
  std::int64_t total = 0;
  for (const auto& [name, c] : counts) total += c.mults;
  std::ostringstream os;
  if (format == "json") {
    json layers = json::array();
    for (const auto& ls : report.shapes) {
      const auto it = counts.find(ls.name);
      layers.push_back({{"layer", ls.name},
                        {"kind", std::string(to_string(ls.kind))},
                        {"shape", ls.shape},
                        {"mults", it == counts.end() ? 0 : it->second.mults}});
    }
    os << json{{"backbone", g.info.backbone},
               {"variant", g.info.variant},
               {"graph_hash", graph_hash(g)},
               {"layers", layers},
               {"total_mults", total}}
              .dump(1);
  } else if (format == "csv") {
    os << "layer,kind,shape,mults\n";
    for (const auto& ls : report.shapes) {
      const auto it = counts.find(ls.name);
      os << ls.name << ',' << to_string(ls.kind) << ',' << to_string(ls.shape) << ','
         << (it == counts.end() ? 0 : it->second.mults) << '\n';
    }
  } else if (format == "text") {
    os << std::left << std::setw(28) << "layer" << std::setw(18) << "kind" << std::setw(22) << "shape" << "mults\n";
    for (const auto& ls : report.shapes) {
      const auto it = counts.find(ls.name);
      os << std::setw(28) << ls.name << std::setw(18) << to_string(ls.kind) << std::setw(22) << to_string(ls.shape)
         << (it == counts.end() ? 0 : it->second.mults) << '\n';
    }
    os << "layers " << g.layers.size() << ", total mults " << total << ", graph hash " << graph_hash(g) << '\n';
  } else {
    throw UsageError("unknown format '" + format + "' (text, csv, json)");
  }
  emit(out, os.str());
  return 0;
}

int cmd_infer(const GraphSource& src, const std::string& input, bool use_float, std::uint64_t seed,
              const std::string& out) {
  const Graph g = src.load();
  if (use_float) {
    const RealTensor x = input.empty()
                             ? decode_fixed(secure::random_input(g.input_shape, g.info.fixed, seed))
                             : read_real_input(input);
    emit(out, real_json(infer_float(g, x)));
    return 0;
  }
  const FixedProgram program = compile_fixed(g);
  const RingTensor x = input.empty() ? secure::random_input(program.graph.input_shape, program.cfg, seed)
                                     : read_ring_file(input);
  const RingTensor y = infer_fixed(program, x);
  if (out.empty() || out == "-") {
    std::cout << real_json(decode_fixed(y)) << '\n';
  } else {
    write_ring_file(out, y);
  }
  return 0;
}

int cmd_gen_input(const GraphSource& src, std::uint64_t seed, const std::string& out) {
  const Graph g = src.load();
  if (out.empty()) throw UsageError("--out is required");
  write_ring_file(out, secure::random_input(g.input_shape, g.info.fixed, seed));
  return 0;
}

int cmd_export_zoo(const GraphSource& src, bool weights, const std::string& out) {
  Graph g = src.load();
  if (weights) materialize_weights(g);
  if (out.empty() || out == "-") {
    std::cout << to_json(g, weights) << '\n';
  } else {
    save_graph(out, g, weights);
  }
  return 0;
}

int cmd_winograd(const GraphSource& src, const std::vector<int>& tiles, const std::string& allow,
                 const std::string& out, const std::string& report, const std::string& format) {
  const Graph g = src.load();
  RewriteOptions options;
  if (!tiles.empty()) options.tiles = tiles;
  if (!allow.empty()) {
    const auto names = split(allow, ',');
    options.allow = std::set<std::string>(names.begin(), names.end());
  }
  const RewriteResult r = rewrite_winograd(g, options);
  const auto before = total_mults(g), after = total_mults(r.graph);
  const bool has_weights = std::any_of(g.layers.begin(), g.layers.end(),
                                       [](const Layer& l) { return !l.params.empty() || !l.ring_params.empty(); });
  if (!out.empty()) save_graph(out, r.graph, has_weights);
  const std::string rows = format == "json" ? tiling_report_json(r.report) : tiling_report_csv(r.report);
  if (format != "json" && format != "csv") throw UsageError("unknown format '" + format + "' (csv, json)");
  emit(report, rows);
  std::ostringstream summary;
  summary << "rewritten " << r.rewritten << " of " << r.report.size() << " convolutions; total mults " << before
          << " -> " << after << " (" << std::fixed << std::setprecision(4)
          << (after ? static_cast<double>(before) / static_cast<double>(after) : 0.0) << "x)";
  std::cerr << summary.str() << '\n';
  return 0;
}

int cmd_dealer(const GraphSource& src, std::uint64_t seed, const std::string& out) {
  const Graph g = fold_batchnorm(src.load());
  if (out.empty()) throw UsageError("--out prefix is required");
  const auto req = secure::material_requirements(g);
  const auto paths = secure::write_material_files(out, g.info.fixed, seed, req);
  std::cout << paths[0] << '\n' << paths[1] << '\n';
  log(Level::kInfo, "material: " + std::to_string(req.triples) + " triples, " + std::to_string(req.truncations) +
                        " truncations, " + std::to_string(req.comparisons) + " comparisons");
  return 0;
}

std::unique_ptr<secure::MaterialSource> party_material(int party, const std::string& material, const std::string& dealer) {
  if (material.empty() == dealer.empty()) throw UsageError("give exactly one of --material and --dealer");
  std::string bytes = material.empty() ? secure::fetch_material(secure::parse_endpoint(dealer), party)
                                       : read_file(material);
  return std::make_unique<secure::BufferMaterial>(std::move(bytes));
}

struct RunOptions {
  std::string role;
  std::string listen, connect, dealer, material, input, out, ledger;
  std::uint64_t seed = 0;
  bool local = false;
};

int cmd_run(const GraphSource& src, const RunOptions& o) {
  if (o.local) {
    LocalRun r{src, o.seed, o.input, o.material, o.out, o.ledger};
    if (r.out.empty()) throw UsageError("--out is required with --local");
    return run_local(r);
  }
  const Graph g = src.load();
  if (o.role == "dealer") {
    if (o.listen.empty()) throw UsageError("the dealer needs --listen");
    const Graph folded = fold_batchnorm(g);
    secure::TcpListener listener(secure::parse_endpoint(o.listen));
    log(Level::kInfo, "dealer listening on port " + std::to_string(listener.port()));
    secure::serve_dealer(listener, folded.info.fixed, o.seed, secure::material_requirements(folded));
    return 0;
  }
  int party = -1;
  if (o.role == "party0" || o.role == "model") party = 0;
  if (o.role == "party1" || o.role == "client") party = 1;
  if (party < 0) throw UsageError("unknown role '" + o.role + "' (dealer, party0, party1)");

  const FixedProgram program = compile_fixed(g, party == 0);
  std::optional<RingTensor> input;
  if (party == 1) {
    input = o.input.empty() ? secure::random_input(program.graph.input_shape, program.cfg, o.seed)
                            : read_ring_file(o.input);
  }
  std::unique_ptr<secure::Channel> channel;
  std::unique_ptr<secure::TcpListener> listener;
  if (!o.listen.empty()) {
    listener = std::make_unique<secure::TcpListener>(secure::parse_endpoint(o.listen));
  }
  auto material = party_material(party, o.material, o.dealer);
  if (listener) {
    channel = listener->accept();
  } else if (!o.connect.empty()) {
    channel = secure::TcpChannel::connect(secure::parse_endpoint(o.connect));
  } else {
    throw UsageError("a party needs --listen or --connect");
  }
  const auto start = std::chrono::steady_clock::now();
  const auto result = secure::run_party(party, program, *channel, *material, o.seed, input ? &*input : nullptr);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log(Level::kInfo, "party" + std::to_string(party) + ": " + std::to_string(result.ledger.total_sent()) +
                        " bytes sent in " + std::to_string(secs) + " s, transcript " + result.transcript);
  if (!o.ledger.empty()) write_file(o.ledger, result.ledger.to_csv());
  if (party == 1) {
    if (o.out.empty() || o.out == "-") {
      std::cout << real_json(decode_fixed(*result.output)) << '\n';
    } else {
      write_ring_file(o.out, *result.output);
    }
  }
  return 0;
}

struct VerifyOptions {
  int trials = 10;
  std::uint64_t seed = 1;
  bool local = false;
  std::string material;
};

int cmd_verify(const GraphSource& src, const VerifyOptions& o) {
  const Graph g = src.load();
  const FixedProgram program = compile_fixed(g);
  int failures = 0;
  const auto start = std::chrono::steady_clock::now();
  for (int t = 0; t < o.trials; ++t) {
    const std::uint64_t seed = o.seed + static_cast<std::uint64_t>(t);
    const RingTensor x = secure::random_input(program.graph.input_shape, program.cfg, seed);
    const RingTensor clear = infer_fixed(program, x);
    RingTensor secure_out;
    if (o.local) {
      const auto dir = scratch_dir();
      LocalRun r{src, seed, "", o.material, (dir / "out.rtv").string(), (dir / "ledger").string()};
      const int code = run_local(r);
      if (code != 0) {
        fs::remove_all(dir);
        throw Error(static_cast<ExitCode>(code), "trial " + std::to_string(t) + " (seed " + std::to_string(seed) +
                                                     "): secure session failed with exit code " + std::to_string(code));
      }
      secure_out = read_ring_file(r.out);
      fs::remove_all(dir);
    } else {
      secure::LocalSession s;
      if (o.material.empty()) {
        s = secure::run_in_process(g, x, seed);
      } else {
        s = secure::run_in_process(g, x, seed, [&](int party, const FixedPointConfig&) {
          return std::make_unique<secure::BufferMaterial>(read_file(o.material + ".p" + std::to_string(party) + ".dlr"));
        });
      }
      const auto violation = secure::mirror_violation(s.ledgers[0], s.ledgers[1]);
      if (!violation.empty()) throw MismatchError("ledgers are not mirror images: " + violation);
      secure_out = std::move(s.output);
    }
    std::int64_t bad = 0;
    for (std::int64_t i = 0; i < clear.size(); ++i) bad += clear[i] != secure_out[i];
    if (clear.shape() != secure_out.shape()) bad = clear.size();
    if (bad) {
      ++failures;
      log(Level::kError, "trial " + std::to_string(t) + " (seed " + std::to_string(seed) + "): " + std::to_string(bad) +
                             " of " + std::to_string(clear.size()) + " output words differ");
    } else {
      log(Level::kDebug, "trial " + std::to_string(t) + " (seed " + std::to_string(seed) + "): bitwise equal");
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "verify: " << (o.trials - failures) << "/" << o.trials << " trials bitwise equal ("
            << (o.local ? "three processes" : "in-process") << ", " << std::fixed << std::setprecision(2) << secs
            << " s)\n";
  if (failures) throw MismatchError(std::to_string(failures) + " trial(s) differ from clear fixed-point inference");
  return 0;
}

// Single-operator and single-cell graphs for the size sweep.
Graph bench_graph(const std::string& op, int size, int c_in, int c_mid, int c_out, int kernel, std::uint64_t seed) {
  if (op == "dense") return cell_graph(CellVariant::kDense, CellDims{c_in, c_in, c_out, kernel, 1, false, true}, size, seed);
  if (op == "factorized") {
    return cell_graph(CellVariant::kFactorized, CellDims{c_in, c_in, c_out, kernel, 1, false, true}, size, seed);
  }
  // the shuffle halves need an even width, so this cell keeps its leading projection to c_mid
  if (op == "shuffle") return cell_graph(CellVariant::kShuffle, CellDims{c_in, c_mid, c_out, kernel, 1, true, false}, size, seed);
  // the xop split acts on the cell input, so an odd c_in is rounded up
  if (op == "xop-cell") {
    return cell_graph(CellVariant::kXOp, CellDims{c_in + c_in % 2, c_mid, c_out, kernel, 1, true, false}, size, seed);
  }
  if (op == "bottleneck") {
    return cell_graph(CellVariant::kDense, CellDims{c_in, c_mid, c_out, kernel, 1, true, false}, size, seed);
  }
  throw UsageError("unknown operator '" + op + "' (dense, factorized, shuffle, xop-cell, bottleneck)");
}

struct BenchOptions {
  std::vector<std::string> ops{"dense"};
  std::vector<int> sizes{16, 32, 64};
  int c_in = 3, c_mid = 16, c_out = 64, kernel = 3;
  std::uint64_t seed = 1;
  std::string format = "csv";
  std::string out;
};

bool linear_op(const std::string& op) { return op == "conv" || op == "fc" || op == "winograd-mul"; }

int cmd_bench(const BenchOptions& o) {
  json rows = json::array();
  std::ostringstream csv;
  csv << "op,size,mults,linear_bytes,total_bytes,rounds\n";
  for (const auto& op : o.ops) {
    for (int size : o.sizes) {
      const Graph g = bench_graph(op, size, o.c_in, o.c_mid, o.c_out, o.kernel, o.seed);
      const auto program = compile_fixed(g);
      const auto x = secure::random_input(program.graph.input_shape, program.cfg, o.seed);
      const auto s = secure::run_in_process(g, x, o.seed);
      std::uint64_t linear = 0;
      for (const auto& e : s.ledgers[0].entries())
        if (linear_op(e.op)) linear += e.bytes_sent;
      const auto mults = total_mults(program.graph);
      csv << op << ',' << size << ',' << mults << ',' << linear << ',' << s.ledgers[0].total_sent() << ','
          << s.ledgers[0].total_rounds() << '\n';
      rows.push_back({{"op", op},
                      {"size", size},
                      {"mults", mults},
                      {"linear_bytes", linear},
                      {"total_bytes", s.ledgers[0].total_sent()},
                      {"rounds", s.ledgers[0].total_rounds()}});
      log(Level::kInfo, op + " @" + std::to_string(size) + ": " + std::to_string(s.ledgers[0].total_sent()) + " bytes");
    }
  }
  if (o.format == "json") {
    emit(o.out, rows.dump(1));
  } else if (o.format == "csv") {
    emit(o.out, csv.str());
  } else {
    throw UsageError("unknown format '" + o.format + "' (csv, json)");
  }
  return 0;
}

struct CompareCmd {
  std::vector<std::string> backbones;
  std::vector<std::string> variants;
  std::string winograd = "off";
  int size = 320;
  std::string baseline = "DD";
  std::string profile;
  std::string format = "csv";
  std::string out;
};

int cmd_compare(const CompareCmd& c) {
  CompareOptions options;
  options.backbones = c.backbones;
  if (options.backbones.empty()) options.backbones = {"densenet121", "resnet50", "resnet18", "mobilenetv3l", "shufflenetv2"};
  for (const auto& v : c.variants) options.variants.push_back(parse_cell_variant(v));
  if (options.variants.empty()) {
    options.variants = {CellVariant::kDense, CellVariant::kFactorized, CellVariant::kShuffle, CellVariant::kXOp};
  }
  if (c.winograd == "off") {
    options.winograd = {false};
  } else if (c.winograd == "on") {
    options.winograd = {true};
  } else if (c.winograd == "both") {
    options.winograd = {false, true};
  } else {
    throw UsageError("--winograd must be off, on or both");
  }
  options.input_size = c.size;
  options.baseline = c.baseline;
  const auto rows = compare_variants(options, load_profile(c.profile, FixedPointConfig{}));
  emit(c.out, emit_comparison(rows, parse_report_format(c.format)));
  return 0;
}

int cmd_profile(const GraphSource& src, const std::string& profile, const std::string& ledger,
                const std::string& format, const std::string& out) {
  const Graph g = fold_batchnorm(src.load());
  const CostProfile p = load_profile(profile, g.info.fixed);
  CommEstimate est = estimate_comm(g, p);
  if (!ledger.empty()) merge_measured(est.rows, secure::CommLedger::from_csv(read_file(ledger)).sent_by_op());
  emit(out, emit_report(est.rows, parse_report_format(format)));
  std::ostringstream summary;
  summary << std::fixed << std::setprecision(2) << "profile " << p.name << ": total " << est.total() << " bytes, mults "
          << est.mults << ", linear " << 100.0 * est.linear_share() << "%, conv share of linear "
          << 100.0 * est.conv_share_of_linear() << "%";
  std::cerr << summary.str() << '\n';
  return 0;
}

int cmd_calibrate(const GraphSource& src, std::uint64_t seed, const std::string& out) {
  GraphSource s = src;
  if (s.graph.empty() && s.zoo.empty()) s.zoo = "toynet:dense:16";
  const Graph g = s.load();
  const FixedProgram program = compile_fixed(g);
  const auto session =
      secure::run_in_process(g, secure::random_input(program.graph.input_shape, program.cfg, seed), seed);
  double relu_bytes = 0, cmp_bytes = 0, trunc_bytes = 0, mult_bytes = 0;
  std::int64_t relus = 0, cmps = 0, truncs = 0, mults = 0;
  for (const auto& c : count_mults(program.graph)) {
    relus += c.relus;
    cmps += c.comparisons;
    truncs += c.truncations;
    mults += c.mults;
  }
  for (const auto& e : session.ledgers[0].entries()) {
    const double b = static_cast<double>(e.bytes_sent);
    if (e.op == "relu") relu_bytes += b;
    if (e.op == "maxpool") cmp_bytes += b;
    if (e.op == "trunc") trunc_bytes += b;
    if (linear_op(e.op)) mult_bytes += b;
  }
  const auto analytic = CostProfile::engine(program.cfg);
  auto per = [](double bytes, std::int64_t n, double fallback) { return n ? bytes / static_cast<double>(n) : fallback; };
  const json j{{"name", "engine-measured"},
               {"note", "per-party online payload of this engine's protocols"},
               {"bytes_per_mult", per(mult_bytes, mults, analytic.bytes_per_mult)},
               {"bytes_per_relu", per(relu_bytes, relus, analytic.bytes_per_relu)},
               {"bytes_per_comparison", per(cmp_bytes, cmps, analytic.bytes_per_comparison)},
               {"bytes_per_truncation", per(trunc_bytes, truncs, analytic.bytes_per_truncation)},
               {"bitwidth", program.cfg.bitwidth},
               {"scale", program.cfg.scale}};
  emit(out, j.dump(1));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xconv2pc: crypto-friendly convolution networks under two-party secure inference"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("xconv2pc protocol ") + std::to_string(secure::kProtocolVersion));

  int code = 0;
  auto guarded = [&code](auto fn) {
    return [&code, fn]() { code = fn(); };
  };

  GraphSource src;
  std::string describe_format = "text", wino_format = "csv", profile_format = "csv";
  std::string out, input, tiles_allow, report, profile, ledger;
  std::uint64_t seed = 1;
  bool use_float = false, weights = false;
  std::vector<int> tiles;

  auto* describe = app.add_subcommand("describe", "per-layer shapes and multiplication counts");
  src.add(describe);
  describe->add_option("graph_file", src.graph, "graph JSON file");
  describe->add_option("--format", describe_format, "text, csv or json");
  describe->add_option("--out", out, "output file (stdout by default)");
  describe->callback(guarded([&] { return cmd_describe(src, describe_format, out); }));

  auto* infer = app.add_subcommand("infer", "clear inference (fixed-point by default)");
  src.add(infer);
  infer->add_option("--input", input, "RTV1 input tensor (random from --seed otherwise)");
  infer->add_flag("--float", use_float, "real arithmetic instead of fixed point");
  infer->add_flag("--fixed", "fixed-point arithmetic (default)");
  infer->add_option("--seed", seed, "seed for the random input");
  infer->add_option("--out", out, "RTV1 output file (fixed) or JSON (float)");
  infer->callback(guarded([&] { return cmd_infer(src, input, use_float, seed, out); }));

  auto* gen = app.add_subcommand("gen-input", "random client input for a graph");
  src.add(gen);
  gen->add_option("--seed", seed, "session seed");
  gen->add_option("--out", out, "RTV1 output file")->required();
  gen->callback(guarded([&] { return cmd_gen_input(src, seed, out); }));

  auto* exp = app.add_subcommand("export-zoo", "write a generated network as graph JSON");
  src.add(exp);
  exp->add_flag("--weights", weights, "include the materialized weights");
  exp->add_option("--out", out, "graph JSON file (stdout by default)");
  exp->callback(guarded([&] { return cmd_export_zoo(src, weights, out); }));

  auto* wino = app.add_subcommand("winograd", "tag eligible convolutions for Winograd execution");
  src.add(wino);
  wino->add_option("--tiles", tiles, "candidate input tile sizes")->delimiter(',');
  wino->add_option("--allow", tiles_allow, "comma-separated layers that may be rewritten");
  wino->add_option("--out", out, "rewritten graph JSON");
  wino->add_option("--report", report, "tiling report file (stdout by default)");
  wino->add_option("--format", wino_format, "csv or json");
  wino->callback(guarded([&] { return cmd_winograd(src, tiles, tiles_allow, out, report, wino_format); }));

  auto* dealer = app.add_subcommand("dealer", "write both parties' dealer material files");
  src.add(dealer);
  dealer->add_option("--seed", seed, "session seed")->required();
  dealer->add_option("--out", out, "file prefix (<prefix>.p0.dlr, <prefix>.p1.dlr)")->required();
  dealer->callback(guarded([&] { return cmd_dealer(src, seed, out); }));

  RunOptions run_opts;
  auto* run = app.add_subcommand("run", "run one role of a secure session, or all three with --local");
  src.add(run);
  run->add_option("--role", run_opts.role, "dealer, party0 (model owner) or party1 (client)");
  run->add_option("--listen", run_opts.listen, "host:port to accept on");
  run->add_option("--connect", run_opts.connect, "host:port of party0");
  run->add_option("--dealer", run_opts.dealer, "host:port of the dealer");
  run->add_option("--material", run_opts.material, "dealer material file (prefix with --local)");
  run->add_option("--input", run_opts.input, "client RTV1 input (random from --seed otherwise)");
  run->add_option("--out", run_opts.out, "client output RTV1 file");
  run->add_option("--ledger", run_opts.ledger, "ledger CSV (prefix with --local)");
  run->add_option("--seed", run_opts.seed, "session seed")->required();
  run->add_flag("--local", run_opts.local, "spawn dealer and both parties as local processes");
  run->callback(guarded([&] { return cmd_run(src, run_opts); }));

  VerifyOptions verify_opts;
  auto* verify = app.add_subcommand("verify", "secure vs clear fixed-point inference, bitwise");
  src.add(verify);
  verify->add_option("--trials", verify_opts.trials, "number of (seed, input) pairs");
  verify->add_option("--seed", verify_opts.seed, "first trial seed; trial t uses seed + t");
  verify->add_flag("--local", verify_opts.local, "three local processes per trial instead of threads");
  verify->add_option("--material", verify_opts.material, "dealer material file prefix instead of the seed");
  verify->callback(guarded([&] { return cmd_verify(src, verify_opts); }));

  BenchOptions bench_opts;
  auto* bench = app.add_subcommand("bench", "measured secure bytes of single operators per image size");
  bench->add_option("--op", bench_opts.ops, "dense, factorized, shuffle, xop-cell, bottleneck")->delimiter(',');
  bench->add_option("--sizes", bench_opts.sizes, "image sizes")->delimiter(',');
  bench->add_option("--in-channels", bench_opts.c_in, "input channels");
  bench->add_option("--mid-channels", bench_opts.c_mid, "cell bottleneck channels");
  bench->add_option("--out-channels", bench_opts.c_out, "output channels");
  bench->add_option("--kernel", bench_opts.kernel, "kernel extent");
  bench->add_option("--seed", bench_opts.seed, "session seed");
  bench->add_option("--format", bench_opts.format, "csv or json");
  bench->add_option("--out", bench_opts.out, "output file (stdout by default)");
  bench->callback(guarded([&] { return cmd_bench(bench_opts); }));

  CompareCmd compare_opts;
  auto* compare = app.add_subcommand("compare", "backbone x variant comparison table");
  compare->add_option("--backbones", compare_opts.backbones, "backbones")->delimiter(',');
  compare->add_option("--variants", compare_opts.variants, "dense, factorized, shuffle, xop")->delimiter(',');
  compare->add_option("--winograd", compare_opts.winograd, "off, on or both");
  compare->add_option("--size", compare_opts.size, "input image size");
  compare->add_option("--baseline", compare_opts.baseline, "baseline mnemonic");
  compare->add_option("--profile", compare_opts.profile, "standard, engine or a profile JSON");
  compare->add_option("--format", compare_opts.format, "csv or json");
  compare->add_option("--out", compare_opts.out, "output file (stdout by default)");
  compare->callback(guarded([&] { return cmd_compare(compare_opts); }));

  auto* prof = app.add_subcommand("profile", "per-layer communication estimate");
  prof->alias("estimate");
  src.add(prof);
  prof->add_option("--profile", profile, "standard, engine or a profile JSON");
  prof->add_option("--ledger", ledger, "party ledger CSV to merge as measured bytes");
  prof->add_option("--format", profile_format, "csv or json");
  prof->add_option("--out", out, "output file (stdout by default)");
  prof->callback(guarded([&] { return cmd_profile(src, profile, ledger, profile_format, out); }));

  auto* calib = app.add_subcommand("calibrate", "measure the engine's per-element constants");
  src.add(calib);
  calib->add_option("--seed", seed, "session seed");
  calib->add_option("--out", out, "profile JSON (stdout by default)");
  calib->callback(guarded([&] { return cmd_calibrate(src, seed, out); }));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  } catch (const Error& e) {
    log(Level::kError, e.what());
    return static_cast<int>(e.code());
  } catch (const fs::filesystem_error& e) {
    log(Level::kError, e.what());
    return static_cast<int>(ExitCode::kIo);
  } catch (const std::exception& e) {
    log(Level::kError, e.what());
    return static_cast<int>(ExitCode::kUsage);
  }
  return code;
}
