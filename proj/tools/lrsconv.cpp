// lrsconv: low-rank + sparse convolution compression toolkit.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error, 3 verification failed.
// Results go to stdout as JSON; failures go to stderr as {"error": {...}}.

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include "lrs/bench.hpp"
#include "lrs/catalog.hpp"
#include "lrs/compressor.hpp"
#include "lrs/conv.hpp"
#include "lrs/decomp.hpp"
#include "lrs/serialize.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lrs;

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitVerify = 3;

struct VerifyFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void emit_error(const std::string& type, const std::string& message) {
  std::cerr << json{{"error", {{"type", type}, {"message", message}}}}.dump() << '\n';
}

bool has_extension(const fs::path& p, const char* ext) { return p.extension() == ext; }

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    std::stringstream cs(cell);
    T v{};
    if (!(cs >> v) || !(cs >> std::ws).eof()) throw std::invalid_argument(std::string("bad ") + what + ": '" + cell + "'");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument(std::string("empty ") + what);
  return out;
}

// Layer index taken from the last run of digits in a file stem ("conv_07" -> 7).
std::optional<std::size_t> index_from_stem(const fs::path& p) {
  const std::string s = p.stem().string();
  auto end = s.find_last_of("0123456789");
  if (end == std::string::npos) return std::nullopt;
  auto begin = end;
  while (begin > 0 && std::isdigit(static_cast<unsigned char>(s[begin - 1]))) --begin;
  return std::stoull(s.substr(begin, end - begin + 1));
}

json counts_json(const ParamCounts& p) {
  return {{"p_w", p.original},
          {"p_l", p.low_rank},
          {"p_s", p.sparse},
          {"compressed", p.compressed()},
          {"compression", p.compressed() ? double(p.original) / double(p.compressed()) : 1.0}};
}

json layer_json(const DecomposedLayer& l) {
  return {{"dims", l.original_dims},
          {"rank", l.rank},
          {"nnz", l.sparse.nnz()},
          {"achieved_epsilon", l.achieved_epsilon},
          {"params", counts_json(l.param_counts())},
          {"is_compressed", l.compressed()}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

struct DecomposeOpts {
  double eps = 0.1;
  double card = 0.01;
  std::size_t max_rank = 256;
  std::size_t max_iters = 100;
  std::size_t restarts = 2;
  std::uint64_t seed = 0;

  void add(CLI::App* cmd) {
    cmd->add_option("--eps", eps, "relative residual budget")->capture_default_str();
    cmd->add_option("--card", card, "fraction of entries kept in the sparse term")->capture_default_str();
    cmd->add_option("--max-rank", max_rank)->capture_default_str();
    cmd->add_option("--max-iters", max_iters, "outer LRS iterations")->capture_default_str();
    cmd->add_option("--restarts", restarts, "random restarts when a rank misses the budget")->capture_default_str();
    cmd->add_option("--seed", seed)->capture_default_str();
  }
  DecompConfig config() const {
    DecompConfig c;
    c.epsilon = eps;
    c.cardinality = card;
    c.max_rank = max_rank;
    c.als_max_iters = max_iters;
    c.restarts = restarts;
    c.seed = seed;
    return c;
  }
};

// ---- decompose ----------------------------------------------------------

int cmd_decompose(const fs::path& in, const fs::path& out, const DecomposeOpts& o) {
  const Tensor4 w = load_tensor(in);
  const DecomposedLayer layer = compress_layer(w, o.config());
  save_layer(out, layer);
  json j = layer_json(layer);
  j["input"] = in.string();
  j["output"] = out.string();
  j["epsilon_budget"] = o.eps;
  j["met_budget"] = layer.achieved_epsilon <= o.eps;
  std::cout << j.dump(2) << '\n';
  return 0;
}

// ---- verify -------------------------------------------------------------

int cmd_verify(const fs::path& weights, const fs::path& decomposed, std::size_t height, std::size_t width,
               std::uint64_t seed) {
  const Tensor4 w = load_tensor(weights);
  const DecomposedLayer layer = load_layer(decomposed);
  if (layer.original_dims != w.dims()) throw VerifyFailed("decomposition dims do not match the weight tensor");

  const Tensor4 approx = layer.to_dense();
  const double resid = frobenius_norm(w - approx);
  const double norm_w = frobenius_norm(w);
  const double eps = norm_w == 0.0 ? 0.0 : resid / norm_w;

  const ConvSpec spec = ConvSpec::for_weights(w.dims());
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  FeatureMap x(spec.in_channels, height, width);
  for (auto& v : x.data()) v = normal(rng);
  const FeatureMap want = conv_dense(x, approx, spec);
  const FeatureMap got = conv_decomposed(x, layer, spec);
  double num = 0.0, den = 0.0;
  for (std::size_t n = 0; n < want.data().size(); ++n) {
    const double d = double(got.data()[n]) - want.data()[n];
    num += d * d;
    den += double(want.data()[n]) * want.data()[n];
  }
  const double conv_err = den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
  const bool ok = conv_err <= 1e-4;

  json j = layer_json(layer);
  j["recomputed_epsilon"] = eps;
  j["conv_check"] = {{"input", {spec.in_channels, height, width}}, {"seed", seed}, {"relative_error", conv_err},
                     {"tolerance", 1e-4}, {"pass", ok}};
  std::cout << j.dump(2) << '\n';
  if (!ok) throw VerifyFailed("decomposed convolution differs from the dense oracle by " + std::to_string(conv_err));
  return 0;
}

// ---- sweep --------------------------------------------------------------

int cmd_sweep(const fs::path& in, const std::string& grid_text, const DecomposeOpts& o, const fs::path& out) {
  const Tensor4 w = load_tensor(in);
  const auto grid = parse_list<double>(grid_text, "epsilon grid");
  const auto pts = sweep_epsilon(w, grid, o.config());
  if (!out.empty() && has_extension(out, ".csv")) {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out.string());
    f << "epsilon,rank,achieved_epsilon,p_w,compressed_params,compression\n";
    for (const auto& p : pts) {
      f << p.epsilon << ',' << p.rank << ',' << p.achieved_epsilon << ',' << p.original_params << ','
        << p.compressed_params << ',' << p.compression << '\n';
    }
  }
  json j = json::array();
  for (const auto& p : pts) {
    j.push_back({{"epsilon", p.epsilon},
                 {"rank", p.rank},
                 {"achieved_epsilon", p.achieved_epsilon},
                 {"p_w", p.original_params},
                 {"compressed_params", p.compressed_params},
                 {"compression", p.compression}});
  }
  if (!out.empty() && !has_extension(out, ".csv")) write_text(out, j.dump(2) + '\n');
  std::cout << j.dump(2) << '\n';
  return 0;
}

// ---- bench --------------------------------------------------------------

std::vector<LayerCatalogEntry> resolve_catalog(const std::string& name) {
  if (name == "resnet50") return resnet50_catalog();
  return load_catalog(name);
}

// "3,7,26-52" -> {3, 7, 26, ..., 52}
std::vector<std::size_t> parse_layer_set(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto dash = cell.find('-');
    if (dash == std::string::npos) {
      out.push_back(parse_list<std::size_t>(cell, "layer index")[0]);
    } else {
      const auto lo = parse_list<std::size_t>(cell.substr(0, dash), "layer index")[0];
      const auto hi = parse_list<std::size_t>(cell.substr(dash + 1), "layer index")[0];
      if (hi < lo) throw std::invalid_argument("bad layer range '" + cell + "'");
      for (std::size_t n = lo; n <= hi; ++n) out.push_back(n);
    }
  }
  return out;
}

struct BenchOpts {
  std::string catalog = "resnet50";
  std::string paths = "dense,cp,sparse";
  std::string scales = "1";
  std::string layers;
  std::size_t repeats = 20;
  std::size_t warmup = 2;
  std::optional<std::size_t> rank;
  double compression = 5.0;
  double density = 0.01;
  std::uint64_t seed = 0;
  double memory_gib = 4.0;
  fs::path out;
};

int cmd_bench(const BenchOpts& o) {
  if (o.repeats < 5) throw std::invalid_argument("--repeats must be at least 5");
  auto catalog = resolve_catalog(o.catalog);
  if (!o.layers.empty()) {
    const auto wanted = parse_layer_set(o.layers);
    std::vector<LayerCatalogEntry> subset;
    for (const auto& e : catalog)
      if (std::find(wanted.begin(), wanted.end(), e.index) != wanted.end()) subset.push_back(e);
    catalog = std::move(subset);
  }
  SuiteConfig cfg;
  cfg.paths.clear();
  std::stringstream ps(o.paths);
  for (std::string p; std::getline(ps, p, ',');) cfg.paths.push_back(parse_conv_path(p));
  cfg.scales = parse_list<int>(o.scales, "scale list");
  cfg.timing = {o.repeats, o.warmup};
  cfg.params.rank = o.rank;
  cfg.params.compression = o.compression;
  cfg.params.density = o.density;
  cfg.seed = o.seed;
  cfg.memory_limit = static_cast<std::uint64_t>(o.memory_gib * double(1ull << 30));

  const SuiteReport rep = run_suite(catalog, cfg);
  std::size_t failed = 0;
  for (const auto& r : rep.rows) failed += !r.error.empty();

  if (o.out.empty() || has_extension(o.out, ".csv")) {
    if (o.out.empty()) {
      write_bench_csv(std::cout, rep);
    } else {
      std::ofstream f(o.out);
      if (!f) throw std::runtime_error("cannot write " + o.out.string());
      write_bench_csv(f, rep);
    }
  } else {
    write_text(o.out, bench_json(rep) + '\n');
  }
  if (!o.out.empty()) {
    std::cout << json{{"output", o.out.string()}, {"rows", rep.rows.size()}, {"failed_rows", failed}}.dump(2) << '\n';
  }
  return 0;
}

// ---- report -------------------------------------------------------------

// Every *.lrsd in `dir` is a decomposed layer; a *.lrst without a matching
// *.lrsd counts as a layer kept dense.
std::vector<LayerRecord> collect_records(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::map<std::string, fs::path> lrsd, lrst;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (has_extension(e.path(), ".lrsd")) lrsd[e.path().stem().string()] = e.path();
    if (has_extension(e.path(), ".lrst")) lrst[e.path().stem().string()] = e.path();
  }
  std::map<std::string, fs::path> all = lrst;
  for (const auto& [stem, p] : lrsd) all[stem] = p;

  std::vector<LayerRecord> recs;
  std::size_t ordinal = 0;
  for (const auto& [stem, path] : all) {
    const std::size_t index = index_from_stem(path).value_or(ordinal);
    ++ordinal;
    if (has_extension(path, ".lrsd")) {
      recs.push_back(LayerRecord::from_layer(index, load_layer(path)));
    } else {
      recs.push_back(LayerRecord::uncompressed(index, load_tensor(path).dims()));
    }
  }
  std::stable_sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  return recs;
}

int cmd_report(const fs::path& dir, std::uint64_t m, const fs::path& out) {
  const auto recs = collect_records(dir);
  const auto rep = aggregate_report(recs, m);
  const std::string text = report_json(rep);
  if (!out.empty()) {
    if (has_extension(out, ".csv")) {
      std::ofstream f(out);
      if (!f) throw std::runtime_error("cannot write " + out.string());
      write_report_csv(f, rep);
    } else {
      write_text(out, text + '\n');
    }
  }
  std::cout << text << '\n';
  return 0;
}

// ---- compress -----------------------------------------------------------

int cmd_compress(const fs::path& dir, const fs::path& outdir, const DecomposeOpts& o, const fs::path& schedule_path,
                 unsigned jobs) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  const EpsilonSchedule schedule =
      schedule_path.empty() ? EpsilonSchedule(o.eps) : EpsilonSchedule::load(schedule_path, o.eps);
  std::vector<fs::path> inputs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && has_extension(e.path(), ".lrst")) inputs.push_back(e.path());
  std::sort(inputs.begin(), inputs.end());
  fs::create_directories(outdir);

  std::vector<json> rows(inputs.size());
  std::vector<std::string> errors(inputs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t n; (n = next++) < inputs.size();) {
      try {
        const std::size_t index = index_from_stem(inputs[n]).value_or(n);
        DecompConfig cfg = o.config();
        cfg.epsilon = schedule.for_layer(index);
        const DecomposedLayer layer = compress_layer(load_tensor(inputs[n]), cfg);
        const fs::path dst = outdir / (inputs[n].stem().string() + ".lrsd");
        save_layer(dst, layer);
        rows[n] = layer_json(layer);
        rows[n]["index"] = index;
        rows[n]["epsilon_budget"] = cfg.epsilon;
        rows[n]["output"] = dst.string();
      } catch (const std::exception& e) {
        errors[n] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < std::max(1u, jobs); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  json j = json::array();
  bool any_error = false;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    if (!errors[n].empty()) {
      any_error = true;
      j.push_back({{"input", inputs[n].string()}, {"error", errors[n]}});
    } else {
      rows[n]["input"] = inputs[n].string();
      j.push_back(rows[n]);
    }
  }
  std::cout << j.dump(2) << '\n';
  if (any_error) throw std::runtime_error("one or more layers failed to compress");
  return 0;
}

// ---- synth / catalog ----------------------------------------------------

int cmd_synth(const std::string& dims_text, std::size_t rank, double spikes, std::uint64_t seed, const fs::path& out) {
  const auto d = parse_list<std::size_t>(dims_text, "dims");
  if (d.size() != 4) throw std::invalid_argument("dims needs four extents I,J,K,T");
  const Dims4 dims{d[0], d[1], d[2], d[3]};
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Tensor4 w(dims);
  if (rank == 0) {
    for (auto& v : w.data()) v = normal(rng);
  } else {
    CpFactors f = CpFactors::zeros(dims, rank);
    for (int n = 0; n < 4; ++n)
      for (auto& v : f.factor(n).data()) v = normal(rng);
    w = reconstruct_cp(f);
  }
  const double rms = frobenius_norm(w) / std::sqrt(double(w.size()));
  const std::size_t count = std::min(w.size(), sparse_budget(dims, spikes));
  std::vector<std::uint32_t> idx(w.size());
  std::iota(idx.begin(), idx.end(), 0u);
  std::shuffle(idx.begin(), idx.end(), rng);
  for (std::size_t n = 0; n < count; ++n) w.data()[idx[n]] += float((normal(rng) < 0 ? -10.0 : 10.0) * rms);
  save_tensor(out, w);
  std::cout << json{{"output", out.string()}, {"dims", dims}, {"rank", rank}, {"spikes", count}}.dump(2) << '\n';
  return 0;
}

int cmd_catalog(const std::string& name, const fs::path& out) {
  const auto catalog = resolve_catalog(name);
  if (out.empty()) {
    write_catalog_csv(std::cout, catalog);
  } else {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out.string());
    write_catalog_csv(f, catalog);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lrsconv: low-rank + sparse compression of convolution kernels"};
  app.require_subcommand(1);

  DecomposeOpts dopts;
  fs::path in_path, out_path, second_path;

  auto* decompose = app.add_subcommand("decompose", "rank search + LRS decomposition of one LRST kernel");
  decompose->add_option("weights", in_path, "input .lrst")->required()->check(CLI::ExistingFile);
  decompose->add_option("-o,--output", out_path, "output .lrsd")->required();
  dopts.add(decompose);

  std::size_t verify_h = 16, verify_w = 16;
  std::uint64_t verify_seed = 0;
  auto* verify = app.add_subcommand("verify", "check an .lrsd against its source kernel");
  verify->add_option("weights", in_path, "source .lrst")->required()->check(CLI::ExistingFile);
  verify->add_option("decomposed", second_path, ".lrsd to check")->required()->check(CLI::ExistingFile);
  verify->add_option("--height", verify_h, "test input height")->capture_default_str();
  verify->add_option("--width", verify_w, "test input width")->capture_default_str();
  verify->add_option("--seed", verify_seed, "test input seed")->capture_default_str();

  std::string grid = "0.1,0.3,0.5";
  auto* sweep = app.add_subcommand("sweep", "compression ratio across an epsilon grid");
  sweep->add_option("weights", in_path, "input .lrst")->required()->check(CLI::ExistingFile);
  sweep->add_option("--eps-grid", grid, "ascending comma-separated budgets")->capture_default_str();
  sweep->add_option("-o,--output", out_path, "also write .csv or .json");
  dopts.add(sweep);

  BenchOpts bopts;
  auto* bench = app.add_subcommand("bench", "time convolution paths over a layer catalog");
  bench->add_option("--catalog", bopts.catalog, "'resnet50' or a catalog CSV")->capture_default_str();
  bench->add_option("--paths", bopts.paths, "dense,cp,sparse,decomposed")->capture_default_str();
  bench->add_option("--scale", bopts.scales, "input scale factors, e.g. 1,2,3")->capture_default_str();
  bench->add_option("--layers", bopts.layers, "subset of layer indices, e.g. 0,26-52");
  bench->add_option("--repeats", bopts.repeats)->capture_default_str();
  bench->add_option("--warmup", bopts.warmup)->capture_default_str();
  bench->add_option("--rank", bopts.rank, "CP rank (default: derived from --compression)");
  bench->add_option("--compression", bopts.compression, "CP parameter compression")->capture_default_str();
  bench->add_option("--density", bopts.density, "sparse kernel density")->capture_default_str();
  bench->add_option("--seed", bopts.seed)->capture_default_str();
  bench->add_option("--memory-gib", bopts.memory_gib, "per-row working-set limit")->capture_default_str();
  bench->add_option("-o,--output", bopts.out, ".csv or .json (default: CSV on stdout)");

  std::uint64_t m = kResnet50NonConvParams;
  auto* report = app.add_subcommand("report", "aggregate compression over a directory of layers");
  report->add_option("--layers", in_path, "directory of .lrsd (and dense .lrst) files")
      ->required()
      ->check(CLI::ExistingDirectory);
  report->add_option("--m", m, "non-convolutional parameter count")->capture_default_str();
  report->add_option("-o,--output", out_path, ".json or .csv");

  fs::path schedule;
  unsigned jobs = 1;
  auto* compress = app.add_subcommand("compress", "decompose every .lrst in a directory");
  compress->add_option("dir", in_path, "directory of .lrst kernels")->required()->check(CLI::ExistingDirectory);
  compress->add_option("-o,--output", out_path, "output directory")->required();
  compress->add_option("--schedule", schedule, "per-layer epsilon CSV (index,epsilon)")->check(CLI::ExistingFile);
  compress->add_option("-j,--jobs", jobs, "layers compressed in parallel")->capture_default_str();
  dopts.add(compress);

  std::string synth_dims = "64,64,3,3";
  std::size_t synth_rank = 0;
  double synth_spikes = 0.0;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "write a random or planted low-rank + spikes kernel");
  synth->add_option("--dims", synth_dims, "I,J,K,T")->capture_default_str();
  synth->add_option("--rank", synth_rank, "planted CP rank (0: i.i.d. Gaussian)")->capture_default_str();
  synth->add_option("--spikes", synth_spikes, "fraction of entries given a 10x RMS spike")->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("-o,--output", out_path, "output .lrst")->required();

  std::string catalog_name = "resnet50";
  auto* catalog = app.add_subcommand("catalog", "print a layer catalog as CSV");
  catalog->add_option("--catalog", catalog_name, "'resnet50' or a catalog CSV")->capture_default_str();
  catalog->add_option("-o,--output", out_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("usage", e.what());
    return kExitUsage;
  }

  try {
    if (*decompose) return cmd_decompose(in_path, out_path, dopts);
    if (*verify) return cmd_verify(in_path, second_path, verify_h, verify_w, verify_seed);
    if (*sweep) return cmd_sweep(in_path, grid, dopts, out_path);
    if (*bench) return cmd_bench(bopts);
    if (*report) return cmd_report(in_path, m, out_path);
    if (*compress) return cmd_compress(in_path, out_path, dopts, schedule, jobs);
    if (*synth) return cmd_synth(synth_dims, synth_rank, synth_spikes, synth_seed, out_path);
    if (*catalog) return cmd_catalog(catalog_name, out_path);
  } catch (const VerifyFailed& e) {
    emit_error("verification_failed", e.what());
    return kExitVerify;
  } catch (const FormatError& e) {
    emit_error("format", e.what());
    return kExitError;
  } catch (const std::invalid_argument& e) {
    emit_error("invalid_argument", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    emit_error("runtime", e.what());
    return kExitError;
  }
  return kExitUsage;
}
