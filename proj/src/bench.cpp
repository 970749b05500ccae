#include "lrs/bench.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <thread>

#include "lrs/conv.hpp"
#include "lrs/decomp.hpp"

#if defined(__linux__)
#include <sched.h>
#endif

namespace lrs {

namespace {

std::string dims_str(const LayerCatalogEntry& e, int scale) {
  return "input (" + std::to_string(e.in_c) + ", " + std::to_string(e.in_h * scale) + ", " +
         std::to_string(e.in_w * scale) + "), kernel (" + std::to_string(e.out_c) + ", " + std::to_string(e.in_c) +
         ", " + std::to_string(e.kx) + ", " + std::to_string(e.ky) + ")";
}

// Random operands for one layer at one input scale.
class Workload {
 public:
  Workload(const LayerCatalogEntry& e, int scale, std::uint64_t seed)
      : entry_(e), spec_{e.in_c, e.out_c, e.kx, e.ky}, rng_(seed) {
    spec_.validate();
    input_ = FeatureMap(e.in_c, e.in_h * scale, e.in_w * scale);
    fill(input_.data());
  }

  const FeatureMap& input() const { return input_; }
  const ConvSpec& spec() const { return spec_; }

  const Tensor4& dense() {
    if (!dense_) {
      dense_ = Tensor4(entry_.weight_dims());
      fill(dense_->data());
    }
    return *dense_;
  }

  const CpFactors& cp(std::size_t rank) {
    auto it = cp_.find(rank);
    if (it == cp_.end()) {
      CpFactors f = CpFactors::zeros(entry_.weight_dims(), rank);
      for (int n = 0; n < 4; ++n) fill(f.factor(n).data());
      it = cp_.emplace(rank, std::move(f)).first;
    }
    return it->second;
  }

  const SparseKernel& sparse(double density) {
    auto it = sparse_.find(density);
    if (it == sparse_.end()) {
      const Dims4 dims = entry_.weight_dims();
      const std::size_t total = numel(dims);
      const std::size_t keep = std::min(total, sparse_budget(dims, density));
      std::vector<std::uint32_t> idx(total);
      std::iota(idx.begin(), idx.end(), 0u);
      for (std::size_t n = 0; n < keep; ++n) {
        std::uniform_int_distribution<std::size_t> pick(n, total - 1);
        std::swap(idx[n], idx[pick(rng_)]);
      }
      idx.resize(keep);
      std::sort(idx.begin(), idx.end());
      SparseTensor4 s;
      s.dims = dims;
      std::normal_distribution<float> normal(0.0f, 1.0f);
      for (auto i : idx) s.entries.push_back({i, normal(rng_)});
      it = sparse_.emplace(density, pack_sparse_kernel(s)).first;
    }
    return it->second;
  }

 private:
  void fill(std::span<float> xs) {
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (auto& v : xs) v = normal(rng_);
  }

  LayerCatalogEntry entry_;
  ConvSpec spec_;
  std::mt19937_64 rng_;
  FeatureMap input_;
  std::optional<Tensor4> dense_;
  std::map<std::size_t, CpFactors> cp_;
  std::map<double, SparseKernel> sparse_;
};

std::uint64_t working_set_bytes(const LayerCatalogEntry& e, ConvPath path, std::size_t rank, double density,
                                int scale) {
  const std::uint64_t plane = static_cast<std::uint64_t>(e.in_h) * e.in_w * scale * scale;
  std::uint64_t floats = plane * (e.in_c + 2ull * e.out_c) + e.param_count();  // dense path is always timed
  if (path == ConvPath::cp || path == ConvPath::decomposed) {
    floats += 3ull * rank * plane + low_rank_param_count(e.weight_dims(), rank);
  }
  if (path == ConvPath::sparse || path == ConvPath::decomposed) {
    floats += 2ull * static_cast<std::uint64_t>(density * static_cast<double>(e.param_count())) + e.in_c;
  }
  return 4 * floats;
}

double time_path(Workload& w, ConvPath path, std::size_t rank, double density, const TimingOptions& timing) {
  const FeatureMap& x = w.input();
  const ConvSpec& spec = w.spec();
  FeatureMap sink;
  switch (path) {
    case ConvPath::dense: {
      const Tensor4& k = w.dense();
      return median_time_ms([&] { sink = conv_dense(x, k, spec); }, timing);
    }
    case ConvPath::cp: {
      const CpFactors& f = w.cp(rank);
      return median_time_ms([&] { sink = conv_cp(x, f, spec); }, timing);
    }
    case ConvPath::sparse: {
      const SparseKernel& k = w.sparse(density);
      return median_time_ms([&] { sink = conv_sparse(x, k, spec); }, timing);
    }
    case ConvPath::decomposed: {
      const CpFactors& f = w.cp(rank);
      const SparseKernel& k = w.sparse(density);
      return median_time_ms([&] { sink = conv_decomposed(x, f, k, spec); }, timing);
    }
  }
  throw std::logic_error("unknown convolution path");
}

BenchResult make_row(const LayerCatalogEntry& entry, ConvPath path, const BenchParams& params, int scale,
                     const TimingOptions& timing, std::uint64_t seed) {
  BenchResult r;
  r.layer = entry;
  r.path = path;
  r.scale = scale;
  r.seed = seed;
  r.repeats = timing.repeats;
  if (path == ConvPath::cp || path == ConvPath::decomposed) {
    r.rank = params.rank.value_or(rank_for_compression(entry.weight_dims(), params.compression));
  }
  if (path == ConvPath::sparse || path == ConvPath::decomposed) r.density = params.density;
  return r;
}

void check_request(const BenchResult& r, const TimingOptions& timing, std::uint64_t memory_limit) {
  if (timing.repeats < 5) throw std::invalid_argument("benchmarks need at least 5 repeats");
  if (r.scale < 1) throw std::invalid_argument("input scale must be >= 1");
  if ((r.path == ConvPath::cp || r.path == ConvPath::decomposed) && r.rank == 0) {
    throw std::invalid_argument("CP path needs rank >= 1");
  }
  if ((r.path == ConvPath::sparse || r.path == ConvPath::decomposed) && !(r.density >= 0.0 && r.density <= 1.0)) {
    throw std::invalid_argument("sparse density must lie in [0, 1]");
  }
  const auto bytes = working_set_bytes(r.layer, r.path, r.rank, r.density, r.scale);
  if (bytes > memory_limit) {
    throw std::length_error("benchmark working set of " + std::to_string(bytes) + " bytes exceeds limit for " +
                            dims_str(r.layer, r.scale));
  }
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

std::string to_string(ConvPath p) {
  switch (p) {
    case ConvPath::dense: return "dense";
    case ConvPath::cp: return "cp";
    case ConvPath::sparse: return "sparse";
    case ConvPath::decomposed: return "decomposed";
  }
  return "unknown";
}

ConvPath parse_conv_path(const std::string& name) {
  if (name == "dense") return ConvPath::dense;
  if (name == "cp") return ConvPath::cp;
  if (name == "sparse") return ConvPath::sparse;
  if (name == "decomposed") return ConvPath::decomposed;
  throw std::invalid_argument("unknown convolution path '" + name + "'");
}

std::size_t rank_for_compression(const Dims4& dims, double compression) {
  if (!(compression > 0.0)) throw std::invalid_argument("compression must be positive");
  const double budget = static_cast<double>(dense_param_count(dims)) / compression;
  const double per_rank = static_cast<double>(dims[0] + dims[1] + dims[2] + dims[3]);
  return std::max<std::size_t>(1, static_cast<std::size_t>(budget / per_rank));
}

double median_time_ms(const std::function<void()>& fn, const TimingOptions& opt) {
  if (opt.repeats < 5) throw std::invalid_argument("benchmarks need at least 5 repeats");
  using clock = std::chrono::steady_clock;
  for (std::size_t n = 0; n < opt.warmup; ++n) fn();
  std::vector<double> samples;
  samples.reserve(opt.repeats);
  for (std::size_t n = 0; n < opt.repeats; ++n) {
    const auto t0 = clock::now();
    fn();
    const auto t1 = clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(samples.begin(), samples.end());
  const std::size_t mid = samples.size() / 2;
  return samples.size() % 2 ? samples[mid] : 0.5 * (samples[mid - 1] + samples[mid]);
}

bool pin_to_current_cpu() {
#if defined(__linux__)
  const int cpu = sched_getcpu();
  if (cpu < 0) return false;
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(cpu, &set);
  return sched_setaffinity(0, sizeof(set), &set) == 0;
#else
  return false;
#endif
}

MachineInfo machine_info() {
  MachineInfo m;
  m.cores = std::thread::hardware_concurrency();
  std::ifstream cpuinfo("/proc/cpuinfo");
  std::string line;
  while (std::getline(cpuinfo, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) m.cpu_model = line.substr(line.find_first_not_of(" \t", colon + 1));
      break;
    }
  }
  if (m.cpu_model.empty()) m.cpu_model = "unknown";
  return m;
}

BenchResult bench_layer(const LayerCatalogEntry& entry, ConvPath path, const BenchParams& params, int scale,
                        const TimingOptions& timing, std::uint64_t seed, std::uint64_t memory_limit) {
  BenchResult r = make_row(entry, path, params, scale, timing, seed);
  check_request(r, timing, memory_limit);
  Workload w(entry, scale, seed);
  r.dense_median_ms = time_path(w, ConvPath::dense, 0, 0.0, timing);
  r.median_ms = path == ConvPath::dense ? r.dense_median_ms : time_path(w, path, r.rank, r.density, timing);
  r.speedup = r.dense_median_ms / r.median_ms;
  return r;
}

SuiteReport run_suite(std::span<const LayerCatalogEntry> catalog, const SuiteConfig& config) {
  SuiteReport rep;
  rep.machine = machine_info();
  pin_to_current_cpu();
  for (const auto& entry : catalog) {
    for (int scale : config.scales) {
      std::optional<Workload> work;
      std::optional<double> dense_ms;
      std::string setup_error;
      for (ConvPath path : config.paths) {
        BenchResult r = make_row(entry, path, config.params, scale, config.timing, config.seed);
        try {
          check_request(r, config.timing, config.memory_limit);
          if (!setup_error.empty()) throw std::runtime_error(setup_error);
          if (!work) work.emplace(entry, scale, config.seed);
          if (!dense_ms) dense_ms = time_path(*work, ConvPath::dense, 0, 0.0, config.timing);
          r.dense_median_ms = *dense_ms;
          r.median_ms = path == ConvPath::dense ? *dense_ms : time_path(*work, path, r.rank, r.density, config.timing);
          r.speedup = r.dense_median_ms / r.median_ms;
        } catch (const std::exception& e) {
          r.error = e.what();
          if (!work) setup_error = e.what();
        }
        rep.rows.push_back(std::move(r));
      }
    }
  }
  return rep;
}

void write_bench_csv(std::ostream& out, const SuiteReport& report) {
  out << "# cpu_model: " << report.machine.cpu_model << '\n';
  out << "# cores: " << report.machine.cores << '\n';
  out << "layer,path,scale,in_c,in_h,in_w,out_c,kx,ky,rank,density,seed,repeats,median_ms,dense_median_ms,speedup,"
         "error\n";
  for (const auto& r : report.rows) {
    const auto& e = r.layer;
    out << e.index << ',' << to_string(r.path) << ',' << r.scale << ',' << e.in_c << ',' << e.in_h * r.scale << ','
        << e.in_w * r.scale << ',' << e.out_c << ',' << e.kx << ',' << e.ky << ',' << r.rank << ',' << r.density
        << ',' << r.seed << ',' << r.repeats << ',' << r.median_ms << ',' << r.dense_median_ms << ',' << r.speedup
        << ',' << csv_escape(r.error) << '\n';
  }
}

std::string bench_json(const SuiteReport& report) {
  nlohmann::json j;
  j["machine"] = {{"cpu_model", report.machine.cpu_model}, {"cores", report.machine.cores}};
  auto& rows = j["results"] = nlohmann::json::array();
  for (const auto& r : report.rows) {
    const auto& e = r.layer;
    nlohmann::json row = {{"layer", e.index},
                          {"path", to_string(r.path)},
                          {"scale", r.scale},
                          {"input", {e.in_c, e.in_h * r.scale, e.in_w * r.scale}},
                          {"kernel", {e.out_c, e.in_c, e.kx, e.ky}},
                          {"rank", r.rank},
                          {"density", r.density},
                          {"seed", r.seed},
                          {"repeats", r.repeats},
                          {"median_ms", r.median_ms},
                          {"dense_median_ms", r.dense_median_ms},
                          {"speedup", r.speedup}};
    if (!r.error.empty()) row["error"] = r.error;
    rows.push_back(std::move(row));
  }
  return j.dump(2);
}

}  // namespace lrs
