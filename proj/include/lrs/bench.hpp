#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lrs/catalog.hpp"

namespace lrs {

enum class ConvPath { dense, cp, sparse, decomposed };

std::string to_string(ConvPath p);
ConvPath parse_conv_path(const std::string& name);

/// Rank for the CP path: `rank` when set, otherwise the largest rank whose
/// P(L) stays within P(W) / compression (at least 1). Density for the sparse
/// path, as a fraction of kernel entries.
struct BenchParams {
  std::optional<std::size_t> rank;
  double compression = 5.0;
  double density = 0.01;
};

std::size_t rank_for_compression(const Dims4& dims, double compression);

struct BenchResult {
  LayerCatalogEntry layer;
  ConvPath path = ConvPath::dense;
  int scale = 1;
  std::size_t rank = 0;
  double density = 0.0;
  std::uint64_t seed = 0;
  std::size_t repeats = 0;
  double median_ms = 0.0;
  double dense_median_ms = 0.0;
  double speedup = 0.0;  // dense_median_ms / median_ms
  std::string error;     // non-empty when the row failed
};

struct TimingOptions {
  std::size_t repeats = 20;
  std::size_t warmup = 2;
};

/// Median wall time in milliseconds of `fn` over `repeats` runs after
/// `warmup` discarded runs. Requires repeats >= 5.
double median_time_ms(const std::function<void()>& fn, const TimingOptions& opt);

/// Best-effort: restrict the calling thread to the CPU it is running on.
bool pin_to_current_cpu();

struct MachineInfo {
  std::string cpu_model;
  unsigned cores = 0;
};
MachineInfo machine_info();

/// Throws std::length_error naming the layer extents when the working set of
/// the benchmark would exceed this many bytes.
inline constexpr std::uint64_t kBenchMemoryLimit = 4ull << 30;

/// Times `path` on random data of the layer's shape, spatially scaled by
/// `scale`, and the dense path the same way.
BenchResult bench_layer(const LayerCatalogEntry& entry, ConvPath path, const BenchParams& params, int scale,
                        const TimingOptions& timing, std::uint64_t seed = 0,
                        std::uint64_t memory_limit = kBenchMemoryLimit);

struct SuiteConfig {
  std::vector<ConvPath> paths{ConvPath::dense, ConvPath::cp, ConvPath::sparse};
  std::vector<int> scales{1};
  BenchParams params;
  TimingOptions timing;
  std::uint64_t seed = 0;
  std::uint64_t memory_limit = kBenchMemoryLimit;
};

struct SuiteReport {
  MachineInfo machine;
  std::vector<BenchResult> rows;
};

/// Rows ordered by layer, then scale, then path (in config order). A failing
/// row records its error and the suite continues.
SuiteReport run_suite(std::span<const LayerCatalogEntry> catalog, const SuiteConfig& config);

void write_bench_csv(std::ostream& out, const SuiteReport& report);
std::string bench_json(const SuiteReport& report);

}  // namespace lrs
