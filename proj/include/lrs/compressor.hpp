#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lrs/catalog.hpp"
#include "lrs/decomp.hpp"

namespace lrs {

/// Non-convolutional parameter count of ResNet-50 (26,128,695 total minus
/// 23,454,912 in convolution kernels).
inline constexpr std::uint64_t kResnet50NonConvParams = 2'673'783;

/// Rank search followed by factor-norm equilibration. The result is flagged
/// (compressed() == false) when P(L) + P(S) >= P(W).
DecomposedLayer compress_layer(const Tensor4& w, const DecompConfig& cfg);

/// Positions into `catalog`, largest P(W) first; ties keep catalog order.
std::vector<std::size_t> order_layers(std::span<const LayerCatalogEntry> catalog);

struct SweepPoint {
  double epsilon = 0.0;
  std::size_t rank = 0;
  double achieved_epsilon = 0.0;
  std::uint64_t original_params = 0;
  std::uint64_t compressed_params = 0;
  double compression = 1.0;  // P(W) / (P(L) + P(S))
};

/// One compress_layer run per budget. The grid must be non-empty and ascending.
std::vector<SweepPoint> sweep_epsilon(const Tensor4& w, std::span<const double> eps_grid, const DecompConfig& cfg);

/// Per-layer accounting line of a compression report.
struct LayerRecord {
  std::size_t index = 0;
  Dims4 dims{1, 1, 1, 1};
  std::size_t rank = 0;
  double achieved_epsilon = 0.0;
  std::uint64_t original_params = 0;    // P(W)
  std::uint64_t low_rank_params = 0;    // P(L)
  std::uint64_t sparse_params = 0;      // P(S)
  bool compressed = false;

  std::uint64_t decomposed_params() const { return low_rank_params + sparse_params; }
  /// Parameters the layer costs in the final model.
  std::uint64_t effective_params() const { return compressed ? decomposed_params() : original_params; }
  double compression() const;

  static LayerRecord from_layer(std::size_t index, const DecomposedLayer& layer);
  static LayerRecord uncompressed(std::size_t index, const Dims4& dims);
};

struct CompressionReport {
  std::vector<LayerRecord> layers;
  std::uint64_t non_conv_params = 0;  // M

  // Ratios as exact integer numerator/denominator pairs.
  std::uint64_t partial_original = 0;    // sum P(W_i) over compressed layers
  std::uint64_t partial_compressed = 0;  // sum P(What_i) over compressed layers
  std::uint64_t total_original = 0;      // sum P(W_i) over all layers + M
  std::uint64_t total_compressed = 0;    // sum of effective params + M

  double partial_compression = 1.0;
  double total_compression = 1.0;
};

CompressionReport aggregate_report(std::span<const LayerRecord> layers, std::uint64_t non_conv_params);

std::string report_json(const CompressionReport& report);
void write_report_csv(std::ostream& out, const CompressionReport& report);

/// Per-layer relative residual budgets; layers absent from the file use the
/// global default. File format: CSV `index,epsilon`.
class EpsilonSchedule {
 public:
  explicit EpsilonSchedule(double global_epsilon) : global_(global_epsilon) {}

  static EpsilonSchedule load(const std::filesystem::path& path, double global_epsilon);
  static EpsilonSchedule parse(std::istream& in, double global_epsilon);

  double for_layer(std::size_t index) const;
  void set(std::size_t index, double epsilon);

 private:
  double global_;
  std::map<std::size_t, double> per_layer_;
};

}  // namespace lrs
