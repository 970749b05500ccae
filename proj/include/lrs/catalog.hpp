#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "lrs/tensor.hpp"

namespace lrs {

/// One convolution layer: its input activation shape and kernel shape.
struct LayerCatalogEntry {
  std::size_t index = 0;
  std::size_t in_c = 1, in_h = 1, in_w = 1;
  std::size_t out_c = 1, kx = 1, ky = 1;
  std::optional<double> dense_time_ms;

  /// Weight extents in (in, out, kx, ky) order.
  Dims4 weight_dims() const { return {in_c, out_c, kx, ky}; }
  std::uint64_t param_count() const { return static_cast<std::uint64_t>(in_c) * out_c * kx * ky; }

  bool operator==(const LayerCatalogEntry&) const = default;
};

/// The 53 ResNet-50 convolution layers, kernel shapes as (out, in, kx, ky).
std::vector<LayerCatalogEntry> resnet50_catalog();

/// CSV with header `index,in_c,in_h,in_w,out_c,kx,ky` and an optional trailing
/// `dense_time_ms` column.
std::vector<LayerCatalogEntry> parse_catalog_csv(std::istream& in);
std::vector<LayerCatalogEntry> load_catalog(const std::filesystem::path& path);
void write_catalog_csv(std::ostream& out, const std::vector<LayerCatalogEntry>& catalog);

}  // namespace lrs
