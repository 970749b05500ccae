#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "lrs/decomp.hpp"
#include "lrs/tensor.hpp"

namespace lrs {

/// Activation tensor, row-major over (channel, row, column).
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::size_t channels, std::size_t height, std::size_t width);
  FeatureMap(std::size_t channels, std::size_t height, std::size_t width, std::vector<float> data);

  std::size_t channels() const { return c_; }
  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t plane() const { return h_ * w_; }

  float& operator()(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * h_ + y) * w_ + x]; }
  float operator()(std::size_t c, std::size_t y, std::size_t x) const { return data_[(c * h_ + y) * w_ + x]; }

  std::span<float> channel(std::size_t c) { return std::span<float>(data_).subspan(c * plane(), plane()); }
  std::span<const float> channel(std::size_t c) const {
    return std::span<const float>(data_).subspan(c * plane(), plane());
  }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  bool operator==(const FeatureMap&) const = default;

 private:
  std::size_t c_ = 0, h_ = 0, w_ = 0;
  std::vector<float> data_;
};

/// Stride-1 convolution with "same" zero padding of (kx/2, ky/2). Kernel
/// extents must be odd so that the kernel has a center tap.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kx = 1;
  std::size_t ky = 1;

  static ConvSpec for_weights(const Dims4& dims);
  Dims4 weight_dims() const { return {in_channels, out_channels, kx, ky}; }
  void validate() const;
};

/// Sparse kernel grouped by input channel. Each entry stores its value and a
/// packed index out_channel * (kx*ky) + (x * ky + y); indices are 16-bit
/// unless out_channels * kx * ky exceeds 65535.
class SparseKernel {
 public:
  SparseKernel() = default;

  const Dims4& dims() const { return dims_; }
  bool wide() const { return wide_; }
  std::size_t nnz() const { return values_.size(); }

  std::size_t slice_size(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }
  std::span<const float> values(std::size_t i) const;
  std::span<const std::uint16_t> packed16(std::size_t i) const;
  std::span<const std::uint32_t> packed32(std::size_t i) const;
  std::uint32_t packed_at(std::size_t n) const { return wide_ ? packed32_[n] : packed16_[n]; }

  std::span<const std::size_t> offsets() const { return offsets_; }

  struct Position {
    std::size_t out_channel, x, y;
  };
  Position decode(std::uint32_t packed) const;
  std::uint32_t encode(std::size_t out_channel, std::size_t x, std::size_t y) const;

  /// Builds a kernel from per-slice lengths plus flat value and index arrays;
  /// validates every index.
  static SparseKernel from_slices(const Dims4& dims, std::span<const std::uint32_t> slice_lengths,
                                  std::vector<float> values, std::vector<std::uint32_t> packed);

  bool operator==(const SparseKernel&) const = default;

 private:
  Dims4 dims_{1, 1, 1, 1};
  bool wide_ = false;
  std::vector<std::size_t> offsets_ = {0, 0};
  std::vector<float> values_;
  std::vector<std::uint16_t> packed16_;
  std::vector<std::uint32_t> packed32_;
};

/// True when packed indices for out_channels * kx * ky positions need 32 bits.
bool needs_wide_index(const Dims4& dims);

SparseKernel pack_sparse_kernel(const SparseTensor4& s);
SparseTensor4 unpack_sparse_kernel(const SparseKernel& k);

/// Direct nested-loop convolution; the reference for the other paths.
FeatureMap conv_dense(const FeatureMap& x, const Tensor4& w, const ConvSpec& spec);

/// Four-stage CP convolution: 1x1 with A (I -> r), depthwise kx x 1 with C,
/// depthwise 1 x ky with D, 1x1 with B (r -> J).
FeatureMap conv_cp(const FeatureMap& x, const CpFactors& f, const ConvSpec& spec);

/// Scatter-add sparse convolution. Each input plane is swept contiguously per
/// kernel entry and accumulated into a displaced, border-clipped output window.
FeatureMap conv_sparse(const FeatureMap& x, const SparseKernel& k, const ConvSpec& spec);

/// conv_cp + conv_sparse, summed element-wise.
FeatureMap conv_decomposed(const FeatureMap& x, const DecomposedLayer& layer, const ConvSpec& spec);
FeatureMap conv_decomposed(const FeatureMap& x, const CpFactors& low_rank, const SparseKernel& sparse,
                           const ConvSpec& spec);

}  // namespace lrs
