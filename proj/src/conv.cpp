#include "lrs/conv.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace lrs {

namespace {

std::string shape_str(std::size_t a, std::size_t b, std::size_t c) {
  return "(" + std::to_string(a) + ", " + std::to_string(b) + ", " + std::to_string(c) + ")";
}

void check_input(const FeatureMap& x, const ConvSpec& spec) {
  spec.validate();
  if (x.channels() != spec.in_channels) {
    throw std::invalid_argument("input has " + std::to_string(x.channels()) + " channels, convolution expects " +
                                std::to_string(spec.in_channels));
  }
}

// Output rows/cols o with 0 <= o + shift < extent.
struct Range {
  std::size_t begin, end;
};
Range clip(std::ptrdiff_t shift, std::size_t extent) {
  const auto n = static_cast<std::ptrdiff_t>(extent);
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
  const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n, n - shift);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// out[y][x] += w * in[y + dy][x + dx] over the clipped window.
void shifted_axpy(float* out, const float* in, float w, std::ptrdiff_t dy, std::ptrdiff_t dx, std::size_t h,
                  std::size_t wd) {
  const Range ry = clip(dy, h);
  const Range rx = clip(dx, wd);
  if (rx.begin == rx.end) return;
  for (std::size_t y = ry.begin; y < ry.end; ++y) {
    float* o = out + y * wd;
    const float* s = in + (static_cast<std::ptrdiff_t>(y) + dy) * static_cast<std::ptrdiff_t>(wd) + dx;
    for (std::size_t xx = rx.begin; xx < rx.end; ++xx) o[xx] += w * s[xx];
  }
}

template <typename Index>
void scatter_slices(const SparseKernel& k, std::span<const Index> packed, std::span<const float> values,
                    const float* in, FeatureMap& out, std::ptrdiff_t cx, std::ptrdiff_t cy) {
  const std::size_t taps = k.dims()[2] * k.dims()[3];
  const std::size_t ky = k.dims()[3];
  const std::size_t h = out.height();
  const std::size_t w = out.width();
  for (std::size_t n = 0; n < values.size(); ++n) {
    const std::size_t p = packed[n];
    const std::size_t j = p / taps;
    const std::size_t pos = p % taps;
    const auto dy = static_cast<std::ptrdiff_t>(pos / ky) - cx;
    const auto dx = static_cast<std::ptrdiff_t>(pos % ky) - cy;
    shifted_axpy(out.channel(j).data(), in, values[n], dy, dx, h, w);
  }
}

}  // namespace

FeatureMap::FeatureMap(std::size_t channels, std::size_t height, std::size_t width)
    : c_(channels), h_(height), w_(width), data_(channels * height * width, 0.0f) {}

FeatureMap::FeatureMap(std::size_t channels, std::size_t height, std::size_t width, std::vector<float> data)
    : c_(channels), h_(height), w_(width), data_(std::move(data)) {
  if (data_.size() != c_ * h_ * w_) {
    throw std::invalid_argument("feature map data length does not match " + shape_str(c_, h_, w_));
  }
}

ConvSpec ConvSpec::for_weights(const Dims4& dims) { return {dims[0], dims[1], dims[2], dims[3]}; }

void ConvSpec::validate() const {
  if (in_channels == 0 || out_channels == 0 || kx == 0 || ky == 0) {
    throw std::invalid_argument("convolution extents must be positive");
  }
  if (kx % 2 == 0 || ky % 2 == 0) throw std::invalid_argument("kernel extents must be odd");
}

bool needs_wide_index(const Dims4& dims) { return dims[1] * dims[2] * dims[3] > 65535; }

std::span<const float> SparseKernel::values(std::size_t i) const {
  return std::span<const float>(values_).subspan(offsets_[i], slice_size(i));
}

std::span<const std::uint16_t> SparseKernel::packed16(std::size_t i) const {
  if (wide_) throw std::logic_error("kernel uses 32-bit packed indices");
  return std::span<const std::uint16_t>(packed16_).subspan(offsets_[i], slice_size(i));
}

std::span<const std::uint32_t> SparseKernel::packed32(std::size_t i) const {
  if (!wide_) throw std::logic_error("kernel uses 16-bit packed indices");
  return std::span<const std::uint32_t>(packed32_).subspan(offsets_[i], slice_size(i));
}

SparseKernel::Position SparseKernel::decode(std::uint32_t packed) const {
  const std::size_t taps = dims_[2] * dims_[3];
  const std::size_t pos = packed % taps;
  return {packed / taps, pos / dims_[3], pos % dims_[3]};
}

std::uint32_t SparseKernel::encode(std::size_t out_channel, std::size_t x, std::size_t y) const {
  return static_cast<std::uint32_t>(out_channel * dims_[2] * dims_[3] + x * dims_[3] + y);
}

SparseKernel SparseKernel::from_slices(const Dims4& dims, std::span<const std::uint32_t> slice_lengths,
                                       std::vector<float> values, std::vector<std::uint32_t> packed) {
  if (slice_lengths.size() != dims[0]) throw std::invalid_argument("slice table length must equal input channels");
  if (values.size() != packed.size()) throw std::invalid_argument("value and index arrays differ in length");
  SparseKernel k;
  k.dims_ = dims;
  k.wide_ = needs_wide_index(dims);
  k.offsets_.assign(1, 0);
  for (auto len : slice_lengths) k.offsets_.push_back(k.offsets_.back() + len);
  if (k.offsets_.back() != values.size()) throw std::invalid_argument("slice lengths do not sum to entry count");
  const std::uint64_t limit = static_cast<std::uint64_t>(dims[1]) * dims[2] * dims[3];
  for (auto p : packed) {
    if (p >= limit) throw std::invalid_argument("packed index " + std::to_string(p) + " out of range");
  }
  k.values_ = std::move(values);
  if (k.wide_) {
    k.packed32_ = std::move(packed);
  } else {
    k.packed16_.assign(packed.begin(), packed.end());
  }
  return k;
}

SparseKernel pack_sparse_kernel(const SparseTensor4& s) {
  const Dims4& d = s.dims;
  const std::size_t slice = d[1] * d[2] * d[3];
  std::vector<std::uint32_t> lengths(d[0], 0);
  std::vector<float> values;
  std::vector<std::uint32_t> packed;
  values.reserve(s.nnz());
  packed.reserve(s.nnz());
  // Entries are sorted by linear index, so they already arrive grouped by input
  // channel, and the within-slice offset is exactly the packed index.
  for (const auto& e : s.entries) {
    const std::size_t i = e.index / slice;
    if (i >= d[0]) throw std::invalid_argument("sparse entry index out of range");
    ++lengths[i];
    values.push_back(e.value);
    packed.push_back(static_cast<std::uint32_t>(e.index % slice));
  }
  return SparseKernel::from_slices(d, lengths, std::move(values), std::move(packed));
}

SparseTensor4 unpack_sparse_kernel(const SparseKernel& k) {
  SparseTensor4 out;
  out.dims = k.dims();
  const std::size_t slice = k.dims()[1] * k.dims()[2] * k.dims()[3];
  for (std::size_t i = 0; i < k.dims()[0]; ++i) {
    for (std::size_t n = k.offsets()[i]; n < k.offsets()[i + 1]; ++n) {
      out.entries.push_back({static_cast<std::uint32_t>(i * slice + k.packed_at(n)), k.values(i)[n - k.offsets()[i]]});
    }
  }
  std::sort(out.entries.begin(), out.entries.end(),
            [](const auto& a, const auto& b) { return a.index < b.index; });
  return out;
}

FeatureMap conv_dense(const FeatureMap& x, const Tensor4& w, const ConvSpec& spec) {
  check_input(x, spec);
  if (w.dims() != spec.weight_dims()) throw std::invalid_argument("weight extents do not match convolution spec");
  const std::size_t h = x.height();
  const std::size_t wd = x.width();
  const auto cx = static_cast<std::ptrdiff_t>(spec.kx / 2);
  const auto cy = static_cast<std::ptrdiff_t>(spec.ky / 2);
  FeatureMap out(spec.out_channels, h, wd);
  for (std::size_t j = 0; j < spec.out_channels; ++j) {
    float* o = out.channel(j).data();
    for (std::size_t i = 0; i < spec.in_channels; ++i) {
      const float* in = x.channel(i).data();
      for (std::size_t a = 0; a < spec.kx; ++a)
        for (std::size_t b = 0; b < spec.ky; ++b) {
          shifted_axpy(o, in, w(i, j, a, b), static_cast<std::ptrdiff_t>(a) - cx, static_cast<std::ptrdiff_t>(b) - cy,
                       h, wd);
        }
    }
  }
  return out;
}

FeatureMap conv_cp(const FeatureMap& x, const CpFactors& f, const ConvSpec& spec) {
  check_input(x, spec);
  const std::size_t r = f.rank();
  if (r == 0 || f.dims() != spec.weight_dims() || f.b.cols() != r || f.c.cols() != r || f.d.cols() != r) {
    throw std::invalid_argument("CP factor shapes do not match convolution spec");
  }
  const std::size_t h = x.height();
  const std::size_t wd = x.width();
  const std::size_t plane = x.plane();
  const auto cx = static_cast<std::ptrdiff_t>(spec.kx / 2);
  const auto cy = static_cast<std::ptrdiff_t>(spec.ky / 2);

  // 1x1, I -> r
  FeatureMap ya(r, h, wd);
  for (std::size_t c = 0; c < r; ++c) {
    float* o = ya.channel(c).data();
    for (std::size_t i = 0; i < spec.in_channels; ++i) {
      const float a = f.a(i, c);
      const float* in = x.channel(i).data();
      for (std::size_t p = 0; p < plane; ++p) o[p] += a * in[p];
    }
  }

  // depthwise kx x 1
  FeatureMap yb(r, h, wd);
  for (std::size_t c = 0; c < r; ++c) {
    for (std::size_t a = 0; a < spec.kx; ++a) {
      shifted_axpy(yb.channel(c).data(), ya.channel(c).data(), f.c(a, c), static_cast<std::ptrdiff_t>(a) - cx, 0, h,
                   wd);
    }
  }

  // depthwise 1 x ky
  FeatureMap yc(r, h, wd);
  for (std::size_t c = 0; c < r; ++c) {
    for (std::size_t b = 0; b < spec.ky; ++b) {
      shifted_axpy(yc.channel(c).data(), yb.channel(c).data(), f.d(b, c), 0, static_cast<std::ptrdiff_t>(b) - cy, h,
                   wd);
    }
  }

  // 1x1, r -> J
  FeatureMap out(spec.out_channels, h, wd);
  for (std::size_t j = 0; j < spec.out_channels; ++j) {
    float* o = out.channel(j).data();
    for (std::size_t c = 0; c < r; ++c) {
      const float b = f.b(j, c);
      const float* in = yc.channel(c).data();
      for (std::size_t p = 0; p < plane; ++p) o[p] += b * in[p];
    }
  }
  return out;
}

FeatureMap conv_sparse(const FeatureMap& x, const SparseKernel& k, const ConvSpec& spec) {
  check_input(x, spec);
  if (k.dims() != spec.weight_dims()) throw std::invalid_argument("sparse kernel extents do not match convolution spec");
  const auto cx = static_cast<std::ptrdiff_t>(spec.kx / 2);
  const auto cy = static_cast<std::ptrdiff_t>(spec.ky / 2);
  FeatureMap out(spec.out_channels, x.height(), x.width());
  for (std::size_t i = 0; i < spec.in_channels; ++i) {
    const float* in = x.channel(i).data();
    if (k.wide()) {
      scatter_slices(k, k.packed32(i), k.values(i), in, out, cx, cy);
    } else {
      scatter_slices(k, k.packed16(i), k.values(i), in, out, cx, cy);
    }
  }
  return out;
}

FeatureMap conv_decomposed(const FeatureMap& x, const CpFactors& low_rank, const SparseKernel& sparse,
                           const ConvSpec& spec) {
  FeatureMap out = conv_cp(x, low_rank, spec);
  const FeatureMap s = conv_sparse(x, sparse, spec);
  auto o = out.data();
  auto sd = s.data();
  for (std::size_t n = 0; n < o.size(); ++n) o[n] += sd[n];
  return out;
}

FeatureMap conv_decomposed(const FeatureMap& x, const DecomposedLayer& layer, const ConvSpec& spec) {
  if (layer.original_dims != spec.weight_dims()) throw std::invalid_argument("layer extents do not match convolution spec");
  return conv_decomposed(x, layer.low_rank, pack_sparse_kernel(layer.sparse), spec);
}

}  // namespace lrs
