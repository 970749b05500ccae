#include "lrs/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

#include "lrs/conv.hpp"

namespace lrs {

namespace {

constexpr std::string_view kTensorMagic = "LRST";
constexpr std::string_view kLayerMagic = "LRSD";
constexpr std::uint8_t kDtypeF32 = 0;

class Writer {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void f32s(std::span<const float> vs) {
    for (float v : vs) f32(v);
  }

  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  template <typename U>
  void le(U v) {
    for (std::size_t n = 0; n < sizeof(U); ++n) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * n)));
  }

  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void magic(std::string_view m) {
    need(m.size());
    if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0) {
      throw FormatError("bad magic, expected " + std::string(m));
    }
    pos_ += m.size();
  }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16() { return le<std::uint16_t>(); }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::vector<float> f32s(std::size_t n) {
    need(n * 4);
    std::vector<float> out(n);
    for (auto& v : out) v = f32();
    return out;
  }

  void version() {
    const auto v = u16();
    if (v != kContainerVersion) throw FormatError("unsupported container version " + std::to_string(v));
  }
  void finish() const {
    if (pos_ != bytes_.size()) throw FormatError("trailing bytes after container payload");
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("truncated container");
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t n = 0; n < sizeof(U); ++n) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + n]) << (8 * n));
    pos_ += sizeof(U);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw FormatError(std::string(what) + " exceeds 32 bits");
  return static_cast<std::uint32_t>(v);
}

Dims4 read_dims(Reader& r) {
  Dims4 dims{};
  for (auto& d : dims) {
    d = r.u32();
    if (d == 0) throw FormatError("zero extent in container");
  }
  return dims;
}

Matrix read_matrix(Reader& r, std::size_t rows, std::size_t cols) { return Matrix(rows, cols, r.f32s(rows * cols)); }

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor4& t) {
  Writer w;
  w.magic(kTensorMagic);
  w.u16(kContainerVersion);
  w.u8(kDtypeF32);
  w.u8(4);
  for (auto d : t.dims()) w.u32(checked_u32(d, "extent"));
  w.f32s(t.data());
  return w.take();
}

Tensor4 decode_tensor(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kTensorMagic);
  r.version();
  if (const auto dtype = r.u8(); dtype != kDtypeF32) throw FormatError("unsupported dtype tag " + std::to_string(dtype));
  if (const auto nd = r.u8(); nd != 4) throw FormatError("expected an order-4 tensor, got " + std::to_string(nd) + " dims");
  const Dims4 dims = read_dims(r);
  Tensor4 t(dims, r.f32s(numel(dims)));
  r.finish();
  return t;
}

std::vector<std::uint8_t> encode_layer(const DecomposedLayer& layer) {
  const Dims4& dims = layer.original_dims;
  if (layer.low_rank.dims() != dims || layer.low_rank.rank() != layer.rank || layer.sparse.dims != dims) {
    throw std::invalid_argument("decomposed layer parts disagree on shape");
  }
  Writer w;
  w.magic(kLayerMagic);
  w.u16(kContainerVersion);
  for (auto d : dims) w.u32(checked_u32(d, "extent"));
  w.u32(checked_u32(layer.rank, "rank"));
  w.f64(layer.achieved_epsilon);
  for (int n = 0; n < 4; ++n) w.f32s(layer.low_rank.factor(n).data());

  w.u32(checked_u32(layer.sparse.nnz(), "entry count"));
  for (const auto& e : layer.sparse.entries) {
    w.u32(e.index);
    w.f32(e.value);
  }

  const SparseKernel k = pack_sparse_kernel(layer.sparse);
  w.u8(k.wide() ? 4 : 2);
  for (std::size_t i = 0; i < dims[0]; ++i) w.u32(checked_u32(k.slice_size(i), "slice length"));
  for (std::size_t i = 0; i < dims[0]; ++i) {
    w.f32s(k.values(i));
    if (k.wide()) {
      for (auto p : k.packed32(i)) w.u32(p);
    } else {
      for (auto p : k.packed16(i)) w.u16(p);
    }
  }
  return w.take();
}

DecomposedLayer decode_layer(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kLayerMagic);
  r.version();
  DecomposedLayer layer;
  layer.original_dims = read_dims(r);
  const Dims4& dims = layer.original_dims;
  layer.rank = r.u32();
  if (layer.rank == 0) throw FormatError("rank must be >= 1");
  layer.achieved_epsilon = r.f64();
  for (int n = 0; n < 4; ++n) layer.low_rank.factor(n) = read_matrix(r, dims[n], layer.rank);

  const std::uint32_t nnz = r.u32();
  layer.sparse.dims = dims;
  layer.sparse.entries.reserve(nnz);
  const std::size_t total = numel(dims);
  for (std::uint32_t n = 0; n < nnz; ++n) {
    const std::uint32_t idx = r.u32();
    const float v = r.f32();
    if (idx >= total) throw FormatError("sparse index out of range");
    if (!layer.sparse.entries.empty() && idx <= layer.sparse.entries.back().index) {
      throw FormatError("sparse indices must be strictly increasing");
    }
    layer.sparse.entries.push_back({idx, v});
  }

  const std::uint8_t width = r.u8();
  if (width != (needs_wide_index(dims) ? 4 : 2)) throw FormatError("packed index width does not match kernel shape");
  std::vector<std::uint32_t> lengths(dims[0]);
  for (auto& len : lengths) len = r.u32();
  std::vector<float> values;
  std::vector<std::uint32_t> packed;
  for (auto len : lengths) {
    auto vs = r.f32s(len);
    values.insert(values.end(), vs.begin(), vs.end());
    for (std::uint32_t n = 0; n < len; ++n) packed.push_back(width == 4 ? r.u32() : r.u16());
  }
  r.finish();

  SparseKernel k;
  try {
    k = SparseKernel::from_slices(dims, lengths, std::move(values), std::move(packed));
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("bad packed kernel: ") + e.what());
  }
  if (!(k == pack_sparse_kernel(layer.sparse))) throw FormatError("packed kernel disagrees with sparse entries");
  return layer;
}

void save_tensor(const std::filesystem::path& path, const Tensor4& t) { write_file(path, encode_tensor(t)); }
Tensor4 load_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path)); }
void save_layer(const std::filesystem::path& path, const DecomposedLayer& layer) {
  write_file(path, encode_layer(layer));
}
DecomposedLayer load_layer(const std::filesystem::path& path) { return decode_layer(read_file(path)); }

}  // namespace lrs
