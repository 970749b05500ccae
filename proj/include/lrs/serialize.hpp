#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "lrs/decomp.hpp"
#include "lrs/tensor.hpp"

namespace lrs {

// Binary containers, all little-endian.
//
// LRST (dense tensor):
//   "LRST" | u16 version | u8 dtype (0 = f32) | u8 ndims | u32 dims[ndims] | f32 payload
//
// LRSD (decomposed layer):
//   "LRSD" | u16 version | u32 dims[4] | u32 rank | f64 achieved_epsilon
//   | f32 A[I*r] | f32 B[J*r] | f32 C[K*r] | f32 D[T*r]          (row-major)
//   | u32 nnz | nnz * (u32 linear index, f32 value)                (sorted)
//   | u8 index width (2 or 4) | u32 slice_len[I]
//   | for each slice: f32 values[len], u16/u32 packed[len]
//
// The trailing packed-kernel section is redundant with the sorted entries and
// is checked against them on read.

inline constexpr std::uint16_t kContainerVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode_tensor(const Tensor4& t);
Tensor4 decode_tensor(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_layer(const DecomposedLayer& layer);
DecomposedLayer decode_layer(std::span<const std::uint8_t> bytes);

void save_tensor(const std::filesystem::path& path, const Tensor4& t);
Tensor4 load_tensor(const std::filesystem::path& path);
void save_layer(const std::filesystem::path& path, const DecomposedLayer& layer);
DecomposedLayer load_layer(const std::filesystem::path& path);

}  // namespace lrs
