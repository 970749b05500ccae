#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "lrs/conv.hpp"
#include "lrs/serialize.hpp"
#include "oracles.hpp"

using namespace lrs;

namespace {

DecomposedLayer random_layer(oracle::Rng& rng, const Dims4& d, std::size_t rank, std::size_t nnz) {
  DecomposedLayer l;
  l.original_dims = d;
  l.rank = rank;
  l.low_rank = rng.factors(d, rank);
  l.sparse = rng.sparse(d, nnz);
  l.achieved_epsilon = std::abs(rng.normal()) * 0.1;
  return l;
}

}  // namespace

TEST_CASE("LRST layout") {
  Tensor4 t({1, 2, 1, 1}, {1.0f, -2.0f});
  const auto bytes = encode_tensor(t);
  REQUIRE(bytes.size() == 4 + 2 + 1 + 1 + 16 + 8);
  CHECK(std::memcmp(bytes.data(), "LRST", 4) == 0);
  CHECK(bytes[4] == 1);  // version, little-endian
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 0);  // f32
  CHECK(bytes[7] == 4);  // ndims
  CHECK(bytes[12] == 2);  // dims[1]
  // 1.0f = 0x3f800000
  CHECK(bytes[24] == 0x00);
  CHECK(bytes[27] == 0x3f);
  CHECK(decode_tensor(bytes) == t);
}

TEST_CASE("LRST rejects malformed input") {
  Tensor4 t({2, 2, 1, 1}, {1, 2, 3, 4});
  auto bytes = encode_tensor(t);
  SUBCASE("magic") {
    bytes[0] = 'X';
    CHECK_THROWS_AS(decode_tensor(bytes), FormatError);
  }
  SUBCASE("version") {
    bytes[4] = 9;
    CHECK_THROWS_AS(decode_tensor(bytes), FormatError);
  }
  SUBCASE("dtype") {
    bytes[6] = 1;
    CHECK_THROWS_AS(decode_tensor(bytes), FormatError);
  }
  SUBCASE("rank") {
    bytes[7] = 3;
    CHECK_THROWS_AS(decode_tensor(bytes), FormatError);
  }
  SUBCASE("truncated") {
    bytes.pop_back();
    CHECK_THROWS_AS(decode_tensor(bytes), FormatError);
  }
  SUBCASE("trailing") {
    bytes.push_back(0);
    CHECK_THROWS_AS(decode_tensor(bytes), FormatError);
  }
}

TEST_CASE("containers round-trip bit-exactly") {
  oracle::Rng rng(201);
  for (int trial = 0; trial < 25; ++trial) {
    const Dims4 d{rng.uniform(1, 8), rng.uniform(1, 8), rng.uniform(1, 3), rng.uniform(1, 3)};
    const Tensor4 t = rng.tensor(d);
    const auto tb = encode_tensor(t);
    CHECK(encode_tensor(decode_tensor(tb)) == tb);

    const auto layer = random_layer(rng, d, rng.uniform(1, 4), rng.uniform(0, numel(d)));
    const auto lb = encode_layer(layer);
    const DecomposedLayer back = decode_layer(lb);
    CHECK(back == layer);
    CHECK(encode_layer(back) == lb);
  }
}

TEST_CASE("LRSD with 32-bit packed indices") {
  oracle::Rng rng(202);
  const auto layer = random_layer(rng, {2, 7282, 3, 3}, 1, 30);
  const auto bytes = encode_layer(layer);
  CHECK(decode_layer(bytes) == layer);
}

TEST_CASE("LRSD rejects inconsistent payloads") {
  oracle::Rng rng(203);
  const auto layer = random_layer(rng, {3, 4, 3, 3}, 2, 5);
  auto bytes = encode_layer(layer);
  const std::size_t entries_at = 4 + 2 + 16 + 4 + 8 + 4 * 2 * (3 + 4 + 3 + 3) + 4;
  SUBCASE("unsorted entries") {
    std::swap_ranges(bytes.begin() + entries_at, bytes.begin() + entries_at + 8, bytes.begin() + entries_at + 8);
    CHECK_THROWS_AS(decode_layer(bytes), FormatError);
  }
  SUBCASE("packed section disagrees with entries") {
    bytes[bytes.size() - 1] ^= 0x01;
    CHECK_THROWS_AS(decode_layer(bytes), FormatError);
  }
  SUBCASE("zero rank") {
    bytes[22] = bytes[23] = bytes[24] = bytes[25] = 0;
    CHECK_THROWS_AS(decode_layer(bytes), FormatError);
  }
  SUBCASE("wrong magic") {
    CHECK_THROWS_AS(decode_layer(encode_tensor(Tensor4({1, 1, 1, 1}))), FormatError);
  }
}

TEST_CASE("file helpers") {
  oracle::Rng rng(204);
  const auto dir = std::filesystem::temp_directory_path() / "lrs_serialize_test";
  std::filesystem::create_directories(dir);
  const Tensor4 t = rng.tensor({3, 2, 3, 3});
  save_tensor(dir / "w.lrst", t);
  CHECK(load_tensor(dir / "w.lrst") == t);
  const auto layer = random_layer(rng, {3, 2, 3, 3}, 2, 4);
  save_layer(dir / "w.lrsd", layer);
  CHECK(load_layer(dir / "w.lrsd") == layer);
  CHECK_THROWS(load_tensor(dir / "missing.lrst"));
  std::filesystem::remove_all(dir);
}
