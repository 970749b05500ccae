#include <doctest.h>

#include <functional>

#include "lrs/conv.hpp"
#include "oracles.hpp"

using namespace lrs;

namespace {

Tensor4 densify(const SparseKernel& k) { return unpack_sparse_kernel(k).to_dense(); }

}  // namespace

TEST_CASE("conv_dense") {
  oracle::Rng rng(101);
  SUBCASE("identity 1x1 kernel") {
    Tensor4 w({3, 3, 1, 1});
    for (std::size_t i = 0; i < 3; ++i) w(i, i, 0, 0) = 1.0f;
    const FeatureMap x = rng.feature_map(3, 5, 4);
    CHECK(conv_dense(x, w, ConvSpec::for_weights(w.dims())) == x);
  }
  SUBCASE("zero kernel") {
    const FeatureMap x = rng.feature_map(2, 4, 4);
    const FeatureMap y = conv_dense(x, Tensor4({2, 3, 3, 3}), {2, 3, 3, 3});
    CHECK(y.channels() == 3);
    for (float v : y.data()) CHECK(v == 0.0f);
  }
  SUBCASE("matches an independent direct loop exactly") {
    const FeatureMap x = rng.feature_map(3, 5, 5);
    const Tensor4 w = rng.tensor({3, 4, 3, 3});
    CHECK(conv_dense(x, w, {3, 4, 3, 3}) == oracle::conv_direct(x, w));
    const FeatureMap x2 = rng.feature_map(2, 6, 9);
    const Tensor4 w2 = rng.tensor({2, 3, 5, 3});
    CHECK(conv_dense(x2, w2, {2, 3, 5, 3}) == oracle::conv_direct(x2, w2));
  }
  SUBCASE("shape errors") {
    const FeatureMap x = rng.feature_map(2, 4, 4);
    CHECK_THROWS_AS(conv_dense(x, Tensor4({3, 3, 3, 3}), {3, 3, 3, 3}), std::invalid_argument);
    CHECK_THROWS_AS(conv_dense(x, Tensor4({2, 3, 1, 1}), {2, 3, 3, 3}), std::invalid_argument);
    CHECK_THROWS_AS(conv_dense(x, Tensor4({2, 3, 2, 2}), {2, 3, 2, 2}), std::invalid_argument);
  }
}

TEST_CASE("conv_cp") {
  oracle::Rng rng(102);
  SUBCASE("rank-1 ones on a ones input") {
    CpFactors f{Matrix(1, 1, {1}), Matrix(1, 1, {1}), Matrix(1, 1, {1}), Matrix(1, 1, {1})};
    FeatureMap x(1, 3, 3, std::vector<float>(9, 1.0f));
    const FeatureMap y = conv_cp(x, f, {1, 1, 1, 1});
    for (float v : y.data()) CHECK(v == 1.0f);
  }
  SUBCASE("rank-1 ones, 4 input channels, 1x1") {
    CpFactors f{Matrix(4, 1, {1, 1, 1, 1}), Matrix(2, 1, {1, 1}), Matrix(1, 1, {1}), Matrix(1, 1, {1})};
    FeatureMap x(4, 2, 2, std::vector<float>(16, 1.0f));
    const FeatureMap y = conv_cp(x, f, {4, 2, 1, 1});
    for (float v : y.data()) CHECK(v == 4.0f);
  }
  SUBCASE("random rank 4, 8x8x3x3 on 8x10x10 matches the dense oracle") {
    const CpFactors f = rng.factors({8, 8, 3, 3}, 4);
    const FeatureMap x = rng.feature_map(8, 10, 10);
    const FeatureMap want = oracle::conv_direct(x, oracle::reconstruct(f));
    CHECK(oracle::rel_error(conv_cp(x, f, {8, 8, 3, 3}).data(), want.data()) < 1e-4);
  }
  SUBCASE("non-square kernel") {
    const CpFactors f = rng.factors({3, 5, 5, 3}, 2);
    const FeatureMap x = rng.feature_map(3, 7, 6);
    const FeatureMap want = oracle::conv_direct(x, oracle::reconstruct(f));
    CHECK(oracle::rel_error(conv_cp(x, f, {3, 5, 5, 3}).data(), want.data()) < 1e-4);
  }
  SUBCASE("equilibrated factors give the same output") {
    CpFactors f = rng.factors({6, 5, 3, 3}, 3);
    for (float& v : f.c.data()) v *= 40.0f;
    const FeatureMap x = rng.feature_map(6, 8, 8);
    const FeatureMap a = conv_cp(x, f, {6, 5, 3, 3});
    const FeatureMap b = conv_cp(x, equilibrate_factors(f), {6, 5, 3, 3});
    CHECK(oracle::rel_error(b.data(), a.data()) < 1e-4);
  }
  SUBCASE("shape errors") {
    const FeatureMap x = rng.feature_map(2, 4, 4);
    CHECK_THROWS_AS(conv_cp(x, rng.factors({3, 2, 3, 3}, 2), {3, 2, 3, 3}), std::invalid_argument);
    CHECK_THROWS_AS(conv_cp(x, rng.factors({2, 2, 1, 3}, 2), {2, 2, 3, 3}), std::invalid_argument);
  }
}

TEST_CASE("pack_sparse_kernel") {
  oracle::Rng rng(103);
  SUBCASE("empty") {
    SparseTensor4 s;
    s.dims = {4, 3, 3, 3};
    const SparseKernel k = pack_sparse_kernel(s);
    CHECK(k.nnz() == 0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(k.slice_size(i) == 0);
  }
  SUBCASE("single entry (i=2, j=5, kx=1, ky=2) in a 3x3 kernel") {
    SparseTensor4 s;
    s.dims = {3, 6, 3, 3};
    Tensor4 t(s.dims);
    s.entries.push_back({static_cast<std::uint32_t>(t.linear(2, 5, 1, 2)), 0.5f});
    const SparseKernel k = pack_sparse_kernel(s);
    CHECK_FALSE(k.wide());
    CHECK(k.slice_size(0) == 0);
    CHECK(k.slice_size(1) == 0);
    REQUIRE(k.slice_size(2) == 1);
    CHECK(k.packed16(2)[0] == 50);
    CHECK(k.values(2)[0] == 0.5f);
    const auto pos = k.decode(50);
    CHECK(pos.out_channel == 5);
    CHECK(pos.x == 1);
    CHECK(pos.y == 2);
    CHECK(k.encode(5, 1, 2) == 50);
  }
  SUBCASE("J=2048 with 3x3 taps still fits 16 bits") {
    const Dims4 d{2, 2048, 3, 3};
    CHECK(2048 * 9 - 1 == 18431);
    CHECK_FALSE(needs_wide_index(d));
    SparseTensor4 s;
    s.dims = d;
    s.entries.push_back({static_cast<std::uint32_t>(Tensor4(d).linear(1, 2047, 2, 2)), 1.0f});
    const SparseKernel k = pack_sparse_kernel(s);
    CHECK_FALSE(k.wide());
    CHECK(k.packed16(1)[0] == 18431);
  }
  SUBCASE("overflow selects 32-bit indices") {
    const Dims4 d{2, 7282, 3, 3};  // 65538 positions
    CHECK(needs_wide_index(d));
    CHECK_FALSE(needs_wide_index({2, 7281, 3, 3}));  // 65529
    const auto s = rng.sparse(d, 50);
    const SparseKernel k = pack_sparse_kernel(s);
    CHECK(k.wide());
    CHECK(unpack_sparse_kernel(k) == s);
  }
  SUBCASE("round trip through packing is exact") {
    for (int trial = 0; trial < 20; ++trial) {
      const Dims4 d{rng.uniform(1, 6), rng.uniform(1, 9), 3, 3};
      const auto s = rng.sparse(d, rng.uniform(0, numel(d)));
      const SparseKernel k = pack_sparse_kernel(s);
      CHECK(k.nnz() == s.nnz());
      CHECK(unpack_sparse_kernel(k) == s);
    }
  }
  SUBCASE("from_slices rejects bad tables") {
    const Dims4 d{2, 2, 1, 1};
    const std::vector<std::uint32_t> lengths{1, 1};
    CHECK_THROWS_AS(SparseKernel::from_slices(d, lengths, {1.0f}, {0}), std::invalid_argument);
    CHECK_THROWS_AS(SparseKernel::from_slices(d, lengths, {1.0f, 2.0f}, {0, 2}), std::invalid_argument);
    CHECK_THROWS_AS(SparseKernel::from_slices(d, std::vector<std::uint32_t>{2}, {1.0f, 2.0f}, {0, 1}),
                    std::invalid_argument);
  }
}

TEST_CASE("conv_sparse") {
  oracle::Rng rng(104);
  SUBCASE("empty kernel gives zero output") {
    SparseTensor4 s;
    s.dims = {3, 2, 3, 3};
    const FeatureMap y = conv_sparse(rng.feature_map(3, 5, 5), pack_sparse_kernel(s), {3, 2, 3, 3});
    for (float v : y.data()) CHECK(v == 0.0f);
  }
  SUBCASE("single center tap copies the channel") {
    SparseTensor4 s;
    s.dims = {2, 2, 3, 3};
    s.entries.push_back({static_cast<std::uint32_t>(Tensor4(s.dims).linear(0, 0, 1, 1)), 1.0f});
    const FeatureMap x = rng.feature_map(2, 6, 5);
    const FeatureMap y = conv_sparse(x, pack_sparse_kernel(s), {2, 2, 3, 3});
    for (std::size_t p = 0; p < x.plane(); ++p) {
      CHECK(y.channel(0)[p] == x.channel(0)[p]);
      CHECK(y.channel(1)[p] == 0.0f);
    }
  }
  SUBCASE("tap one step right and down of center displaces by -1,-1") {
    // Weight at kernel position (2,2) pulls input (y+1, x+1) into output (y, x).
    SparseTensor4 s;
    s.dims = {1, 1, 3, 3};
    s.entries.push_back({8, 2.0f});
    FeatureMap x(1, 3, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    const FeatureMap y = conv_sparse(x, pack_sparse_kernel(s), {1, 1, 3, 3});
    CHECK(y == FeatureMap(1, 3, 3, {10, 12, 0, 16, 18, 0, 0, 0, 0}));
  }
  SUBCASE("1% density 64x64x3x3 on 64x28x28 matches the dense oracle") {
    const Dims4 d{64, 64, 3, 3};
    const auto s = rng.sparse(d, sparse_budget(d, 0.01));
    const SparseKernel k = pack_sparse_kernel(s);
    const FeatureMap x = rng.feature_map(64, 28, 28);
    const FeatureMap want = oracle::conv_direct(x, densify(k));
    CHECK(oracle::rel_error(conv_sparse(x, k, {64, 64, 3, 3}).data(), want.data()) < 1e-5);
  }
  SUBCASE("kernel larger than the input") {
    const Dims4 d{2, 3, 5, 5};
    const auto s = rng.sparse(d, 40);
    const FeatureMap x = rng.feature_map(2, 2, 3);
    const FeatureMap want = oracle::conv_direct(x, s.to_dense());
    CHECK(oracle::rel_error(conv_sparse(x, pack_sparse_kernel(s), {2, 3, 5, 5}).data(), want.data()) < 1e-5);
  }
}

TEST_CASE("conv_decomposed") {
  oracle::Rng rng(105);
  const Dims4 d{6, 5, 3, 3};
  const ConvSpec spec = ConvSpec::for_weights(d);
  const FeatureMap x = rng.feature_map(6, 9, 7);
  DecomposedLayer layer;
  layer.original_dims = d;
  layer.rank = 3;
  layer.low_rank = rng.factors(d, 3);
  layer.sparse = rng.sparse(d, 12);

  SUBCASE("empty sparse term equals conv_cp") {
    DecomposedLayer l = layer;
    l.sparse.entries.clear();
    CHECK(conv_decomposed(x, l, spec) == conv_cp(x, l.low_rank, spec));
  }
  SUBCASE("zero low-rank term equals conv_sparse") {
    DecomposedLayer l = layer;
    l.rank = 1;
    l.low_rank = CpFactors::zeros(d, 1);
    CHECK(conv_decomposed(x, l, spec) == conv_sparse(x, pack_sparse_kernel(l.sparse), spec));
  }
  SUBCASE("matches the dense oracle on L + S") {
    const FeatureMap want = oracle::conv_direct(x, oracle::reconstruct(layer.low_rank) + layer.sparse.to_dense());
    CHECK(oracle::rel_error(conv_decomposed(x, layer, spec).data(), want.data()) < 1e-4);
  }
  SUBCASE("layer shape must match") {
    CHECK_THROWS_AS(conv_decomposed(x, layer, ConvSpec{6, 4, 3, 3}), std::invalid_argument);
  }
}

TEST_CASE("linearity and translation equivariance of every path") {
  oracle::Rng rng(106);
  const Dims4 d{4, 3, 3, 3};
  const ConvSpec spec = ConvSpec::for_weights(d);
  const Tensor4 w = rng.tensor(d);
  const CpFactors f = rng.factors(d, 2);
  const SparseKernel k = pack_sparse_kernel(rng.sparse(d, 10));
  const auto paths = std::vector<std::function<FeatureMap(const FeatureMap&)>>{
      [&](const FeatureMap& x) { return conv_dense(x, w, spec); },
      [&](const FeatureMap& x) { return conv_cp(x, f, spec); },
      [&](const FeatureMap& x) { return conv_sparse(x, k, spec); },
  };

  const FeatureMap x1 = rng.feature_map(4, 8, 8);
  const FeatureMap x2 = rng.feature_map(4, 8, 8);
  FeatureMap combo(4, 8, 8);
  for (std::size_t n = 0; n < combo.data().size(); ++n) combo.data()[n] = 2.5f * x1.data()[n] + x2.data()[n];

  // x shifted down/right by one pixel
  FeatureMap shifted(4, 8, 8);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t y = 1; y < 8; ++y)
      for (std::size_t xx = 1; xx < 8; ++xx) shifted(c, y, xx) = x1(c, y - 1, xx - 1);

  for (const auto& conv : paths) {
    const FeatureMap y1 = conv(x1), y2 = conv(x2), yc = conv(combo);
    std::vector<float> want(yc.data().size());
    for (std::size_t n = 0; n < want.size(); ++n) want[n] = 2.5f * y1.data()[n] + y2.data()[n];
    CHECK(oracle::rel_error(yc.data(), want) < 1e-4);

    const FeatureMap ys = conv(shifted);
    // Interior pixels whose receptive field stays clear of the borders in both inputs.
    for (std::size_t c = 0; c < ys.channels(); ++c)
      for (std::size_t y = 2; y < 7; ++y)
        for (std::size_t xx = 2; xx < 7; ++xx) CHECK(ys(c, y, xx) == doctest::Approx(y1(c, y - 1, xx - 1)).epsilon(1e-5));
  }
}
