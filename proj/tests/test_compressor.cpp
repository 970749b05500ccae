#include <doctest.h>

#include <json.hpp>
#include <numeric>
#include <set>
#include <sstream>

#include "lrs/catalog.hpp"
#include "lrs/compressor.hpp"
#include "oracles.hpp"

using namespace lrs;

namespace {

LayerRecord record(std::size_t index, const Dims4& d, std::size_t rank, std::size_t nnz) {
  DecomposedLayer l;
  l.original_dims = d;
  l.rank = rank;
  l.low_rank = CpFactors::zeros(d, rank);
  oracle::Rng rng(index);
  l.sparse = rng.sparse(d, nnz);
  return LayerRecord::from_layer(index, l);
}

}  // namespace

TEST_CASE("catalog") {
  const auto cat = resnet50_catalog();
  REQUIRE(cat.size() == 53);
  CHECK(cat[2].weight_dims() == Dims4{64, 64, 3, 3});
  CHECK(cat[2].param_count() == 36864);
  CHECK(cat[47].param_count() == 1048576);
  CHECK(cat[50].param_count() == 1048576);
  CHECK(cat[50].in_h == 7);
  for (std::size_t n = 0; n < cat.size(); ++n) CHECK(cat[n].index == n);

  SUBCASE("csv round trip") {
    std::stringstream ss;
    write_catalog_csv(ss, cat);
    CHECK(parse_catalog_csv(ss) == cat);
  }
  SUBCASE("optional timing column and comments") {
    std::stringstream ss("# toy\nindex,in_c,in_h,in_w,out_c,kx,ky,dense_time_ms\n\n0,3,8,8,4,3,3,1.5\n1,4,8,8,4,1,1,\n");
    const auto c = parse_catalog_csv(ss);
    REQUIRE(c.size() == 2);
    CHECK(c[0].dense_time_ms == 1.5);
    CHECK_FALSE(c[1].dense_time_ms.has_value());
  }
  SUBCASE("bad header") {
    std::stringstream ss("idx,in_c,in_h,in_w,out_c,kx,ky\n");
    CHECK_THROWS(parse_catalog_csv(ss));
  }
  SUBCASE("bad cell") {
    std::stringstream ss("index,in_c,in_h,in_w,out_c,kx,ky\n0,3,x,8,4,3,3\n");
    CHECK_THROWS(parse_catalog_csv(ss));
  }
}

TEST_CASE("order_layers") {
  SUBCASE("single layer") {
    const std::vector<LayerCatalogEntry> one{{}};
    CHECK(order_layers(one) == std::vector<std::size_t>{0});
  }
  SUBCASE("equal sizes keep catalog order") {
    std::vector<LayerCatalogEntry> c(3);
    for (std::size_t n = 0; n < 3; ++n) c[n] = {n, 4, 8, 8, 4, 3, 3, {}};
    CHECK(order_layers(c) == std::vector<std::size_t>{0, 1, 2});
  }
  SUBCASE("largest first on the catalog") {
    const auto cat = resnet50_catalog();
    const auto order = order_layers(cat);
    std::set<std::size_t> seen(order.begin(), order.end());
    CHECK(seen.size() == cat.size());
    CHECK(*seen.rbegin() == cat.size() - 1);
    for (std::size_t n = 1; n < order.size(); ++n) {
      CHECK(cat[order[n - 1]].param_count() >= cat[order[n]].param_count());
      if (cat[order[n - 1]].param_count() == cat[order[n]].param_count()) CHECK(order[n - 1] < order[n]);
    }
  }
}

TEST_CASE("compress_layer") {
  SUBCASE("1x1x1x1 weight cannot be compressed") {
    const Tensor4 w({1, 1, 1, 1}, {2.0f});
    DecompConfig cfg;
    const auto layer = compress_layer(w, cfg);
    CHECK(layer.rank == 1);
    CHECK_FALSE(layer.compressed());
    CHECK_FALSE(LayerRecord::from_layer(0, layer).compressed);
  }
  SUBCASE("planted rank 3 with spikes on 64x64x3x3") {
    const auto p = oracle::planted({64, 64, 3, 3}, 3, 0.01, 11);
    DecompConfig cfg;
    cfg.epsilon = 1e-2;
    const auto layer = compress_layer(p.w, cfg);
    CHECK(layer.rank == 3);
    CHECK(layer.achieved_epsilon <= 1e-2);
    const auto counts = layer.param_counts();
    CHECK(counts.original == 36864);
    CHECK(counts.low_rank == 402);
    CHECK(counts.sparse == 618);
    CHECK(LayerRecord::from_layer(2, layer).compression() == doctest::Approx(36864.0 / 1020.0));
  }
}

TEST_CASE("sweep_epsilon") {
  oracle::Rng rng(31);
  const Tensor4 w = rng.tensor({6, 6, 3, 3});
  DecompConfig cfg;
  SUBCASE("loose budget gives rank 1") {
    const std::vector<double> grid{0.99};
    const auto pts = sweep_epsilon(w, grid, cfg);
    REQUIRE(pts.size() == 1);
    CHECK(pts[0].rank == 1);
  }
  SUBCASE("compression non-decreasing in epsilon") {
    const std::vector<double> grid{0.1, 0.3, 0.5};
    const auto pts = sweep_epsilon(w, grid, cfg);
    REQUIRE(pts.size() == 3);
    for (std::size_t n = 0; n < pts.size(); ++n) CHECK(pts[n].achieved_epsilon <= grid[n]);
    for (std::size_t n = 1; n < pts.size(); ++n) {
      CHECK(pts[n].compression >= pts[n - 1].compression);
      CHECK(pts[n].rank <= pts[n - 1].rank);
    }
  }
  SUBCASE("grid errors") {
    CHECK_THROWS_AS(sweep_epsilon(w, std::vector<double>{}, cfg), std::invalid_argument);
    CHECK_THROWS_AS(sweep_epsilon(w, std::vector<double>{0.5, 0.1}, cfg), std::invalid_argument);
  }
}

TEST_CASE("aggregate_report") {
  SUBCASE("nothing compressed") {
    const std::vector<LayerRecord> l{LayerRecord::uncompressed(0, {4, 4, 3, 3})};
    const auto r = aggregate_report(l, 100);
    CHECK(r.partial_compression == 1.0);
    CHECK(r.total_compression == 1.0);
    CHECK(r.total_original == 244);
  }
  SUBCASE("one layer halved") {
    LayerRecord rec;
    rec.original_params = 100;
    rec.low_rank_params = 30;
    rec.sparse_params = 20;
    rec.compressed = true;
    const std::vector<LayerRecord> l{rec};
    const auto r = aggregate_report(l, 0);
    CHECK(r.partial_compression == 2.0);
    CHECK(r.total_compression == 2.0);
  }
  SUBCASE("three-layer model by hand") {
    const std::vector<LayerRecord> l{record(0, {64, 64, 3, 3}, 3, 369), record(1, {16, 32, 1, 1}, 10, 5),
                                     record(2, {8, 8, 3, 3}, 2, 6)};
    CHECK(l[0].low_rank_params == 402);
    CHECK(l[0].sparse_params == 618);
    CHECK(l[0].compressed);
    CHECK(l[1].low_rank_params == 500);
    CHECK(l[1].sparse_params == 24);
    CHECK_FALSE(l[1].compressed);
    CHECK(l[2].low_rank_params == 44);
    CHECK(l[2].sparse_params == 17);
    CHECK(l[2].compressed);

    const auto r = aggregate_report(l, 1000);
    CHECK(r.partial_original == 37440);
    CHECK(r.partial_compressed == 1081);
    CHECK(r.total_original == 38952);
    CHECK(r.total_compressed == 2593);
    CHECK(r.partial_compression == 37440.0 / 1081.0);
    CHECK(r.total_compression == 38952.0 / 2593.0);
    CHECK(r.partial_compression >= r.total_compression);

    const auto j = nlohmann::json::parse(report_json(r));
    CHECK(j["total"]["compressed"] == 2593);
    CHECK(j["layers"].size() == 3);
    std::stringstream csv;
    write_report_csv(csv, r);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(csv, line)) ++lines;
    CHECK(lines == 4);
  }
  SUBCASE("partial at least total on random records") {
    oracle::Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<LayerRecord> l;
      for (std::size_t n = 0; n < 5; ++n) {
        const Dims4 d{rng.uniform(1, 16), rng.uniform(1, 16), 3, 3};
        l.push_back(record(n, d, rng.uniform(1, 4), rng.uniform(0, numel(d) / 20)));
      }
      const auto r = aggregate_report(l, rng.uniform(0, 1000));
      const bool any_uncompressed = std::any_of(l.begin(), l.end(), [](const auto& x) { return !x.compressed; });
      if (any_uncompressed && r.partial_compressed > 0) CHECK(r.partial_compression >= r.total_compression);
    }
  }
}

TEST_CASE("EpsilonSchedule") {
  std::stringstream ss("index,epsilon\n# late layers get more room\n3,0.2\n50,0.4\n");
  const auto s = EpsilonSchedule::parse(ss, 0.1);
  CHECK(s.for_layer(0) == 0.1);
  CHECK(s.for_layer(3) == 0.2);
  CHECK(s.for_layer(50) == 0.4);
  std::stringstream bad("3;0.2\n");
  CHECK_THROWS(EpsilonSchedule::parse(bad, 0.1));
  std::stringstream out_of_range("3,1.5\n");
  CHECK_THROWS(EpsilonSchedule::parse(out_of_range, 0.1));
}
