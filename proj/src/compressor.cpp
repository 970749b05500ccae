#include "lrs/compressor.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <json.hpp>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace lrs {

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

DecomposedLayer compress_layer(const Tensor4& w, const DecompConfig& cfg) {
  DecomposedLayer layer = search_min_rank(w, cfg);
  layer.low_rank = equilibrate_factors(layer.low_rank);
  return layer;
}

std::vector<std::size_t> order_layers(std::span<const LayerCatalogEntry> catalog) {
  std::vector<std::size_t> order(catalog.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return catalog[a].param_count() > catalog[b].param_count();
  });
  return order;
}

std::vector<SweepPoint> sweep_epsilon(const Tensor4& w, std::span<const double> eps_grid, const DecompConfig& cfg) {
  if (eps_grid.empty()) throw std::invalid_argument("epsilon grid is empty");
  if (!std::is_sorted(eps_grid.begin(), eps_grid.end())) throw std::invalid_argument("epsilon grid must be ascending");
  std::vector<SweepPoint> out;
  out.reserve(eps_grid.size());
  for (double eps : eps_grid) {
    DecompConfig c = cfg;
    c.epsilon = eps;
    const DecomposedLayer layer = compress_layer(w, c);
    const ParamCounts p = layer.param_counts();
    out.push_back({eps, layer.rank, layer.achieved_epsilon, p.original, p.compressed(),
                   ratio(p.original, p.compressed())});
  }
  return out;
}

double LayerRecord::compression() const { return ratio(original_params, decomposed_params()); }

LayerRecord LayerRecord::from_layer(std::size_t index, const DecomposedLayer& layer) {
  const ParamCounts p = layer.param_counts();
  LayerRecord r;
  r.index = index;
  r.dims = layer.original_dims;
  r.rank = layer.rank;
  r.achieved_epsilon = layer.achieved_epsilon;
  r.original_params = p.original;
  r.low_rank_params = p.low_rank;
  r.sparse_params = p.sparse;
  r.compressed = layer.compressed();
  return r;
}

LayerRecord LayerRecord::uncompressed(std::size_t index, const Dims4& dims) {
  LayerRecord r;
  r.index = index;
  r.dims = dims;
  r.original_params = dense_param_count(dims);
  r.compressed = false;
  return r;
}

CompressionReport aggregate_report(std::span<const LayerRecord> layers, std::uint64_t non_conv_params) {
  CompressionReport rep;
  rep.layers.assign(layers.begin(), layers.end());
  rep.non_conv_params = non_conv_params;
  rep.total_original = non_conv_params;
  rep.total_compressed = non_conv_params;
  for (const auto& l : layers) {
    rep.total_original += l.original_params;
    rep.total_compressed += l.effective_params();
    if (l.compressed) {
      rep.partial_original += l.original_params;
      rep.partial_compressed += l.decomposed_params();
    }
  }
  rep.partial_compression = ratio(rep.partial_original, rep.partial_compressed);
  rep.total_compression = ratio(rep.total_original, rep.total_compressed);
  return rep;
}

std::string report_json(const CompressionReport& report) {
  nlohmann::json j;
  j["non_conv_params"] = report.non_conv_params;
  j["partial"] = {{"original", report.partial_original},
                  {"compressed", report.partial_compressed},
                  {"compression", report.partial_compression}};
  j["total"] = {{"original", report.total_original},
                {"compressed", report.total_compressed},
                {"compression", report.total_compression}};
  auto& layers = j["layers"] = nlohmann::json::array();
  for (const auto& l : report.layers) {
    layers.push_back({{"index", l.index},
                      {"dims", l.dims},
                      {"rank", l.rank},
                      {"achieved_epsilon", l.achieved_epsilon},
                      {"p_w", l.original_params},
                      {"p_l", l.low_rank_params},
                      {"p_s", l.sparse_params},
                      {"compression", l.compression()},
                      {"compressed", l.compressed}});
  }
  return j.dump(2);
}

void write_report_csv(std::ostream& out, const CompressionReport& report) {
  out << "index,I,J,K,T,rank,achieved_epsilon,p_w,p_l,p_s,compression,compressed\n";
  for (const auto& l : report.layers) {
    out << l.index << ',' << l.dims[0] << ',' << l.dims[1] << ',' << l.dims[2] << ',' << l.dims[3] << ',' << l.rank
        << ',' << l.achieved_epsilon << ',' << l.original_params << ',' << l.low_rank_params << ','
        << l.sparse_params << ',' << l.compression() << ',' << (l.compressed ? 1 : 0) << '\n';
  }
}

EpsilonSchedule EpsilonSchedule::load(const std::filesystem::path& path, double global_epsilon) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open schedule " + path.string());
  return parse(in, global_epsilon);
}

EpsilonSchedule EpsilonSchedule::parse(std::istream& in, double global_epsilon) {
  EpsilonSchedule s(global_epsilon);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    if (line.rfind("index", 0) == 0) continue;
    std::stringstream ss(line);
    std::size_t index = 0;
    char comma = 0;
    double eps = 0.0;
    if (!(ss >> index >> comma >> eps) || comma != ',') {
      throw std::invalid_argument("schedule line " + std::to_string(line_no) + ": expected index,epsilon");
    }
    s.set(index, eps);
  }
  return s;
}

double EpsilonSchedule::for_layer(std::size_t index) const {
  const auto it = per_layer_.find(index);
  return it == per_layer_.end() ? global_ : it->second;
}

void EpsilonSchedule::set(std::size_t index, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("schedule epsilon must lie in (0, 1)");
  per_layer_[index] = epsilon;
}

}  // namespace lrs
