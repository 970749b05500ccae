#include "lrs/catalog.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace lrs {

namespace {

// index, input (c, h, w), kernel (out, in, kx, ky)
constexpr std::array<std::array<std::size_t, 8>, 53> kResnet50 = {{
      {0, 3, 224, 224, 64, 3, 7, 7},
      {1, 64, 56, 56, 64, 64, 1, 1},
      {2, 64, 56, 56, 64, 64, 3, 3},
      {3, 64, 56, 56, 256, 64, 1, 1},
      {4, 64, 56, 56, 256, 64, 1, 1},
      {5, 256, 56, 56, 64, 256, 1, 1},
      {6, 64, 56, 56, 64, 64, 3, 3},
      {7, 64, 56, 56, 256, 64, 1, 1},
      {8, 256, 56, 56, 64, 256, 1, 1},
      {9, 64, 56, 56, 64, 64, 3, 3},
      {10, 64, 56, 56, 256, 64, 1, 1},
      {11, 256, 56, 56, 128, 256, 1, 1},
      {12, 128, 56, 56, 128, 128, 3, 3},
      {13, 128, 28, 28, 512, 128, 1, 1},
      {14, 256, 56, 56, 512, 256, 1, 1},
      {15, 512, 28, 28, 128, 512, 1, 1},
      {16, 128, 28, 28, 128, 128, 3, 3},
      {17, 128, 28, 28, 512, 128, 1, 1},
      {18, 512, 28, 28, 128, 512, 1, 1},
      {19, 128, 28, 28, 128, 128, 3, 3},
      {20, 128, 28, 28, 512, 128, 1, 1},
      {21, 512, 28, 28, 128, 512, 1, 1},
      {22, 128, 28, 28, 128, 128, 3, 3},
      {23, 128, 28, 28, 512, 128, 1, 1},
      {24, 512, 28, 28, 256, 512, 1, 1},
      {25, 256, 28, 28, 256, 256, 3, 3},
      {26, 256, 14, 14, 1024, 256, 1, 1},
      {27, 512, 28, 28, 1024, 512, 1, 1},
      {28, 1024, 14, 14, 256, 1024, 1, 1},
      {29, 256, 14, 14, 256, 256, 3, 3},
      {30, 256, 14, 14, 1024, 256, 1, 1},
      {31, 1024, 14, 14, 256, 1024, 1, 1},
      {32, 256, 14, 14, 256, 256, 3, 3},
      {33, 256, 14, 14, 1024, 256, 1, 1},
      {34, 1024, 14, 14, 256, 1024, 1, 1},
      {35, 256, 14, 14, 256, 256, 3, 3},
      {36, 256, 14, 14, 1024, 256, 1, 1},
      {37, 1024, 14, 14, 256, 1024, 1, 1},
      {38, 256, 14, 14, 256, 256, 3, 3},
      {39, 256, 14, 14, 1024, 256, 1, 1},
      {40, 1024, 14, 14, 256, 1024, 1, 1},
      {41, 256, 14, 14, 256, 256, 3, 3},
      {42, 256, 14, 14, 1024, 256, 1, 1},
      {43, 1024, 14, 14, 512, 1024, 1, 1},
      {44, 512, 14, 14, 512, 512, 3, 3},
      {45, 512, 7, 7, 2048, 512, 1, 1},
      {46, 1024, 14, 14, 2048, 1024, 1, 1},
      {47, 2048, 7, 7, 512, 2048, 1, 1},
      {48, 512, 7, 7, 512, 512, 3, 3},
      {49, 512, 7, 7, 2048, 512, 1, 1},
      {50, 2048, 7, 7, 512, 2048, 1, 1},
      {51, 512, 7, 7, 512, 512, 3, 3},
      {52, 512, 7, 7, 2048, 512, 1, 1},
}};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  return out;
}

std::size_t positive(const std::string& cell, std::size_t line_no) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(cell, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != cell.size() || cell.empty() || v < 0) {
    throw std::invalid_argument("catalog line " + std::to_string(line_no) + ": bad integer '" + cell + "'");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

std::vector<LayerCatalogEntry> resnet50_catalog() {
  std::vector<LayerCatalogEntry> out;
  out.reserve(kResnet50.size());
  for (const auto& r : kResnet50) {
    out.push_back({r[0], r[1], r[2], r[3], r[4], r[6], r[7], std::nullopt});
  }
  return out;
}

std::vector<LayerCatalogEntry> parse_catalog_csv(std::istream& in) {
  static const std::vector<std::string> kHeader = {"index", "in_c", "in_h", "in_w", "out_c", "kx", "ky"};
  std::string line;
  std::size_t line_no = 0;
  std::vector<LayerCatalogEntry> out;
  bool header_seen = false;
  bool has_time = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    auto cells = split_csv_line(line);
    if (!header_seen) {
      has_time = cells.size() == 8 && cells[7] == "dense_time_ms";
      cells.resize(std::min<std::size_t>(cells.size(), 7));
      if (cells != kHeader) throw std::invalid_argument("catalog header must be index,in_c,in_h,in_w,out_c,kx,ky");
      header_seen = true;
      continue;
    }
    const bool width_ok = cells.size() == 7 || (has_time && cells.size() == 8);
    if (!width_ok) {
      throw std::invalid_argument("catalog line " + std::to_string(line_no) + ": wrong column count");
    }
    LayerCatalogEntry e;
    e.index = positive(cells[0], line_no);
    e.in_c = positive(cells[1], line_no);
    e.in_h = positive(cells[2], line_no);
    e.in_w = positive(cells[3], line_no);
    e.out_c = positive(cells[4], line_no);
    e.kx = positive(cells[5], line_no);
    e.ky = positive(cells[6], line_no);
    if (e.in_c == 0 || e.in_h == 0 || e.in_w == 0 || e.out_c == 0 || e.kx == 0 || e.ky == 0) {
      throw std::invalid_argument("catalog line " + std::to_string(line_no) + ": extents must be positive");
    }
    if (cells.size() == 8 && !cells[7].empty()) e.dense_time_ms = std::stod(cells[7]);
    out.push_back(e);
  }
  if (!header_seen) throw std::invalid_argument("catalog is missing its header line");
  return out;
}

std::vector<LayerCatalogEntry> load_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open catalog " + path.string());
  return parse_catalog_csv(in);
}

void write_catalog_csv(std::ostream& out, const std::vector<LayerCatalogEntry>& catalog) {
  out << "index,in_c,in_h,in_w,out_c,kx,ky,dense_time_ms\n";
  for (const auto& e : catalog) {
    out << e.index << ',' << e.in_c << ',' << e.in_h << ',' << e.in_w << ',' << e.out_c << ',' << e.kx << ','
        << e.ky << ',';
    if (e.dense_time_ms) out << *e.dense_time_ms;
    out << '\n';
  }
}

}  // namespace lrs
