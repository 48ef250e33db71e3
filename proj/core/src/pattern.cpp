#include "smo/pattern.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "smo/errors.hpp"
#include "smo/pgm.hpp"

namespace smo {

std::vector<Rect> parse_rect_list(std::istream& in) {
  std::vector<Rect> rects;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;  // blank
    if (tag != "RECT") throw ParseError("expected RECT, got '" + tag + "'", lineno);
    Rect r;
    if (!(ls >> r.x1 >> r.y1 >> r.x2 >> r.y2))
      throw ParseError("RECT requires four integer coordinates", lineno);
    std::string extra;
    if (ls >> extra) throw ParseError("trailing token '" + extra + "'", lineno);
    if (r.x1 >= r.x2 || r.y1 >= r.y2)
      throw ParseError("degenerate rectangle (require x1 < x2 and y1 < y2)", lineno);
    rects.push_back(r);
  }
  return rects;
}

namespace {

// Boundary edges of the raster, merged along maximal runs. Grid coordinates
// are converted to nm with the lower-left origin.
std::vector<EdgeSegment> extract_edges(const RealGrid& px, double pixel_nm) {
  const int n_rows = static_cast<int>(px.rows());
  const int n_cols = static_cast<int>(px.cols());
  auto set = [&](int r, int c) {
    return r >= 0 && c >= 0 && r < n_rows && c < n_cols && px(r, c) >= 0.5;
  };

  std::vector<EdgeSegment> edges;
  // Horizontal boundaries: runs along x at y = r*p (bottom) and (r+1)*p (top).
  for (int r = 0; r < n_rows; ++r) {
    for (int side = 0; side < 2; ++side) {  // 0: bottom, 1: top
      const int inward_dy = side == 0 ? 1 : -1;
      const double y = (r + side) * pixel_nm;
      int c = 0;
      while (c < n_cols) {
        if (set(r, c) && !set(r + (side == 0 ? -1 : 1), c)) {
          const int start = c;
          while (c < n_cols && set(r, c) && !set(r + (side == 0 ? -1 : 1), c)) ++c;
          edges.push_back({start * pixel_nm, y, c * pixel_nm, y, 0, inward_dy});
        } else {
          ++c;
        }
      }
    }
  }
  // Vertical boundaries.
  for (int c = 0; c < n_cols; ++c) {
    for (int side = 0; side < 2; ++side) {  // 0: left, 1: right
      const int inward_dx = side == 0 ? 1 : -1;
      const double x = (c + side) * pixel_nm;
      int r = 0;
      while (r < n_rows) {
        if (set(r, c) && !set(r, c + (side == 0 ? -1 : 1))) {
          const int start = r;
          while (r < n_rows && set(r, c) && !set(r, c + (side == 0 ? -1 : 1))) ++r;
          edges.push_back({x, start * pixel_nm, x, r * pixel_nm, inward_dx, 0});
        } else {
          ++r;
        }
      }
    }
  }
  return edges;
}

}  // namespace

TargetPattern pattern_from_raster(const RealGrid& binary, const OpticalConfig& cfg) {
  if (binary.rows() != cfg.n_mask || binary.cols() != cfg.n_mask)
    throw ValidationError("raster dimensions do not match n_mask");
  TargetPattern t;
  t.pixels = (binary >= 0.5).cast<double>();
  t.edges = extract_edges(t.pixels, cfg.pixel_nm);
  return t;
}

TargetPattern pattern_from_rects(const std::vector<Rect>& rects, const OpticalConfig& cfg) {
  const double tile = cfg.tile_nm();
  const double p = cfg.pixel_nm;
  const int n = cfg.n_mask;
  RealGrid px = RealGrid::Zero(n, n);
  for (const Rect& r : rects) {
    if (r.x1 < 0 || r.y1 < 0 || r.x2 > tile || r.y2 > tile)
      throw ValidationError("rectangle outside the tile [0," + std::to_string((long)tile) + ")^2");
    // A pixel belongs to the rectangle when its center does.
    const double eps = 1e-9;
    const int c_min = std::max(0, (int)std::ceil(r.x1 / p - 0.5 - eps));
    const int c_max = std::min(n - 1, (int)std::ceil(r.x2 / p - 0.5 - eps) - 1);
    const int r_min = std::max(0, (int)std::ceil(r.y1 / p - 0.5 - eps));
    const int r_max = std::min(n - 1, (int)std::ceil(r.y2 / p - 0.5 - eps) - 1);
    for (int rr = r_min; rr <= r_max; ++rr)
      for (int cc = c_min; cc <= c_max; ++cc) px(rr, cc) = 1.0;
  }
  TargetPattern t;
  t.pixels = px;
  t.edges = extract_edges(px, p);
  return t;
}

namespace {

TargetPattern pattern_from_pgm(const std::string& path, const OpticalConfig& cfg) {
  PgmImage img = read_pgm(path);
  if (img.width != img.height) throw ValidationError("pattern raster must be square");
  const int n = cfg.n_mask;
  RealGrid binary = (img.values >= 0.5).cast<double>();
  if (img.width == n) return pattern_from_raster(binary, cfg);
  if (img.width > n) {
    if (img.width % n != 0)
      throw ValidationError("raster size must match n_mask up to an integer factor");
    const int f = img.width / n;
    RealGrid down(n, n);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        // Majority vote over the f x f block.
        double s = binary.block(r * f, c * f, f, f).sum();
        down(r, c) = s * 2.0 >= f * f ? 1.0 : 0.0;
      }
    return pattern_from_raster(down, cfg);
  }
  if (n % img.width != 0)
    throw ValidationError("raster size must match n_mask up to an integer factor");
  const int f = n / img.width;
  RealGrid up(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) up(r, c) = binary(r / f, c / f);
  return pattern_from_raster(up, cfg);
}

bool looks_like_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  char m[2] = {0, 0};
  f.read(m, 2);
  return f && m[0] == 'P' && (m[1] == '2' || m[1] == '5');
}

}  // namespace

TargetPattern ingest_pattern(const std::string& path, const OpticalConfig& cfg) {
  if (path.rfind("suite:", 0) == 0) return suite_target(path.substr(6), cfg);
  std::ifstream probe(path);
  if (!probe) throw ValidationError("cannot open pattern file: " + path);
  probe.close();
  if (looks_like_pgm(path)) return pattern_from_pgm(path, cfg);
  std::ifstream f(path);
  return pattern_from_rects(parse_rect_list(f), cfg);
}

void write_rect_list(const std::string& path, const std::vector<Rect>& rects) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write " + path);
  for (const Rect& r : rects)
    f << "RECT " << r.x1 << " " << r.y1 << " " << r.x2 << " " << r.y2 << "\n";
}

namespace {

struct SplitMix64 {
  std::uint64_t state;
  explicit SplitMix64(std::uint64_t seed) : state(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  long range(long lo, long hi) {  // inclusive bounds
    return lo + static_cast<long>(next() % static_cast<std::uint64_t>(hi - lo + 1));
  }
};

long snap(double v, long quantum) { return std::lround(v / quantum) * quantum; }

}  // namespace

std::vector<std::string> suite_names() {
  return {"isolated_line", "dense_lines", "l_shape", "t_junction", "contact_array", "mixed"};
}

std::vector<Rect> suite_rects(const std::string& name, const OpticalConfig& cfg) {
  // Designed on a 512 nm tile and scaled to the configured one, snapped to
  // a 4 nm quantum so features stay on friendly pixel boundaries.
  const double tile = cfg.tile_nm();
  const double s = tile / 512.0;
  const long q = 4;
  auto R = [&](double x1, double y1, double x2, double y2) {
    return Rect{snap(x1 * s, q), snap(y1 * s, q), snap(x2 * s, q), snap(y2 * s, q)};
  };

  if (name == "isolated_line") return {R(236, 96, 276, 416)};
  if (name == "dense_lines") {
    std::vector<Rect> rects;
    for (int i = 0; i < 5; ++i) rects.push_back(R(80 + 88 * i, 112, 120 + 88 * i, 400));
    return rects;
  }
  if (name == "l_shape") return {R(160, 128, 204, 384), R(160, 128, 384, 172)};
  if (name == "t_junction") return {R(128, 332, 384, 376), R(234, 136, 278, 332)};
  if (name == "contact_array") {
    std::vector<Rect> rects;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        rects.push_back(R(140 + 108 * i, 140 + 108 * j, 184 + 108 * i, 184 + 108 * j));
    return rects;
  }
  if (name == "mixed") {
    // Fixed-seed procedural layout: one line, one bar, two contacts.
    SplitMix64 rng(0x5eed5012ULL);
    std::vector<Rect> rects;
    const long lx = rng.range(15, 25) * 4;  // 60..100
    rects.push_back(R(double(lx), 96, double(lx + 48), 320));
    const long by = rng.range(90, 100) * 4;  // 360..400
    rects.push_back(R(176, double(by), 432, double(by + 48)));
    for (int i = 0; i < 2; ++i) {
      const long cx = 240 + 110 * i + rng.range(-3, 3) * 4;
      const long cy = 152 + rng.range(-4, 4) * 4;
      rects.push_back(R(double(cx), double(cy), double(cx + 52), double(cy + 52)));
    }
    return rects;
  }
  throw ValidationError("unknown suite target: " + name);
}

TargetPattern suite_target(const std::string& name, const OpticalConfig& cfg) {
  return pattern_from_rects(suite_rects(name, cfg), cfg);
}

}  // namespace smo
