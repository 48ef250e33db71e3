#include "smo/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "smo/errors.hpp"

namespace smo {

namespace {

void write_header(std::ofstream& f, int w, int h) { f << "P5\n" << w << " " << h << "\n255\n"; }

void write_rows(std::ofstream& f, const RealGrid& values, bool binary) {
  const int rows = static_cast<int>(values.rows());
  const int cols = static_cast<int>(values.cols());
  std::vector<unsigned char> line(cols);
  for (int r = rows - 1; r >= 0; --r) {  // top row first
    for (int c = 0; c < cols; ++c) {
      const double v = values(r, c);
      if (binary) {
        line[c] = v >= 0.5 ? 255 : 0;
      } else {
        line[c] = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
    f.write(reinterpret_cast<const char*>(line.data()), cols);
  }
}

}  // namespace

void write_pgm(const std::string& path, const RealGrid& values) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + path);
  write_header(f, static_cast<int>(values.cols()), static_cast<int>(values.rows()));
  write_rows(f, values, false);
  if (!f) throw ValidationError("write failed: " + path);
}

void write_pgm_binary(const std::string& path, const RealGrid& values) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + path);
  write_header(f, static_cast<int>(values.cols()), static_cast<int>(values.rows()));
  write_rows(f, values, true);
  if (!f) throw ValidationError("write failed: " + path);
}

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

int to_dim(const std::string& tok, const char* what) {
  try {
    const int v = std::stoi(tok);
    if (v <= 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ParseError(std::string("pgm: bad ") + what + " '" + tok + "'");
  }
}

}  // namespace

PgmImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open " + path);
  const std::string magic = next_token(f);
  if (magic != "P2" && magic != "P5") throw ParseError("pgm: unsupported magic '" + magic + "'");
  PgmImage img;
  img.width = to_dim(next_token(f), "width");
  img.height = to_dim(next_token(f), "height");
  img.maxval = to_dim(next_token(f), "maxval");
  if (img.maxval > 255) throw ValidationError("pgm: only 8-bit graymaps are supported");

  img.values.resize(img.height, img.width);
  if (magic == "P5") {
    std::vector<unsigned char> row(img.width);
    for (int r = 0; r < img.height; ++r) {
      f.read(reinterpret_cast<char*>(row.data()), img.width);
      if (!f) throw ParseError("pgm: truncated raster");
      for (int c = 0; c < img.width; ++c)
        img.values(img.height - 1 - r, c) = row[c] / static_cast<double>(img.maxval);
    }
  } else {
    for (int r = 0; r < img.height; ++r) {
      for (int c = 0; c < img.width; ++c) {
        long v;
        if (!(f >> v)) throw ParseError("pgm: truncated raster");
        if (v < 0 || v > img.maxval) throw ParseError("pgm: sample out of range");
        img.values(img.height - 1 - r, c) = v / static_cast<double>(img.maxval);
      }
    }
  }
  return img;
}

}  // namespace smo
