#pragma once

#include <string>

#include "smo/field.hpp"

namespace smo {

// 8-bit portable graymaps. Grids use a lower-left origin, so rows are
// flipped on write and on read; a write/read round trip is the identity.

// Quantizes values in [0,1] to 0..255 (values outside are clamped).
void write_pgm(const std::string& path, const RealGrid& values);

// Exact for {0,1} grids: writes 0 or 255 only.
void write_pgm_binary(const std::string& path, const RealGrid& values);

struct PgmImage {
  int width = 0, height = 0, maxval = 255;
  RealGrid values;  // scaled back to [0,1], lower-left origin
};

PgmImage read_pgm(const std::string& path);

}  // namespace smo
