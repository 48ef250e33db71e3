#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "smo/config.hpp"
#include "smo/field.hpp"

namespace smo {

// Axis-aligned rectangle in integer nm, origin at the lower-left tile corner,
// half-open in neither direction: covers [x1, x2) x [y1, y2).
struct Rect {
  long x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

// Parses the rectangle-list format: one `RECT x1 y1 x2 y2` per line,
// '#' comments and blank lines allowed. Throws ParseError with the offending
// line number.
std::vector<Rect> parse_rect_list(std::istream& in);

// Rasterizes the union of rectangles onto the mask grid (a pixel is set when
// its center is covered) and extracts merged boundary edge segments.
// Rectangles must lie inside the tile.
TargetPattern pattern_from_rects(const std::vector<Rect>& rects, const OpticalConfig& cfg);

// Builds a target from an already-binary raster, extracting edges the same way.
TargetPattern pattern_from_raster(const RealGrid& binary, const OpticalConfig& cfg);

// Loads either format: portable graymaps (magic P2/P5, threshold at half the
// max value, integer-factor resampling only) or rectangle lists. Paths of the
// form "suite:<name>" resolve to the bundled synthetic targets.
TargetPattern ingest_pattern(const std::string& path, const OpticalConfig& cfg);

// Bundled synthetic suite: six rectilinear targets designed for the
// desk-scale 128x128 / 4 nm tile, generated procedurally (the "mixed" target
// from a fixed seed). Geometry scales with the configured tile.
std::vector<std::string> suite_names();
std::vector<Rect> suite_rects(const std::string& name, const OpticalConfig& cfg);
TargetPattern suite_target(const std::string& name, const OpticalConfig& cfg);

// Writes a rectangle list in the text format above.
void write_rect_list(const std::string& path, const std::vector<Rect>& rects);

}  // namespace smo
