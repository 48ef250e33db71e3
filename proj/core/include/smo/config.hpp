#pragma once

#include <iosfwd>
#include <map>
#include <string>

namespace smo {

// Optical system, activation and loss-weight settings.
//
// Desk-scale defaults: a 128x128 tile at 4 nm pixels. The full-scale
// configuration (n_mask = 2048, pixel_nm = 1) uses the same model; only grid
// sizes change.
struct OpticalConfig {
  double wavelength_nm = 193.0;  // illumination wavelength
  double na = 1.35;              // numerical aperture
  double pixel_nm = 4.0;         // mask grid pitch
  int n_mask = 128;              // mask grid side
  int n_source = 35;             // source grid side, must be odd

  // Partial-coherence bounds of the source templates, in sigma units.
  double sigma_outer = 0.95;
  double sigma_inner = 0.63;

  // Dose range modeling process variation.
  double dose_min = 0.98;
  double dose_max = 1.02;

  // Resist threshold model.
  double resist_threshold = 0.225;
  double resist_steepness = 30.0;

  // Sigmoid activation steepness / initialization magnitudes.
  double alpha_m = 9.0;
  double m0 = 1.0;
  double alpha_j = 2.0;
  double j0 = 5.0;

  // Loss weights.
  double gamma = 1000.0;
  double eta = 3000.0;

  // Kernel truncation for the decomposed (Hopkins) forward model.
  int q_kernels = 24;

  // Maximum number of concurrent source-point evaluations.
  int parallel_width = 256;

  // Source points with activated intensity at or below this value are
  // skipped in the forward sum; <= 0 disables skipping entirely.
  double source_threshold = 1e-6;

  // Derived quantities.
  double cutoff() const { return na / wavelength_nm; }          // 1/nm
  double tile_nm() const { return n_mask * pixel_nm; }          // tile side
  double cutoff_bins() const { return cutoff() * tile_nm(); }   // pupil radius in frequency bins

  // Throws ConfigError on any violated invariant.
  void validate() const;
};

// Parses "key=value" lines ('#' starts a comment, blank lines ignored) into a
// flat map. Unknown keys are preserved so several consumers can share a file.
std::map<std::string, std::string> parse_key_values(std::istream& in);
std::map<std::string, std::string> load_key_values(const std::string& path);

// Applies recognized keys from `kv` onto `cfg`; erases the keys it consumed.
void apply_optical_keys(std::map<std::string, std::string>& kv, OpticalConfig& cfg);

// Serializes every field as key=value lines.
std::string to_key_values(const OpticalConfig& cfg);

}  // namespace smo
