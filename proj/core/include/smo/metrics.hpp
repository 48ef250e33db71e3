#pragma once

#include <cstdint>

#include "smo/field.hpp"
#include "smo/imaging.hpp"

namespace smo {

struct BinaryImage {
  Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> pixels;

  int rows() const { return static_cast<int>(pixels.rows()); }
  int cols() const { return static_cast<int>(pixels.cols()); }
};

// Edge-placement measurement protocol.
struct EpeSpec {
  double sample_step_nm = 40.0;
  double threshold_nm = 15.0;
};

// pixel = 1 iff value >= cut. cut must lie in (0,1).
BinaryImage binarize(const ResistImage& z, double cut = 0.5);
BinaryImage binarize_target(const TargetPattern& target);

// Differing-pixel count times pixel area, in nm^2.
double metric_l2(const BinaryImage& z, const TargetPattern& target, double pixel_nm);

// XOR area between the dose-extreme prints, in nm^2.
double metric_pvb(const BinaryImage& z_min, const BinaryImage& z_max, double pixel_nm);

struct EpeResult {
  int violations = 0;
  int sample_points = 0;
  double mean_abs_deviation_nm = 0;  // secondary statistic
};

// Samples measurement points along the target edges (spacing
// spec.sample_step_nm, centered per segment; short edges get their midpoint)
// and measures the printed contour displacement along the edge normal, up to
// a horizon of twice the threshold. A point violates when |deviation| exceeds
// spec.threshold_nm.
EpeResult epe_stats(const BinaryImage& print, const TargetPattern& target, const EpeSpec& spec,
                    double pixel_nm);
int metric_epe(const BinaryImage& print, const TargetPattern& target, const EpeSpec& spec,
               double pixel_nm);

}  // namespace smo
