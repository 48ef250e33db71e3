#include "smo/metrics.hpp"

#include <cmath>

#include "smo/errors.hpp"
#include "smo/log.hpp"

namespace smo {

BinaryImage binarize(const ResistImage& z, double cut) {
  if (!(cut > 0.0 && cut < 1.0)) throw ConfigError("binarize: cut must lie in (0,1)");
  BinaryImage out;
  out.pixels = (z.values >= cut).cast<std::uint8_t>();
  return out;
}

BinaryImage binarize_target(const TargetPattern& target) {
  BinaryImage out;
  out.pixels = (target.pixels >= 0.5).cast<std::uint8_t>();
  return out;
}

double metric_l2(const BinaryImage& z, const TargetPattern& target, double pixel_nm) {
  if (z.rows() != target.pixels.rows() || z.cols() != target.pixels.cols())
    throw ConfigError("metric_l2: shape mismatch");
  long diff = 0;
  for (int r = 0; r < z.rows(); ++r)
    for (int c = 0; c < z.cols(); ++c)
      diff += (z.pixels(r, c) != 0) != (target.pixels(r, c) >= 0.5) ? 1 : 0;
  return static_cast<double>(diff) * pixel_nm * pixel_nm;
}

double metric_pvb(const BinaryImage& z_min, const BinaryImage& z_max, double pixel_nm) {
  if (z_min.rows() != z_max.rows() || z_min.cols() != z_max.cols())
    throw ConfigError("metric_pvb: shape mismatch");
  const long diff = ((z_min.pixels != 0) != (z_max.pixels != 0)).count();
  return static_cast<double>(diff) * pixel_nm * pixel_nm;
}

namespace {

// Printed value with everything outside the grid unprinted.
inline bool printed_at(const BinaryImage& img, long r, long c) {
  if (r < 0 || c < 0 || r >= img.rows() || c >= img.cols()) return false;
  return img.pixels(static_cast<int>(r), static_cast<int>(c)) != 0;
}

// Signed contour displacement at one measurement point, in pixels.
// Positive: the print extends beyond the target edge; negative: it recedes.
// `in_r/in_c` is the first pixel inside the feature, `dr/dc` the inward step.
long contour_deviation_px(const BinaryImage& print, long in_r, long in_c, int dr, int dc,
                          long horizon_px) {
  if (printed_at(print, in_r, in_c)) {
    long k = 0;
    while (k < horizon_px && printed_at(print, in_r - (k + 1) * dr, in_c - (k + 1) * dc)) ++k;
    return k;
  }
  long k = 0;
  while (k < horizon_px && !printed_at(print, in_r + (k + 1) * dr, in_c + (k + 1) * dc)) ++k;
  return -(k + 1) < -horizon_px ? -horizon_px : -(k + 1);
}

}  // namespace

EpeResult epe_stats(const BinaryImage& print, const TargetPattern& target, const EpeSpec& spec,
                    double pixel_nm) {
  if (!(spec.sample_step_nm > 0 && spec.threshold_nm > 0))
    throw ConfigError("epe_stats: spec values must be > 0");
  EpeResult res;
  if (target.edges.empty()) {
    log::warn("epe_stats: target has no edges; reporting zero violations");
    return res;
  }
  const long horizon_px =
      std::max<long>(1, static_cast<long>(std::ceil(2.0 * spec.threshold_nm / pixel_nm)));
  double abs_sum = 0;

  for (const EdgeSegment& seg : target.edges) {
    const double length = seg.length();
    const int n_points = std::max(1, static_cast<int>(std::floor(length / spec.sample_step_nm)));
    const double offset = (length - (n_points - 1) * spec.sample_step_nm) / 2.0;

    for (int i = 0; i < n_points; ++i) {
      const double pos = offset + i * spec.sample_step_nm;
      long in_r, in_c;
      int dr = seg.inward_dy, dc = seg.inward_dx;
      if (seg.horizontal()) {
        const long boundary_row = std::lround(seg.y1 / pixel_nm);
        in_r = seg.inward_dy > 0 ? boundary_row : boundary_row - 1;
        in_c = static_cast<long>(std::floor((seg.x1 + pos) / pixel_nm));
        in_c = std::min(in_c, static_cast<long>(std::ceil(seg.x2 / pixel_nm)) - 1);
      } else {
        const long boundary_col = std::lround(seg.x1 / pixel_nm);
        in_c = seg.inward_dx > 0 ? boundary_col : boundary_col - 1;
        in_r = static_cast<long>(std::floor((seg.y1 + pos) / pixel_nm));
        in_r = std::min(in_r, static_cast<long>(std::ceil(seg.y2 / pixel_nm)) - 1);
      }
      const long dev_px = contour_deviation_px(print, in_r, in_c, dr, dc, horizon_px);
      const double dev_nm = static_cast<double>(dev_px) * pixel_nm;
      ++res.sample_points;
      abs_sum += std::abs(dev_nm);
      if (std::abs(dev_nm) > spec.threshold_nm) ++res.violations;
    }
  }
  res.mean_abs_deviation_nm = res.sample_points > 0 ? abs_sum / res.sample_points : 0.0;
  return res;
}

int metric_epe(const BinaryImage& print, const TargetPattern& target, const EpeSpec& spec,
               double pixel_nm) {
  return epe_stats(print, target, spec, pixel_nm).violations;
}

}  // namespace smo
