#pragma once

#include <Eigen/Core>

#include <complex>
#include <vector>

#include "smo/config.hpp"

namespace smo {

// Row-major layouts so grids map directly onto FFT buffers.
// Row index is the y axis with the origin at the lower-left corner.
using RealGrid = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ComplexGrid =
    Eigen::Array<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ParamKind { SourceParams, MaskParams };

// Unconstrained optimization variables behind one of the activated grids.
struct ParamField {
  RealGrid values;
  ParamKind kind = ParamKind::MaskParams;
};

// Activated source: intensities in [0,1] on the sigma-coordinate grid.
// The grid spans [-1,1]^2 in partial-coherence units; index -> coordinate is
// uniform with the center point exactly on axis (n odd).
struct SourceGrid {
  RealGrid intensities;
  Eigen::ArrayXd coords;  // shared axis: coords[i] is the sigma coordinate of row/col i

  int n() const { return static_cast<int>(intensities.rows()); }
  double sigma_x(int col) const { return coords[col]; }
  double sigma_y(int row) const { return coords[row]; }
};

// Activated mask transmission in [0,1] (grayscale during optimization;
// the binary view thresholds at 0.5).
struct MaskGrid {
  RealGrid transmission;
};

// One axis-aligned edge of the target, in nm, plus the direction pointing
// into the feature. Horizontal edges have inward_dy = +/-1, vertical ones
// inward_dx = +/-1.
struct EdgeSegment {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  int inward_dx = 0, inward_dy = 0;

  double length() const { return (x2 - x1) + (y2 - y1); }  // one term is zero
  bool horizontal() const { return y1 == y2; }
};

// Desired binary print with the edge segments used for EPE measurement.
struct TargetPattern {
  RealGrid pixels;  // entries in {0,1}
  std::vector<EdgeSegment> edges;
};

enum class SourceTemplate { Annular, Quasar, Dipole };

SourceTemplate source_template_from_string(const std::string& name);
std::string to_string(SourceTemplate t);

// Sigma coordinates of an n-point axis (n odd), uniformly spanning [-1,1].
Eigen::ArrayXd sigma_axis(int n);

// Binary template membership on the sigma grid. Annulus bounds are inclusive;
// quasar restricts to 45 degree wide poles on the diagonals, dipole to
// 90 degree wide poles on the horizontal axis.
bool template_member(SourceTemplate t, double sx, double sy, double sigma_inner,
                     double sigma_outer);

// theta_M = +m0 where the target is set, -m0 elsewhere.
ParamField init_mask_params(const TargetPattern& target, const OpticalConfig& cfg);

// theta_J = +j0 inside the binary template, -j0 elsewhere.
ParamField init_source_params(SourceTemplate t, const OpticalConfig& cfg);

// Elementwise logistic sigmoid.
double sigmoid(double x);
RealGrid sigmoid(const RealGrid& x);

// M = sigmoid(alpha_m * theta), strictly inside (0,1).
MaskGrid activate_mask(const ParamField& theta, const OpticalConfig& cfg);

// J = sigmoid(alpha_j * theta) with sigma coordinates attached.
SourceGrid activate_source(const ParamField& theta, const OpticalConfig& cfg);

}  // namespace smo
