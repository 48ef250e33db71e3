#pragma once

#include <complex>
#include <vector>

#include <Eigen/Core>

#include "smo/config.hpp"
#include "smo/field.hpp"

namespace smo {

// Ideal low-pass transfer function of the projection optics on the centered
// frequency grid of the mask (spacing 1/(n_mask*pixel_nm)).
struct Pupil {
  RealGrid passband;    // centered layout: DC at (n/2, n/2); entries in {0,1}
  double cutoff = 0;    // NA/lambda, 1/nm
  double radius_bins = 0;  // cutoff expressed in frequency bins

  // Membership test in signed-bin coordinates (kr, kc are integer frequency
  // indices, not wrapped).
  bool in_band(int kr, int kc) const {
    return double(kr) * kr + double(kc) * kc <= radius_bins * radius_bins;
  }
};

struct AerialImage {
  RealGrid intensity;  // nonnegative
};

struct ResistImage {
  RealGrid values;  // strictly inside (0,1)
};

// Transmission cross-coefficients restricted to the in-band frequency window
// (the set of bins any shifted pupil can reach for the given source).
struct TccMatrix {
  Eigen::MatrixXcd entries;               // Hermitian, band x band
  std::vector<Eigen::Vector2i> band;      // signed (kr, kc) per row/column
};

// Truncated eigendecomposition of the TCC. Kernels are spatial-domain
// convolution kernels on the full mask grid; their forward transforms are
// cached because the imaging path works in the frequency domain.
struct SocsKernels {
  std::vector<double> eigenvalues;        // descending
  std::vector<ComplexGrid> kernels;       // spatial phi_q
  std::vector<ComplexGrid> freq_kernels;  // FFT(phi_q), same order
  int q_used = 0;
};

// Source points sharing one integer pupil-shift bin, with the summed
// activated intensity and the flat indices of the member points.
struct ShiftGroup {
  int du = 0, dv = 0;      // shift in frequency bins (row, col)
  double weight = 0;       // sum of member intensities
  std::vector<int> members;  // flat indices row*n + col into the source grid
};

// Active part of a source after thresholding and shift grouping.
struct EffectiveSource {
  std::vector<ShiftGroup> groups;  // sorted by (du, dv)
  double total_energy = 0;         // sum of j over every grid point
  int active_points = 0;
  double max_shift_bins = 0;       // largest |(du,dv)| over the groups
};

Pupil build_pupil(const OpticalConfig& cfg);

// Groups source points by their rounded frequency-bin shift. Throws
// DarkSourceError when thresholding is enabled and no point is active.
EffectiveSource group_source_points(const SourceGrid& source, const OpticalConfig& cfg);

// Source-point-summation forward model: contributions of the effective
// source points are computed independently (at most cfg.parallel_width
// concurrently) and reduced in a fixed order, then normalized by the total
// source energy.
AerialImage abbe_aerial(const SourceGrid& source, const MaskGrid& mask, const Pupil& pupil,
                        const OpticalConfig& cfg);

TccMatrix build_tcc(const SourceGrid& source, const Pupil& pupil, const OpticalConfig& cfg);

// Keeps the top q eigenpairs of the TCC. q larger than the matrix dimension
// is clamped with a warning.
SocsKernels socs_decompose(const TccMatrix& tcc, int q, const OpticalConfig& cfg);

// Kernel-convolution forward model: I = sum_q kappa_q |phi_q (x) M|^2.
AerialImage hopkins_aerial(const SocsKernels& kernels, const MaskGrid& mask,
                           const OpticalConfig& cfg);

// Z = sigmoid(beta * (I - threshold)).
ResistImage resist(const AerialImage& aerial, const OpticalConfig& cfg);

// Nominal and dose-extreme resist images. The imaging model is quadratic in
// the mask, so the dose-d aerial image is exactly d^2 times the nominal one.
struct ForwardWindow {
  AerialImage aerial;          // nominal dose
  ResistImage z, z_min, z_max;
};

ForwardWindow forward_process_window(const ParamField& theta_j, const ParamField& theta_m,
                                     const OpticalConfig& cfg);

namespace detail {

enum class KeepFields { None, Complex };

// Upper bound on the per-call field cache (bytes). Gradient calls whose
// cache would exceed it recompute the fields during the backward pass
// instead. Mutable for tests and for memory-constrained deployments.
double& field_cache_budget_bytes();

// Shared machinery between the forward pass and the loss gradients. A
// workspace instance can be reused across calls; buffers of matching shape
// are recycled instead of reallocated.
struct AbbeWorkspace {
  EffectiveSource source;
  ComplexGrid mask_spectrum;            // FFT of the (nominal-dose) mask
  RealGrid intensity;                   // normalized aerial intensity
  std::vector<ComplexGrid> fields;      // per-group A_g, kept when requested
  std::vector<std::vector<int>> band_index;  // per-group natural-order bins inside the shifted pupil
};

void abbe_forward(const SourceGrid& source, const RealGrid& mask, const Pupil& pupil,
                  const OpticalConfig& cfg, KeepFields keep, AbbeWorkspace& ws);

}  // namespace detail

}  // namespace smo
