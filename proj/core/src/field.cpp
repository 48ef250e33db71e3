#include "smo/field.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "smo/errors.hpp"

namespace smo {

SourceTemplate source_template_from_string(const std::string& name) {
  if (name == "annular" || name == "Annular") return SourceTemplate::Annular;
  if (name == "quasar" || name == "Quasar") return SourceTemplate::Quasar;
  if (name == "dipole" || name == "Dipole") return SourceTemplate::Dipole;
  throw ConfigError("unknown source template: " + name);
}

std::string to_string(SourceTemplate t) {
  switch (t) {
    case SourceTemplate::Annular: return "annular";
    case SourceTemplate::Quasar: return "quasar";
    case SourceTemplate::Dipole: return "dipole";
  }
  return "annular";
}

Eigen::ArrayXd sigma_axis(int n) {
  Eigen::ArrayXd axis(n);
  for (int i = 0; i < n; ++i) axis[i] = -1.0 + 2.0 * i / (n - 1);
  axis[(n - 1) / 2] = 0.0;  // exact on-axis point
  return axis;
}

bool template_member(SourceTemplate t, double sx, double sy, double sigma_inner,
                     double sigma_outer) {
  const double r2 = sx * sx + sy * sy;
  if (r2 < sigma_inner * sigma_inner || r2 > sigma_outer * sigma_outer) return false;
  switch (t) {
    case SourceTemplate::Annular:
      return true;
    case SourceTemplate::Quasar:
      // 45 degree wide poles centered on the diagonals: |cos 2theta| <= cos 45.
      return r2 == 0.0 || std::abs(sx * sx - sy * sy) <= r2 * std::sqrt(0.5);
    case SourceTemplate::Dipole:
      // 90 degree wide poles on the horizontal axis.
      return std::abs(sx) >= std::abs(sy);
  }
  return false;
}

ParamField init_mask_params(const TargetPattern& target, const OpticalConfig& cfg) {
  if (target.pixels.rows() != cfg.n_mask || target.pixels.cols() != cfg.n_mask)
    throw ConfigError("target dimensions do not match n_mask");
  ParamField theta;
  theta.kind = ParamKind::MaskParams;
  theta.values = (target.pixels > 0.5).select(RealGrid::Constant(cfg.n_mask, cfg.n_mask, cfg.m0),
                                              RealGrid::Constant(cfg.n_mask, cfg.n_mask, -cfg.m0));
  return theta;
}

ParamField init_source_params(SourceTemplate t, const OpticalConfig& cfg) {
  cfg.validate();
  const int n = cfg.n_source;
  const Eigen::ArrayXd axis = sigma_axis(n);
  ParamField theta;
  theta.kind = ParamKind::SourceParams;
  theta.values.resize(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      theta.values(r, c) =
          template_member(t, axis[c], axis[r], cfg.sigma_inner, cfg.sigma_outer) ? cfg.j0
                                                                                 : -cfg.j0;
  return theta;
}

namespace {
// Saturated sigmoids round to exactly 0 or 1 in double precision; keep the
// output strictly inside the open interval.
constexpr double kSigLo = std::numeric_limits<double>::min();
constexpr double kSigHi = 1.0 - 2.220446049250313e-16;
}  // namespace

double sigmoid(double x) {
  return std::clamp(1.0 / (1.0 + std::exp(-x)), kSigLo, kSigHi);
}

RealGrid sigmoid(const RealGrid& x) {
  return (1.0 / (1.0 + (-x).exp())).max(kSigLo).min(kSigHi);
}

MaskGrid activate_mask(const ParamField& theta, const OpticalConfig& cfg) {
  if (theta.kind != ParamKind::MaskParams) throw ConfigError("activate_mask: wrong parameter kind");
  if (!theta.values.isFinite().all()) throw NumericError("activate_mask: non-finite parameters");
  return MaskGrid{sigmoid(cfg.alpha_m * theta.values)};
}

SourceGrid activate_source(const ParamField& theta, const OpticalConfig& cfg) {
  if (theta.kind != ParamKind::SourceParams)
    throw ConfigError("activate_source: wrong parameter kind");
  if (!theta.values.isFinite().all()) throw NumericError("activate_source: non-finite parameters");
  SourceGrid src;
  src.intensities = sigmoid(cfg.alpha_j * theta.values);
  src.coords = sigma_axis(static_cast<int>(theta.values.rows()));
  return src;
}

}  // namespace smo
