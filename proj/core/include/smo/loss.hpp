#pragma once

#include <functional>

#include "smo/config.hpp"
#include "smo/field.hpp"
#include "smo/imaging.hpp"

namespace smo {

// Weighted objective: total = gamma * l2_term + eta * pvb_term.
struct LossValue {
  double total = 0;
  double l2_term = 0;
  double pvb_term = 0;
};

// Gradients of the objective with respect to the unactivated parameters.
struct GradPair {
  RealGrid wrt_source;  // n_source x n_source
  RealGrid wrt_mask;    // n_mask x n_mask
};

// Selects which gradient views a call has to produce. The mask adjoint is
// the expensive half, so inner source-only iterations skip it.
enum class GradView { Both, SourceOnly, MaskOnly };

struct GradResult {
  GradPair grad;
  LossValue loss;
};

// Squared L2 sum over pixels.
double loss_l2(const ResistImage& z, const TargetPattern& target);
double loss_pvb(const ResistImage& z_min, const ResistImage& z_max, const TargetPattern& target);

LossValue loss_smo(const ParamField& theta_j, const ParamField& theta_m,
                   const OpticalConfig& cfg, const TargetPattern& target);

GradResult grad_smo(const ParamField& theta_j, const ParamField& theta_m,
                    const OpticalConfig& cfg, const TargetPattern& target,
                    GradView view = GradView::Both);

// Raw-target variants: the loss compares resist values against an arbitrary
// real-valued field. The public TargetPattern overloads forward here. A
// caller-owned workspace avoids reallocating the per-source-point fields on
// every call; pass nullptr for a throwaway one.
LossValue loss_smo_raw(const ParamField& theta_j, const ParamField& theta_m,
                       const OpticalConfig& cfg, const RealGrid& target_values,
                       detail::AbbeWorkspace* reuse = nullptr);
GradResult grad_smo_raw(const ParamField& theta_j, const ParamField& theta_m,
                        const OpticalConfig& cfg, const RealGrid& target_values,
                        GradView view = GradView::Both, detail::AbbeWorkspace* reuse = nullptr);

// Central finite difference of a gradient map along direction v, with the
// step normalized by the direction's magnitude: eps_hat = eps / max(|v|_inf,
// 1e-12). Returns zeros for v == 0.
using GradFn = std::function<RealGrid(const RealGrid&)>;
RealGrid fd_directional(const GradFn& grad_at, const RealGrid& at, const RealGrid& v, double eps);

// [d^2 L / d theta_J d theta_J] * v via central differences of the analytic
// source gradient.
RealGrid hvp_so_jj(const ParamField& theta_j, const ParamField& theta_m, const RealGrid& v,
                   const OpticalConfig& cfg, const TargetPattern& target, double eps);

// w^T [d^2 L / d theta_M d theta_J] via central differences of the analytic
// mask gradient under a theta_J perturbation along w.
RealGrid jvp_so_mj(const ParamField& theta_j, const ParamField& theta_m, const RealGrid& w,
                   const OpticalConfig& cfg, const TargetPattern& target, double eps);

}  // namespace smo
