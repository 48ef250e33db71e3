#pragma once

#include <string>
#include <vector>

#include "smo/bilevel.hpp"

namespace smo {

enum class StepKind { GradientDescent, Adam };

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct StepRule {
  StepKind kind = StepKind::Adam;
  AdamParams adam;
};

// First and second moment accumulators; empty until the first Adam step.
struct StepState {
  RealGrid m, v;
  long t = 0;

  bool initialized() const { return m.size() > 0; }
};

// One optimizer update. Throws NumericError on a non-finite gradient.
RealGrid step(const RealGrid& params, const RealGrid& grad, double lr, const StepRule& rule,
              StepState& state);
ParamField step(const ParamField& params, const RealGrid& grad, double lr, const StepRule& rule,
                StepState& state);

enum class Method { MO, AM, FD, NMN, CG };

Method method_from_string(const std::string& name);
std::string to_string(Method m);

struct OptimizerConfig {
  int unroll_T = 3;    // inner steps per outer iteration
  int neumann_K = 5;   // series terms
  int cg_K = 5;        // conjugate-gradient steps
  double lr_inner = 0.1;
  double lr_outer = 0.1;
  double lr_fd = 0.1;  // scale of the single-step hypergradient correction
  StepRule step_rule{};
  int max_outer_iters = 200;
  double convergence_rel_tol = 1e-4;
  int convergence_window = 5;
  int so_epoch_iters = 10;  // alternating-minimization phase lengths
  int mo_epoch_iters = 10;
  double hvp_eps = 1e-2;

  // Scale s of the series recursion v <- v - s H v. The series converges to
  // the inverse Hessian for any s with s * lambda_max < 2; zero means track
  // the spectrum with a warm-started power iteration every outer iteration.
  // A positive value is used verbatim.
  double neumann_scale = 0;

  // Cap on the inverse-Hessian correction relative to the direct gradient:
  // the correction is rescaled when its norm exceeds cap * |direct|. The
  // curvature products are measured by finite differences, and a transient
  // mis-estimate otherwise produces corrections orders of magnitude above
  // the direct term. Zero disables the cap.
  double hypergrad_trust = 2.0;

  bool audit_at_start = false;
  bool post_polish = false;  // extra inner descent after the outer loop

  void validate() const;
};

struct TrajectoryPoint {
  int iter = 0;
  LossValue loss;
  double wall_clock_s = 0;
};

// Everything needed to continue a run exactly where it stopped.
struct ResumeState {
  StepState inner_state, outer_state;
  RealGrid cg_warm;                   // empty when unused
  RealGrid power_probe;               // curvature-tracking direction
  double nmn_scale = 0;               // calibrated series scale, 0 if unset
  std::vector<double> recent_losses;  // convergence-window history
  int iters_done = 0;
  bool valid = false;
};

struct RunReport {
  std::vector<TrajectoryPoint> loss_trajectory;
  ParamField final_theta_J, final_theta_M;
  Method method = Method::NMN;
  int iters_run = 0;
  bool aborted = false;      // optimizer hit non-finite values
  std::string abort_reason;
  ResumeState resume;
};

// T gradient-descent steps on the lower loss with the outer variables
// frozen; returns the warm-started inner variables.
RealGrid inner_unroll(const BilevelProblem& problem, const RealGrid& inner,
                      const RealGrid& outer, int T, double lr_inner);

// Single-inner-step hypergradient:
//   d upper/d outer - lr_fd * w^T [d^2 lower / d outer d inner],
// with w the upper gradient with respect to the inner variables. trust_cap
// bounds the correction term relative to the direct one (0 = exact).
RealGrid hypergrad_fd(const BilevelProblem& problem, const RealGrid& inner,
                      const RealGrid& outer, double lr_fd, double hvp_eps,
                      double trust_cap = 0);

// Truncated Neumann-series inverse-Hessian approximation with the scaled
// recursion v_{k+1} = v_k - lr_inner * H v_k (stable whenever lr_inner keeps
// the Hessian spectrum inside (0, 2)). K = 0 reduces to hypergrad_fd with
// scale lr_inner.
RealGrid hypergrad_neumann(const BilevelProblem& problem, const RealGrid& inner,
                           const RealGrid& outer, int K, double lr_inner, double hvp_eps,
                           double trust_cap = 0);

// Power-iteration estimate of the largest inner-Hessian eigenvalue magnitude,
// used to calibrate the series scale. Deterministic for fixed inputs; when a
// probe vector is supplied it is used as the starting direction and updated
// in place, so successive calls track a moving spectrum cheaply.
double estimate_inner_curvature(const BilevelProblem& problem, const RealGrid& inner,
                                const RealGrid& outer, double hvp_eps, int iters = 8,
                                RealGrid* probe = nullptr);

struct HypergradCgResult {
  RealGrid grad_outer;
  RealGrid w;  // last CG iterate, reused as warm start
  bool negative_curvature = false;
  int iters = 0;
};

// Solves [d^2 lower/d inner^2] w = d upper/d inner with K CG steps from w0
// (Hessian-vector products only), then forms the hypergradient. Stops early
// on detected negative curvature.
HypergradCgResult hypergrad_cg(const BilevelProblem& problem, const RealGrid& inner,
                               const RealGrid& outer, int K, const RealGrid& w0,
                               double hvp_eps, double trust_cap = 0);

// Alternating minimization: phases of source-only and mask-only descent.
// Every parameter update counts as one outer iteration.
RunReport am_smo(const BilevelProblem& problem, const RealGrid& init_inner,
                 const RealGrid& init_outer, const OptimizerConfig& cfg);

// Bilevel loop for methods FD, NMN and CG: unroll T inner steps, form the
// chosen hypergradient, take one outer step.
RunReport bilevel_run(const BilevelProblem& problem, const RealGrid& init_inner,
                    const RealGrid& init_outer, Method method, const OptimizerConfig& cfg,
                    const ResumeState* resume = nullptr);

// Mask-only descent with the inner variables frozen at their initialization.
RunReport mo_only(const BilevelProblem& problem, const RealGrid& init_inner,
                  const RealGrid& init_outer, const OptimizerConfig& cfg);

// Dispatch on method.
RunReport run_method(const BilevelProblem& problem, const RealGrid& init_inner,
                     const RealGrid& init_outer, Method method, const OptimizerConfig& cfg,
                     const ResumeState* resume = nullptr);

}  // namespace smo
