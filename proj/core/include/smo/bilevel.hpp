#pragma once

#include <memory>
#include <mutex>
#include <utility>

#include "smo/loss.hpp"

namespace smo {

// Two-level problem driven by the optimization engines: the outer objective
// is evaluated at the (approximate) optimizer of the inner one. Inner and
// outer variables are real matrices of fixed shape.
//
// The default curvature products are central finite differences of the
// supplied analytic gradients; synthetic fixtures may override them with
// closed forms.
class BilevelProblem {
 public:
  virtual ~BilevelProblem() = default;

  virtual std::pair<int, int> inner_shape() const = 0;
  virtual std::pair<int, int> outer_shape() const = 0;

  virtual double lower_loss(const RealGrid& inner, const RealGrid& outer) const = 0;
  virtual double upper_loss(const RealGrid& inner, const RealGrid& outer) const = 0;

  // Break-down of the upper loss for trajectory reporting.
  virtual LossValue upper_loss_terms(const RealGrid& inner, const RealGrid& outer) const {
    return {upper_loss(inner, outer), 0.0, 0.0};
  }

  virtual RealGrid lower_grad_inner(const RealGrid& inner, const RealGrid& outer) const = 0;
  virtual RealGrid lower_grad_outer(const RealGrid& inner, const RealGrid& outer) const = 0;

  virtual GradPair upper_grad(const RealGrid& inner, const RealGrid& outer) const = 0;
  virtual RealGrid upper_grad_inner(const RealGrid& inner, const RealGrid& outer) const {
    return upper_grad(inner, outer).wrt_source;
  }
  virtual RealGrid upper_grad_outer(const RealGrid& inner, const RealGrid& outer) const {
    return upper_grad(inner, outer).wrt_mask;
  }

  // [d^2 lower / d inner^2] * v.
  virtual RealGrid hvp_lower_inner(const RealGrid& inner, const RealGrid& outer,
                                   const RealGrid& v, double eps) const;

  // w^T [d^2 lower / d outer d inner], an outer-shaped matrix.
  virtual RealGrid jvp_lower_mixed(const RealGrid& inner, const RealGrid& outer,
                                   const RealGrid& w, double eps) const;
};

// The source-mask problem: inner variables are the source parameters, outer
// variables the mask parameters, and both levels share the same objective.
class SmoBilevelProblem : public BilevelProblem {
 public:
  SmoBilevelProblem(OpticalConfig cfg, TargetPattern target);

  std::pair<int, int> inner_shape() const override;
  std::pair<int, int> outer_shape() const override;

  double lower_loss(const RealGrid& inner, const RealGrid& outer) const override;
  double upper_loss(const RealGrid& inner, const RealGrid& outer) const override;
  LossValue upper_loss_terms(const RealGrid& inner, const RealGrid& outer) const override;

  RealGrid lower_grad_inner(const RealGrid& inner, const RealGrid& outer) const override;
  RealGrid lower_grad_outer(const RealGrid& inner, const RealGrid& outer) const override;
  GradPair upper_grad(const RealGrid& inner, const RealGrid& outer) const override;
  RealGrid upper_grad_inner(const RealGrid& inner, const RealGrid& outer) const override;
  RealGrid upper_grad_outer(const RealGrid& inner, const RealGrid& outer) const override;

  const OpticalConfig& config() const { return cfg_; }
  const TargetPattern& target() const { return target_; }

  // Test hook: scales the analytic gradients to emulate an adjoint bug.
  void corrupt_gradients_for_test(double factor) { corrupt_factor_ = factor; }

 private:
  ParamField as_source(const RealGrid& g) const;
  ParamField as_mask(const RealGrid& g) const;
  GradResult eval_grad(const RealGrid& inner, const RealGrid& outer, GradView view) const;
  LossValue eval_loss(const RealGrid& inner, const RealGrid& outer) const;

  OpticalConfig cfg_;
  TargetPattern target_;
  double corrupt_factor_ = 1.0;

  // Reused imaging buffers; guarded so concurrent calls on one instance
  // stay safe (independent instances never contend).
  mutable std::mutex ws_mu_;
  mutable detail::AbbeWorkspace ws_;
};

// Finite-difference audit of the problem's analytic gradients on a
// deterministic probe subset. Returns the maximum error relative to the
// gradient scale.
double audit_gradients(const BilevelProblem& problem, const RealGrid& inner,
                       const RealGrid& outer, int probes = 8, unsigned seed = 17);

}  // namespace smo
