#include "smo/bilevel.hpp"

#include <random>

#include "smo/errors.hpp"

namespace smo {

RealGrid BilevelProblem::hvp_lower_inner(const RealGrid& inner, const RealGrid& outer,
                                         const RealGrid& v, double eps) const {
  if (v.size() == 0 || v.abs().maxCoeff() == 0.0) return RealGrid::Zero(v.rows(), v.cols());
  GradFn grad_at = [&](const RealGrid& x) { return lower_grad_inner(x, outer); };
  return fd_directional(grad_at, inner, v, eps);
}

RealGrid BilevelProblem::jvp_lower_mixed(const RealGrid& inner, const RealGrid& outer,
                                         const RealGrid& w, double eps) const {
  auto [rows, cols] = outer_shape();
  if (w.size() == 0 || w.abs().maxCoeff() == 0.0) return RealGrid::Zero(rows, cols);
  GradFn grad_at = [&](const RealGrid& x) { return lower_grad_outer(x, outer); };
  return fd_directional(grad_at, inner, w, eps);
}

SmoBilevelProblem::SmoBilevelProblem(OpticalConfig cfg, TargetPattern target)
    : cfg_(std::move(cfg)), target_(std::move(target)) {
  cfg_.validate();
  if (target_.pixels.rows() != cfg_.n_mask || target_.pixels.cols() != cfg_.n_mask)
    throw ConfigError("target does not match n_mask");
}

std::pair<int, int> SmoBilevelProblem::inner_shape() const {
  return {cfg_.n_source, cfg_.n_source};
}
std::pair<int, int> SmoBilevelProblem::outer_shape() const { return {cfg_.n_mask, cfg_.n_mask}; }

ParamField SmoBilevelProblem::as_source(const RealGrid& g) const {
  return ParamField{g, ParamKind::SourceParams};
}
ParamField SmoBilevelProblem::as_mask(const RealGrid& g) const {
  return ParamField{g, ParamKind::MaskParams};
}

LossValue SmoBilevelProblem::eval_loss(const RealGrid& inner, const RealGrid& outer) const {
  std::lock_guard<std::mutex> lk(ws_mu_);
  return loss_smo_raw(as_source(inner), as_mask(outer), cfg_, target_.pixels, &ws_);
}

GradResult SmoBilevelProblem::eval_grad(const RealGrid& inner, const RealGrid& outer,
                                        GradView view) const {
  std::lock_guard<std::mutex> lk(ws_mu_);
  return grad_smo_raw(as_source(inner), as_mask(outer), cfg_, target_.pixels, view, &ws_);
}

double SmoBilevelProblem::lower_loss(const RealGrid& inner, const RealGrid& outer) const {
  return eval_loss(inner, outer).total;
}

double SmoBilevelProblem::upper_loss(const RealGrid& inner, const RealGrid& outer) const {
  return lower_loss(inner, outer);  // shared objective
}

LossValue SmoBilevelProblem::upper_loss_terms(const RealGrid& inner, const RealGrid& outer) const {
  return eval_loss(inner, outer);
}

RealGrid SmoBilevelProblem::lower_grad_inner(const RealGrid& inner, const RealGrid& outer) const {
  RealGrid g = eval_grad(inner, outer, GradView::SourceOnly).grad.wrt_source;
  if (corrupt_factor_ != 1.0) g *= corrupt_factor_;
  return g;
}

RealGrid SmoBilevelProblem::lower_grad_outer(const RealGrid& inner, const RealGrid& outer) const {
  RealGrid g = eval_grad(inner, outer, GradView::MaskOnly).grad.wrt_mask;
  if (corrupt_factor_ != 1.0) g *= corrupt_factor_;
  return g;
}

GradPair SmoBilevelProblem::upper_grad(const RealGrid& inner, const RealGrid& outer) const {
  GradPair g = eval_grad(inner, outer, GradView::Both).grad;
  if (corrupt_factor_ != 1.0) {
    g.wrt_source *= corrupt_factor_;
    g.wrt_mask *= corrupt_factor_;
  }
  return g;
}

RealGrid SmoBilevelProblem::upper_grad_inner(const RealGrid& inner, const RealGrid& outer) const {
  return lower_grad_inner(inner, outer);
}

RealGrid SmoBilevelProblem::upper_grad_outer(const RealGrid& inner, const RealGrid& outer) const {
  return lower_grad_outer(inner, outer);
}

double audit_gradients(const BilevelProblem& problem, const RealGrid& inner,
                       const RealGrid& outer, int probes, unsigned seed) {
  std::mt19937 rng(seed);
  const RealGrid g_inner = problem.lower_grad_inner(inner, outer);
  const RealGrid g_outer = problem.upper_grad_outer(inner, outer);
  const double scale_inner = std::max(g_inner.abs().maxCoeff(), 1e-12);
  const double scale_outer = std::max(g_outer.abs().maxCoeff(), 1e-12);

  double worst = 0;
  auto probe = [&](bool inner_var) {
    const RealGrid& at = inner_var ? inner : outer;
    std::uniform_int_distribution<int> rd(0, static_cast<int>(at.rows()) - 1);
    std::uniform_int_distribution<int> cd(0, static_cast<int>(at.cols()) - 1);
    const int r = rd(rng), c = cd(rng);
    const double h = 1e-4 * std::max(1.0, std::abs(at(r, c)));
    RealGrid lo = at, hi = at;
    hi(r, c) += h;
    lo(r, c) -= h;
    double fd, analytic, scale;
    if (inner_var) {
      fd = (problem.lower_loss(hi, outer) - problem.lower_loss(lo, outer)) / (2 * h);
      analytic = g_inner(r, c);
      scale = scale_inner;
    } else {
      fd = (problem.upper_loss(inner, hi) - problem.upper_loss(inner, lo)) / (2 * h);
      analytic = g_outer(r, c);
      scale = scale_outer;
    }
    worst = std::max(worst, std::abs(fd - analytic) / scale);
  };
  for (int i = 0; i < probes; ++i) {
    probe(true);
    probe(false);
  }
  return worst;
}

}  // namespace smo
