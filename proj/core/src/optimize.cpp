#include "smo/optimize.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <random>

#include "smo/errors.hpp"
#include "smo/log.hpp"

namespace smo {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check_finite(const RealGrid& g, const char* what) {
  if (!g.isFinite().all()) {
    throw NumericError(std::string(what) + ": non-finite gradient (min " +
                       std::to_string(g.minCoeff()) + ", max " + std::to_string(g.maxCoeff()) +
                       ")");
  }
}

double dot(const RealGrid& a, const RealGrid& b) { return (a * b).sum(); }
double norm2(const RealGrid& a) { return std::sqrt((a * a).sum()); }

// Rescales the correction when it dwarfs the direct term.
void apply_trust_cap(const RealGrid& direct, RealGrid& correction, double cap) {
  if (cap <= 0) return;
  const double c = norm2(correction);
  const double bound = cap * norm2(direct);
  if (c > bound && c > 0) correction *= bound / c;
}

// Stop when every successive relative change across the trailing window is
// below tol; never fires before `window` recorded iterations.
class ConvergenceTracker {
 public:
  ConvergenceTracker(int window, double tol) : window_(window), tol_(tol) {}

  void seed_history(const std::vector<double>& losses) {
    for (double l : losses) push(l);
  }

  bool push(double loss) {
    if (!history_.empty()) {
      const double prev = history_.back();
      const double rel = std::abs(loss - prev) / std::max(std::abs(prev), 1e-30);
      changes_.push_back(rel);
      if (static_cast<int>(changes_.size()) > window_) changes_.pop_front();
    }
    history_.push_back(loss);
    if (static_cast<int>(history_.size()) > window_ + 1) history_.pop_front();
    ++count_;
    if (count_ < window_ || static_cast<int>(changes_.size()) < window_) return false;
    for (double c : changes_)
      if (c >= tol_) return false;
    return true;
  }

  std::vector<double> history() const { return {history_.begin(), history_.end()}; }

 private:
  int window_;
  double tol_;
  int count_ = 0;
  std::deque<double> history_;
  std::deque<double> changes_;
};

}  // namespace

void OptimizerConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (unroll_T < 1) fail("unroll_t must be >= 1");
  if (neumann_K < 0 || cg_K < 0) fail("series/CG step counts must be >= 0");
  if (!(lr_inner > 0 && lr_outer > 0 && lr_fd > 0)) fail("learning rates must be > 0");
  if (max_outer_iters < 1) fail("max_outer_iters must be >= 1");
  if (convergence_window < 1) fail("convergence_window must be >= 1");
  if (so_epoch_iters < 1 || mo_epoch_iters < 1) fail("phase lengths must be >= 1");
  if (!(hvp_eps > 0)) fail("hvp_eps must be > 0");
}

Method method_from_string(const std::string& name) {
  if (name == "MO" || name == "mo") return Method::MO;
  if (name == "AM" || name == "am") return Method::AM;
  if (name == "FD" || name == "fd") return Method::FD;
  if (name == "NMN" || name == "nmn") return Method::NMN;
  if (name == "CG" || name == "cg") return Method::CG;
  throw ConfigError("unknown method: " + name);
}

std::string to_string(Method m) {
  switch (m) {
    case Method::MO: return "MO";
    case Method::AM: return "AM";
    case Method::FD: return "FD";
    case Method::NMN: return "NMN";
    case Method::CG: return "CG";
  }
  return "NMN";
}

RealGrid step(const RealGrid& params, const RealGrid& grad, double lr, const StepRule& rule,
              StepState& state) {
  if (params.rows() != grad.rows() || params.cols() != grad.cols())
    throw ConfigError("step: parameter/gradient shape mismatch");
  check_finite(grad, "step");
  if (rule.kind == StepKind::GradientDescent) return params - lr * grad;

  if (!state.initialized()) {
    state.m = RealGrid::Zero(params.rows(), params.cols());
    state.v = RealGrid::Zero(params.rows(), params.cols());
    state.t = 0;
  }
  const AdamParams& a = rule.adam;
  state.t += 1;
  state.m = a.beta1 * state.m + (1.0 - a.beta1) * grad;
  state.v = a.beta2 * state.v + (1.0 - a.beta2) * grad.square();
  const double bc1 = 1.0 - std::pow(a.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(a.beta2, static_cast<double>(state.t));
  const RealGrid m_hat = state.m / bc1;
  const RealGrid v_hat = state.v / bc2;
  return params - lr * m_hat / (v_hat.sqrt() + a.eps);
}

ParamField step(const ParamField& params, const RealGrid& grad, double lr, const StepRule& rule,
                StepState& state) {
  return ParamField{step(params.values, grad, lr, rule, state), params.kind};
}

RealGrid inner_unroll(const BilevelProblem& problem, const RealGrid& inner,
                      const RealGrid& outer, int T, double lr_inner) {
  if (T < 1) throw ConfigError("inner_unroll: T must be >= 1");
  RealGrid x = inner;
  for (int t = 0; t < T; ++t) {
    RealGrid g = problem.lower_grad_inner(x, outer);
    check_finite(g, "inner_unroll");
    x -= lr_inner * g;
  }
  return x;
}

RealGrid hypergrad_fd(const BilevelProblem& problem, const RealGrid& inner,
                      const RealGrid& outer, double lr_fd, double hvp_eps, double trust_cap) {
  const GradPair up = problem.upper_grad(inner, outer);
  if (up.wrt_source.abs().maxCoeff() == 0.0) return up.wrt_mask;
  RealGrid correction =
      lr_fd * problem.jvp_lower_mixed(inner, outer, up.wrt_source, hvp_eps);
  apply_trust_cap(up.wrt_mask, correction, trust_cap);
  return up.wrt_mask - correction;
}

RealGrid hypergrad_neumann(const BilevelProblem& problem, const RealGrid& inner,
                           const RealGrid& outer, int K, double lr_inner, double hvp_eps,
                           double trust_cap) {
  const GradPair up = problem.upper_grad(inner, outer);
  const double v0_norm = norm2(up.wrt_source);
  if (v0_norm == 0.0) return up.wrt_mask;

  RealGrid v = up.wrt_source;
  RealGrid series = v;
  for (int k = 0; k < K; ++k) {
    v = (v - lr_inner * problem.hvp_lower_inner(inner, outer, v, hvp_eps)).eval();
    if (norm2(v) > 10.0 * v0_norm) {
      log::warn("hypergrad_neumann: series term grew past 10x the seed norm at k=" +
                std::to_string(k + 1) + "; truncating");
      break;
    }
    series += v;
  }
  RealGrid correction =
      lr_inner * problem.jvp_lower_mixed(inner, outer, series, hvp_eps);
  apply_trust_cap(up.wrt_mask, correction, trust_cap);
  return up.wrt_mask - correction;
}

double estimate_inner_curvature(const BilevelProblem& problem, const RealGrid& inner,
                                const RealGrid& outer, double hvp_eps, int iters,
                                RealGrid* probe) {
  auto [rows, cols] = problem.inner_shape();
  RealGrid v;
  if (probe && probe->rows() == rows && probe->cols() == cols &&
      probe->abs().maxCoeff() > 0) {
    v = *probe;
  } else {
    // Fixed-seed probe direction keeps runs reproducible.
    std::mt19937_64 rng(0x5ca1ab1eULL);
    std::normal_distribution<double> nd;
    v.resize(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) v(r, c) = nd(rng);
  }
  v /= std::max(norm2(v), 1e-30);

  double lambda = 0;
  for (int i = 0; i < iters; ++i) {
    RealGrid hv = problem.hvp_lower_inner(inner, outer, v, hvp_eps);
    lambda = norm2(hv);
    if (!(lambda > 1e-30) || !hv.isFinite().all()) return 1.0;
    v = hv / lambda;
  }
  if (probe) *probe = v;
  return lambda;
}

HypergradCgResult hypergrad_cg(const BilevelProblem& problem, const RealGrid& inner,
                               const RealGrid& outer, int K, const RealGrid& w0,
                               double hvp_eps, double trust_cap) {
  const GradPair up = problem.upper_grad(inner, outer);
  HypergradCgResult res;
  res.w = w0.size() > 0 ? w0 : RealGrid::Zero(up.wrt_source.rows(), up.wrt_source.cols());

  const RealGrid& b = up.wrt_source;
  if (K > 0 && b.abs().maxCoeff() != 0.0) {
    RealGrid r = b - problem.hvp_lower_inner(inner, outer, res.w, hvp_eps);
    // A stale warm start can be worse than starting cold; fall back then.
    if (std::sqrt(dot(r, r)) > std::sqrt(dot(b, b))) {
      res.w.setZero();
      r = b;
    }
    RealGrid p = r;
    double rr = dot(r, r);
    const double rr0 = rr;
    double curvature_floor = 0.0;
    for (int k = 0; k < K && rr > 1e-20 * rr0; ++k) {
      const RealGrid hp = problem.hvp_lower_inner(inner, outer, p, hvp_eps);
      const double p_h_p = dot(p, hp);
      // Directions whose curvature sits at or below the measurement noise
      // behave like the p^T H p <= 0 case: stop with the current iterate.
      if (k == 0) curvature_floor = 1e-6 * std::abs(p_h_p) / std::max(dot(p, p), 1e-30);
      if (p_h_p <= curvature_floor * dot(p, p)) {
        res.negative_curvature = true;
        break;
      }
      const double alpha = rr / p_h_p;
      res.w += alpha * p;
      r -= alpha * hp;
      const double rr_new = dot(r, r);
      p = r + (rr_new / rr) * p;
      rr = rr_new;
      ++res.iters;
    }
  }
  if (res.w.abs().maxCoeff() == 0.0) {
    res.grad_outer = up.wrt_mask;
  } else {
    RealGrid correction = problem.jvp_lower_mixed(inner, outer, res.w, hvp_eps);
    apply_trust_cap(up.wrt_mask, correction, trust_cap);
    res.grad_outer = up.wrt_mask - correction;
  }
  return res;
}

namespace {

struct LoopState {
  RealGrid inner, outer;
  StepState inner_step, outer_step;
  RealGrid cg_warm;
  RealGrid power_probe;
  double nmn_scale = 0;
  int iter_base = 0;
  RunReport report;
  Clock::time_point t0 = Clock::now();
};

void finish_report(LoopState& st, Method method, ConvergenceTracker& conv) {
  st.report.method = method;
  st.report.final_theta_J = ParamField{st.inner, ParamKind::SourceParams};
  st.report.final_theta_M = ParamField{st.outer, ParamKind::MaskParams};
  st.report.iters_run = static_cast<int>(st.report.loss_trajectory.size());
  st.report.resume.inner_state = st.inner_step;
  st.report.resume.outer_state = st.outer_step;
  st.report.resume.cg_warm = st.cg_warm;
  st.report.resume.power_probe = st.power_probe;
  st.report.resume.nmn_scale = st.nmn_scale;
  st.report.resume.recent_losses = conv.history();
  st.report.resume.iters_done = st.iter_base + st.report.iters_run;
  st.report.resume.valid = true;
}

}  // namespace

RunReport bilevel_run(const BilevelProblem& problem, const RealGrid& init_inner,
                    const RealGrid& init_outer, Method method, const OptimizerConfig& cfg,
                    const ResumeState* resume) {
  cfg.validate();
  if (method != Method::FD && method != Method::NMN && method != Method::CG)
    throw ConfigError("bilevel_run: method must be FD, NMN or CG");

  LoopState st;
  st.inner = init_inner;
  st.outer = init_outer;
  ConvergenceTracker conv(cfg.convergence_window, cfg.convergence_rel_tol);
  if (resume && resume->valid) {
    st.inner_step = resume->inner_state;
    st.outer_step = resume->outer_state;
    st.cg_warm = resume->cg_warm;
    st.power_probe = resume->power_probe;
    st.nmn_scale = resume->nmn_scale;
    st.iter_base = resume->iters_done;
    conv.seed_history(resume->recent_losses);
  }
  if (cfg.audit_at_start) {
    const double err = audit_gradients(problem, st.inner, st.outer);
    if (err > 1e-3)
      throw NumericError("gradient audit failed: relative error " + std::to_string(err));
  }

  if (cfg.neumann_scale > 0) st.nmn_scale = cfg.neumann_scale;

  for (int iter = 1; iter <= cfg.max_outer_iters; ++iter) {
    const RealGrid prev_inner = st.inner;
    const RealGrid prev_outer = st.outer;
    const StepState prev_inner_step = st.inner_step;
    const StepState prev_outer_step = st.outer_step;
    try {
      bool all_zero = true;
      for (int t = 0; t < cfg.unroll_T; ++t) {
        RealGrid g = problem.lower_grad_inner(st.inner, st.outer);
        check_finite(g, "bilevel inner step");
        if (g.abs().maxCoeff() != 0.0) all_zero = false;
        st.inner = step(st.inner, g, cfg.lr_inner, cfg.step_rule, st.inner_step);
      }

      RealGrid hyper;
      // The single-step and series corrections are only meaningful when the
      // scale keeps the inner spectrum contractive; the curvature moves by
      // orders of magnitude as the mask sharpens, so it is tracked with a
      // warm-started power iteration unless a scale is pinned.
      auto stable_scale = [&] {
        if (cfg.neumann_scale > 0) return cfg.neumann_scale;
        const int iters = st.power_probe.size() > 0 ? 2 : 6;
        const double lambda = estimate_inner_curvature(problem, st.inner, st.outer,
                                                       cfg.hvp_eps, iters, &st.power_probe);
        return 1.0 / (1.05 * std::max(lambda, 1e-12));
      };
      switch (method) {
        case Method::FD: {
          const double xi = cfg.neumann_scale > 0 ? cfg.neumann_scale
                                                  : std::min(cfg.lr_fd, stable_scale());
          hyper = hypergrad_fd(problem, st.inner, st.outer, xi, cfg.hvp_eps,
                               cfg.hypergrad_trust);
          break;
        }
        case Method::NMN: {
          st.nmn_scale = stable_scale();
          hyper = hypergrad_neumann(problem, st.inner, st.outer, cfg.neumann_K, st.nmn_scale,
                                    cfg.hvp_eps, cfg.hypergrad_trust);
          break;
        }
        default: {
          auto res = hypergrad_cg(problem, st.inner, st.outer, cfg.cg_K, st.cg_warm, cfg.hvp_eps,
                                  cfg.hypergrad_trust);
          hyper = res.grad_outer;
          st.cg_warm = res.w;  // re-initialize w0 from the last solve
          break;
        }
      }
      check_finite(hyper, "bilevel outer step");
      if (hyper.abs().maxCoeff() != 0.0) all_zero = false;
      st.outer = step(st.outer, hyper, cfg.lr_outer, cfg.step_rule, st.outer_step);

      const LossValue loss = problem.upper_loss_terms(st.inner, st.outer);
      if (!std::isfinite(loss.total)) throw NumericError("non-finite loss");
      st.report.loss_trajectory.push_back({st.iter_base + iter, loss, seconds_since(st.t0)});
      if (all_zero) break;  // stationary point
      if (conv.push(loss.total)) break;
    } catch (const NumericError& e) {
      st.inner = prev_inner;
      st.outer = prev_outer;
      st.inner_step = prev_inner_step;
      st.outer_step = prev_outer_step;
      st.report.aborted = true;
      st.report.abort_reason = e.what();
      log::warn(std::string("bilevel_run aborted: ") + e.what());
      break;
    }
  }

  if (cfg.post_polish && !st.report.aborted) {
    st.inner = inner_unroll(problem, st.inner, st.outer, cfg.so_epoch_iters, cfg.lr_inner);
  }
  finish_report(st, method, conv);
  return st.report;
}

RunReport am_smo(const BilevelProblem& problem, const RealGrid& init_inner,
                 const RealGrid& init_outer, const OptimizerConfig& cfg) {
  cfg.validate();
  LoopState st;
  st.inner = init_inner;
  st.outer = init_outer;
  ConvergenceTracker conv(cfg.convergence_window, cfg.convergence_rel_tol);
  if (cfg.audit_at_start) {
    const double err = audit_gradients(problem, st.inner, st.outer);
    if (err > 1e-3)
      throw NumericError("gradient audit failed: relative error " + std::to_string(err));
  }

  // The loss is structurally flat inside a phase whenever the frozen block
  // dominates, so convergence is judged on completed alternation cycles
  // rather than on raw iterations.
  const int phase_len = cfg.so_epoch_iters + cfg.mo_epoch_iters;
  for (int iter = 1; iter <= cfg.max_outer_iters; ++iter) {
    const bool so_phase = (iter - 1) % phase_len < cfg.so_epoch_iters;
    const RealGrid prev_inner = st.inner;
    const RealGrid prev_outer = st.outer;
    try {
      RealGrid g;
      if (so_phase) {
        g = problem.lower_grad_inner(st.inner, st.outer);
        check_finite(g, "am_smo SO step");
        st.inner = step(st.inner, g, cfg.lr_inner, cfg.step_rule, st.inner_step);
      } else {
        g = problem.upper_grad_outer(st.inner, st.outer);
        check_finite(g, "am_smo MO step");
        st.outer = step(st.outer, g, cfg.lr_outer, cfg.step_rule, st.outer_step);
      }
      const LossValue loss = problem.upper_loss_terms(st.inner, st.outer);
      if (!std::isfinite(loss.total)) throw NumericError("non-finite loss");
      st.report.loss_trajectory.push_back({st.iter_base + iter, loss, seconds_since(st.t0)});
      if (g.abs().maxCoeff() == 0.0) break;  // stationary
      if (iter % phase_len == 0 && conv.push(loss.total)) break;
    } catch (const NumericError& e) {
      st.inner = prev_inner;
      st.outer = prev_outer;
      st.report.aborted = true;
      st.report.abort_reason = e.what();
      log::warn(std::string("am_smo aborted: ") + e.what());
      break;
    }
  }
  finish_report(st, Method::AM, conv);
  return st.report;
}

RunReport mo_only(const BilevelProblem& problem, const RealGrid& init_inner,
                  const RealGrid& init_outer, const OptimizerConfig& cfg) {
  cfg.validate();
  LoopState st;
  st.inner = init_inner;  // frozen at initialization
  st.outer = init_outer;
  ConvergenceTracker conv(cfg.convergence_window, cfg.convergence_rel_tol);

  for (int iter = 1; iter <= cfg.max_outer_iters; ++iter) {
    const RealGrid prev_outer = st.outer;
    try {
      RealGrid g = problem.upper_grad_outer(st.inner, st.outer);
      check_finite(g, "mo_only step");
      st.outer = step(st.outer, g, cfg.lr_outer, cfg.step_rule, st.outer_step);
      const LossValue loss = problem.upper_loss_terms(st.inner, st.outer);
      if (!std::isfinite(loss.total)) throw NumericError("non-finite loss");
      st.report.loss_trajectory.push_back({st.iter_base + iter, loss, seconds_since(st.t0)});
      if (g.abs().maxCoeff() == 0.0) break;
      if (conv.push(loss.total)) break;
    } catch (const NumericError& e) {
      st.outer = prev_outer;
      st.report.aborted = true;
      st.report.abort_reason = e.what();
      log::warn(std::string("mo_only aborted: ") + e.what());
      break;
    }
  }
  finish_report(st, Method::MO, conv);
  return st.report;
}

RunReport run_method(const BilevelProblem& problem, const RealGrid& init_inner,
                     const RealGrid& init_outer, Method method, const OptimizerConfig& cfg,
                     const ResumeState* resume) {
  switch (method) {
    case Method::MO: return mo_only(problem, init_inner, init_outer, cfg);
    case Method::AM: return am_smo(problem, init_inner, init_outer, cfg);
    default: return bilevel_run(problem, init_inner, init_outer, method, cfg, resume);
  }
}

}  // namespace smo
