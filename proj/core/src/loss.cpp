#include "smo/loss.hpp"

#include <cmath>

#include "smo/errors.hpp"
#include "smo/fft.hpp"
#include "smo/parallel.hpp"

namespace smo {

namespace {

void check_same_shape(const RealGrid& a, const RealGrid& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError(std::string(what) + ": shape mismatch");
}

constexpr int kGroupsPerChunk = 4;

int chunk_count(int n_groups) { return (n_groups + kGroupsPerChunk - 1) / kGroupsPerChunk; }

// Per-dose resist images and the combined adjoint dL/dI. The three dose
// conditions reduce to scalings of one nominal intensity because the imaging
// model is quadratic in the mask.
struct WindowEval {
  RealGrid z, z_min, z_max;
  LossValue loss;
  RealGrid upstream;  // dL/dI
};

WindowEval eval_window(const RealGrid& intensity, const RealGrid& target,
                       const OpticalConfig& cfg, bool with_upstream) {
  const double beta = cfg.resist_steepness;
  const double tr = cfg.resist_threshold;
  const double d2min = cfg.dose_min * cfg.dose_min;
  const double d2max = cfg.dose_max * cfg.dose_max;

  WindowEval ev;
  ev.z = sigmoid(beta * (intensity - tr));
  ev.z_min = sigmoid(beta * (d2min * intensity - tr));
  ev.z_max = sigmoid(beta * (d2max * intensity - tr));

  const RealGrid r_nom = ev.z - target;
  const RealGrid r_min = ev.z_min - target;
  const RealGrid r_max = ev.z_max - target;
  ev.loss.l2_term = r_nom.square().sum();
  ev.loss.pvb_term = r_max.square().sum() + r_min.square().sum();
  ev.loss.total = cfg.gamma * ev.loss.l2_term + cfg.eta * ev.loss.pvb_term;

  if (with_upstream) {
    ev.upstream = cfg.gamma * 2.0 * r_nom * beta * ev.z * (1.0 - ev.z) +
                  cfg.eta * 2.0 * r_min * beta * ev.z_min * (1.0 - ev.z_min) * d2min +
                  cfg.eta * 2.0 * r_max * beta * ev.z_max * (1.0 - ev.z_max) * d2max;
  }
  return ev;
}

}  // namespace

double loss_l2(const ResistImage& z, const TargetPattern& target) {
  check_same_shape(z.values, target.pixels, "loss_l2");
  return (z.values - target.pixels).square().sum();
}

double loss_pvb(const ResistImage& z_min, const ResistImage& z_max, const TargetPattern& target) {
  check_same_shape(z_min.values, target.pixels, "loss_pvb");
  check_same_shape(z_max.values, target.pixels, "loss_pvb");
  return (z_max.values - target.pixels).square().sum() +
         (z_min.values - target.pixels).square().sum();
}

LossValue loss_smo_raw(const ParamField& theta_j, const ParamField& theta_m,
                       const OpticalConfig& cfg, const RealGrid& target_values,
                       detail::AbbeWorkspace* reuse) {
  const SourceGrid source = activate_source(theta_j, cfg);
  const MaskGrid mask = activate_mask(theta_m, cfg);
  const Pupil pupil = build_pupil(cfg);
  detail::AbbeWorkspace local;
  detail::AbbeWorkspace& ws = reuse ? *reuse : local;
  detail::abbe_forward(source, mask.transmission, pupil, cfg, detail::KeepFields::None, ws);
  check_same_shape(ws.intensity, target_values, "loss_smo");
  return eval_window(ws.intensity, target_values, cfg, false).loss;
}

LossValue loss_smo(const ParamField& theta_j, const ParamField& theta_m, const OpticalConfig& cfg,
                   const TargetPattern& target) {
  return loss_smo_raw(theta_j, theta_m, cfg, target.pixels);
}

GradResult grad_smo_raw(const ParamField& theta_j, const ParamField& theta_m,
                        const OpticalConfig& cfg, const RealGrid& target_values, GradView view,
                        detail::AbbeWorkspace* reuse) {
  const SourceGrid source = activate_source(theta_j, cfg);
  const MaskGrid mask = activate_mask(theta_m, cfg);
  const Pupil pupil = build_pupil(cfg);

  const int n = cfg.n_mask;
  const int ns = cfg.n_source;

  const bool want_mask = view != GradView::SourceOnly;
  const bool want_source = view != GradView::MaskOnly;

  detail::AbbeWorkspace local;
  detail::AbbeWorkspace& ws = reuse ? *reuse : local;
  detail::abbe_forward(source, mask.transmission, pupil, cfg, detail::KeepFields::Complex, ws);
  check_same_shape(ws.intensity, target_values, "grad_smo");

  WindowEval ev = eval_window(ws.intensity, target_values, cfg, true);

  GradResult out;
  out.loss = ev.loss;
  out.grad.wrt_source = RealGrid::Zero(ns, ns);
  out.grad.wrt_mask = RealGrid::Zero(n, n);

  const double energy = ws.source.total_energy;
  const int n_groups = static_cast<int>(ws.source.groups.size());
  if (n_groups == 0 || energy <= 0.0) return out;  // dark and unthresholded: flat zero

  // Backward pass over the source groups.
  //
  // Mask chain, for one group with weight w and band filter H_g:
  //   dL/dM += (2 w / E) Re IFFT[ H_g . FFT(G . A_g) ],
  // accumulated in the frequency domain so a single inverse transform
  // finishes the sum. Source chain: dL/dj for a point in group g is
  // (<G, |A_g|^2> - <G, I>) / E, and points skipped by the threshold keep
  // only the normalization term -<G, I> / E.
  const RealGrid& upstream = ev.upstream;
  std::vector<double> group_dot(n_groups, 0.0);
  ComplexGrid freq_acc;
  if (want_mask) freq_acc = ComplexGrid::Zero(n, n);

  struct Scratch {
    ComplexGrid weighted, spec, upstream_c, band_buf, field_buf;
  };
  struct Chunk {
    // Sparse frequency contribution: band values per group, plus dots.
    std::vector<std::pair<int, double>> dots;
    std::vector<int> groups;
    std::vector<std::vector<std::complex<double>>> band_values;
  };
  const bool fields_cached = !ws.fields.empty();
  const std::complex<double>* spectrum = ws.mask_spectrum.data();
  std::function<Scratch()> make_scratch = [&] {
    Scratch sc{ComplexGrid(n, n), ComplexGrid(n, n), {}, {}, {}};
    if (want_mask) sc.upstream_c = upstream.cast<std::complex<double>>();
    if (!fields_cached) {
      sc.band_buf = ComplexGrid::Zero(n, n);
      sc.field_buf.resize(n, n);
    }
    return sc;
  };
  std::function<void(int, Scratch&, Chunk&)> work = [&](int chunk, Scratch& sc, Chunk& out) {
    out.dots.clear();
    out.groups.clear();
    out.band_values.clear();
    const int g_lo = chunk * kGroupsPerChunk;
    const int g_hi = std::min(n_groups, g_lo + kGroupsPerChunk);
    for (int g = g_lo; g < g_hi; ++g) {
      if (!fields_cached) {  // rebuild A_g = IFFT[H_g . spectrum]
        std::complex<double>* bb = sc.band_buf.data();
        for (int flat : ws.band_index[g]) bb[flat] = spectrum[flat];
        fft::inverse(sc.band_buf, sc.field_buf);
        for (int flat : ws.band_index[g]) bb[flat] = 0.0;
      }
      const ComplexGrid& field = fields_cached ? ws.fields[g] : sc.field_buf;
      if (want_source)
        out.dots.emplace_back(g, (upstream * field.abs2()).sum());
      if (want_mask) {
        sc.weighted = field * sc.upstream_c;
        fft::forward(sc.weighted, sc.spec);
        const double w = ws.source.groups[g].weight;
        const std::complex<double>* sp = sc.spec.data();
        out.groups.push_back(g);
        auto& vals = out.band_values.emplace_back();
        vals.reserve(ws.band_index[g].size());
        for (int flat : ws.band_index[g]) vals.push_back(w * sp[flat]);
      }
    }
  };
  std::function<void(int, Chunk&)> commit = [&](int, Chunk& c) {
    for (size_t i = 0; i < c.groups.size(); ++i) {
      const int g = c.groups[i];
      std::complex<double>* acc = freq_acc.data();
      const auto& idx = ws.band_index[g];
      for (size_t j = 0; j < idx.size(); ++j) acc[idx[j]] += c.band_values[i][j];
    }
    for (const auto& [g, d] : c.dots) group_dot[g] = d;
  };
  ordered_parallel_run<Chunk, Scratch>(chunk_count(n_groups), cfg.parallel_width, make_scratch,
                                       work, commit);

  if (want_mask) {
    const RealGrid d_mask = (2.0 / energy) * fft::inverse(freq_acc).real();
    const RealGrid& m = mask.transmission;
    out.grad.wrt_mask = d_mask * (cfg.alpha_m * m * (1.0 - m));
  }

  if (want_source) {
    const double upstream_dot_i = (upstream * ws.intensity).sum();
    RealGrid d_j = RealGrid::Constant(ns, ns, -upstream_dot_i / energy);
    for (int g = 0; g < n_groups; ++g) {
      const double v = (group_dot[g] - upstream_dot_i) / energy;
      for (int flat : ws.source.groups[g].members) d_j(flat / ns, flat % ns) = v;
    }
    const RealGrid& j = source.intensities;
    out.grad.wrt_source = d_j * (cfg.alpha_j * j * (1.0 - j));
  }
  return out;
}

GradResult grad_smo(const ParamField& theta_j, const ParamField& theta_m, const OpticalConfig& cfg,
                    const TargetPattern& target, GradView view) {
  return grad_smo_raw(theta_j, theta_m, cfg, target.pixels, view);
}

RealGrid fd_directional(const GradFn& grad_at, const RealGrid& at, const RealGrid& v, double eps) {
  if (!(eps > 0)) throw ConfigError("fd_directional: eps must be > 0");
  const double scale = v.abs().maxCoeff();
  if (scale == 0.0) return (0.0 * grad_at(at)).eval();  // zero, with the gradient's shape
  const double h = eps / std::max(scale, 1e-12);
  const RealGrid plus = grad_at(at + h * v);
  const RealGrid minus = grad_at(at - h * v);
  return (plus - minus) / (2.0 * h);
}

RealGrid hvp_so_jj(const ParamField& theta_j, const ParamField& theta_m, const RealGrid& v,
                   const OpticalConfig& cfg, const TargetPattern& target, double eps) {
  if (v.abs().maxCoeff() == 0.0) return RealGrid::Zero(v.rows(), v.cols());
  GradFn grad_at = [&](const RealGrid& x) {
    ParamField t{x, ParamKind::SourceParams};
    return grad_smo(t, theta_m, cfg, target, GradView::SourceOnly).grad.wrt_source;
  };
  return fd_directional(grad_at, theta_j.values, v, eps);
}

RealGrid jvp_so_mj(const ParamField& theta_j, const ParamField& theta_m, const RealGrid& w,
                   const OpticalConfig& cfg, const TargetPattern& target, double eps) {
  if (w.abs().maxCoeff() == 0.0) return RealGrid::Zero(theta_m.values.rows(), theta_m.values.cols());
  GradFn grad_at = [&](const RealGrid& x) {
    ParamField t{x, ParamKind::SourceParams};
    return grad_smo(t, theta_m, cfg, target, GradView::MaskOnly).grad.wrt_mask;
  };
  return fd_directional(grad_at, theta_j.values, w, eps);
}

}  // namespace smo
