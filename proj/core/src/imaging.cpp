#include "smo/imaging.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <utility>

#include <Eigen/Eigenvalues>

#include "smo/errors.hpp"
#include "smo/fft.hpp"
#include "smo/log.hpp"
#include "smo/parallel.hpp"

namespace smo {

namespace {

// Fixed task granularity for the deterministic reduction: the partial-sum
// bracketing depends only on the group list, never on the worker count.
constexpr int kGroupsPerChunk = 4;

int chunk_count(int n_groups) { return (n_groups + kGroupsPerChunk - 1) / kGroupsPerChunk; }

}  // namespace

Pupil build_pupil(const OpticalConfig& cfg) {
  cfg.validate();
  Pupil p;
  p.cutoff = cfg.cutoff();
  p.radius_bins = cfg.cutoff_bins();
  const int n = cfg.n_mask;
  p.passband.resize(n, n);
  for (int r = 0; r < n; ++r) {
    const int kr = r - n / 2;  // centered layout
    for (int c = 0; c < n; ++c) {
      const int kc = c - n / 2;
      p.passband(r, c) = p.in_band(kr, kc) ? 1.0 : 0.0;
    }
  }
  if (p.radius_bins < 1.0)
    log::warn("pupil cutoff is below one frequency bin; images are DC-only");
  return p;
}

EffectiveSource group_source_points(const SourceGrid& source, const OpticalConfig& cfg) {
  const int n = source.n();
  if (n != cfg.n_source) throw ConfigError("source grid does not match n_source");
  const double radius_bins = cfg.cutoff_bins();
  const bool thresholding = cfg.source_threshold > 0;

  EffectiveSource es;
  std::map<std::pair<int, int>, int> index;  // shift -> slot in es.groups
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const double j = source.intensities(r, c);
      es.total_energy += j;
      if (thresholding && j <= cfg.source_threshold) continue;
      ++es.active_points;
      const int du = static_cast<int>(std::llround(source.sigma_y(r) * radius_bins));
      const int dv = static_cast<int>(std::llround(source.sigma_x(c) * radius_bins));
      auto [it, inserted] = index.try_emplace({du, dv}, static_cast<int>(es.groups.size()));
      if (inserted) es.groups.push_back(ShiftGroup{du, dv, 0.0, {}});
      ShiftGroup& g = es.groups[it->second];
      g.weight += j;
      g.members.push_back(r * n + c);
    }
  }
  if (thresholding && es.active_points == 0)
    throw DarkSourceError("every source point is at or below the activity threshold");

  std::sort(es.groups.begin(), es.groups.end(), [](const ShiftGroup& a, const ShiftGroup& b) {
    return a.du != b.du ? a.du < b.du : a.dv < b.dv;
  });
  for (const ShiftGroup& g : es.groups)
    es.max_shift_bins = std::max(es.max_shift_bins, std::hypot(double(g.du), double(g.dv)));
  return es;
}

namespace detail {

double& field_cache_budget_bytes() {
  static double budget = 1.5e9;
  return budget;
}

void abbe_forward(const SourceGrid& source, const RealGrid& mask, const Pupil& pupil,
                  const OpticalConfig& cfg, KeepFields keep, AbbeWorkspace& ws) {
  if (mask.rows() != cfg.n_mask || mask.cols() != cfg.n_mask)
    throw ConfigError("mask grid does not match n_mask");

  ws.source = group_source_points(source, cfg);
  const int n = cfg.n_mask;
  ws.intensity.resize(n, n);
  ws.intensity.setZero();
  if (ws.source.groups.empty() || ws.source.total_energy <= 0.0) {  // dark, unthresholded
    ws.band_index.clear();
    ws.fields.clear();
    return;
  }

  fft::forward(mask.cast<std::complex<double>>().eval(), ws.mask_spectrum);

  // Candidate bins: anything a shifted pupil can reach.
  const double reach = ws.source.max_shift_bins + pupil.radius_bins;
  std::vector<std::array<int, 3>> candidates;  // flat index, kr, kc
  for (int r = 0; r < n; ++r) {
    const int kr = fft::signed_bin(r, n);
    for (int c = 0; c < n; ++c) {
      const int kc = fft::signed_bin(c, n);
      if (double(kr) * kr + double(kc) * kc <= reach * reach)
        candidates.push_back({r * n + c, kr, kc});
    }
  }

  const int n_groups = static_cast<int>(ws.source.groups.size());
  ws.band_index.assign(n_groups, {});
  for (int g = 0; g < n_groups; ++g) {
    const ShiftGroup& grp = ws.source.groups[g];
    auto& idx = ws.band_index[g];
    for (const auto& cand : candidates) {
      if (pupil.in_band(cand[1] + grp.du, cand[2] + grp.dv)) idx.push_back(cand[0]);
    }
  }
  // Cached fields cost n_groups * n^2 complex doubles; past the budget the
  // gradient's backward pass recomputes them from the stored spectrum.
  const double field_bytes = 16.0 * n_groups * n * n;
  const bool cache_fields =
      keep == KeepFields::Complex && field_bytes <= field_cache_budget_bytes();
  if (keep == KeepFields::Complex && !cache_fields)
    log::info("abbe_forward: field cache exceeds budget; backward passes will recompute");
  if (cache_fields) {
    ws.fields.resize(n_groups);  // per-slot buffers recycle across calls
  } else {
    ws.fields.clear();
  }

  struct Scratch {
    ComplexGrid buf, field;
  };
  const std::complex<double>* spectrum = ws.mask_spectrum.data();
  std::function<Scratch()> make_scratch = [n] {
    return Scratch{ComplexGrid::Zero(n, n), ComplexGrid(n, n)};
  };
  std::function<void(int, Scratch&, RealGrid&)> work = [&](int chunk, Scratch& sc,
                                                           RealGrid& partial) {
    partial.resize(n, n);
    partial.setZero();
    const int g_lo = chunk * kGroupsPerChunk;
    const int g_hi = std::min(n_groups, g_lo + kGroupsPerChunk);
    for (int g = g_lo; g < g_hi; ++g) {
      // Only the band entries are nonzero; clearing them afterwards is far
      // cheaper than zeroing the whole buffer per group.
      std::complex<double>* b = sc.buf.data();
      for (int flat : ws.band_index[g]) b[flat] = spectrum[flat];
      ComplexGrid& field = cache_fields ? ws.fields[g] : sc.field;
      field.resize(n, n);
      fft::inverse(sc.buf, field);
      for (int flat : ws.band_index[g]) b[flat] = 0.0;
      partial += ws.source.groups[g].weight * field.abs2();
    }
  };
  std::function<void(int, RealGrid&)> commit = [&](int, RealGrid& partial) {
    ws.intensity += partial;
  };
  ordered_parallel_run<RealGrid, Scratch>(chunk_count(n_groups), cfg.parallel_width,
                                          make_scratch, work, commit);

  ws.intensity *= 1.0 / ws.source.total_energy;
}

}  // namespace detail

AerialImage abbe_aerial(const SourceGrid& source, const MaskGrid& mask, const Pupil& pupil,
                        const OpticalConfig& cfg) {
  detail::AbbeWorkspace ws;
  detail::abbe_forward(source, mask.transmission, pupil, cfg, detail::KeepFields::None, ws);
  return AerialImage{std::move(ws.intensity)};
}

TccMatrix build_tcc(const SourceGrid& source, const Pupil& pupil, const OpticalConfig& cfg) {
  EffectiveSource es = group_source_points(source, cfg);

  TccMatrix tcc;
  const double reach = es.max_shift_bins + pupil.radius_bins;
  const int kmax = static_cast<int>(std::floor(reach));
  for (int kr = -kmax; kr <= kmax; ++kr)
    for (int kc = -kmax; kc <= kmax; ++kc)
      if (double(kr) * kr + double(kc) * kc <= reach * reach)
        tcc.band.push_back(Eigen::Vector2i(kr, kc));

  const int b = static_cast<int>(tcc.band.size());
  const int n_groups = static_cast<int>(es.groups.size());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(b, b);

  std::function<int()> make_scratch = [] { return 0; };
  std::function<void(int, int&, Eigen::MatrixXd&)> work = [&](int chunk, int&,
                                                              Eigen::MatrixXd& partial) {
    partial.resize(b, b);
    partial.setZero();
    const int g_lo = chunk * kGroupsPerChunk;
    const int g_hi = std::min(n_groups, g_lo + kGroupsPerChunk);
    std::vector<int> inside;
    for (int g = g_lo; g < g_hi; ++g) {
      const ShiftGroup& grp = es.groups[g];
      inside.clear();
      for (int i = 0; i < b; ++i)
        if (pupil.in_band(tcc.band[i].x() + grp.du, tcc.band[i].y() + grp.dv)) inside.push_back(i);
      for (int i : inside)
        for (int j : inside) partial(i, j) += grp.weight;
    }
  };
  std::function<void(int, Eigen::MatrixXd&)> commit = [&](int, Eigen::MatrixXd& partial) {
    acc += partial;
  };
  ordered_parallel_run<Eigen::MatrixXd, int>(chunk_count(n_groups), cfg.parallel_width,
                                             make_scratch, work, commit);

  if (es.total_energy > 0) acc /= es.total_energy;
  tcc.entries = acc.cast<std::complex<double>>();
  return tcc;
}

SocsKernels socs_decompose(const TccMatrix& tcc, int q, const OpticalConfig& cfg) {
  if (q < 0) throw ConfigError("socs_decompose: q must be >= 0");
  const int b = static_cast<int>(tcc.entries.rows());
  SocsKernels out;
  if (q == 0 || b == 0) return out;
  if (q > b) {
    log::warn("socs_decompose: q = " + std::to_string(q) + " exceeds TCC dimension " +
              std::to_string(b) + "; clamping");
    q = b;
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(tcc.entries);
  if (solver.info() != Eigen::Success) throw NumericError("socs_decompose: eigensolver failed");

  const int n = cfg.n_mask;
  out.q_used = q;
  out.eigenvalues.reserve(q);
  ComplexGrid freq(n, n);
  for (int i = 0; i < q; ++i) {
    const int src = b - 1 - i;  // solver returns ascending order
    out.eigenvalues.push_back(solver.eigenvalues()[src]);
    freq.setZero();
    for (int row = 0; row < b; ++row) {
      const int r = fft::natural_bin(tcc.band[row].x(), n);
      const int c = fft::natural_bin(tcc.band[row].y(), n);
      freq(r, c) = solver.eigenvectors()(row, src);
    }
    out.freq_kernels.push_back(freq);
    out.kernels.push_back(fft::inverse(freq));
  }
  const double k1 = std::abs(out.eigenvalues.front());
  if (!out.eigenvalues.empty() && out.eigenvalues.back() < -1e-10 * k1)
    log::warn("socs_decompose: negative eigenvalue beyond PSD tolerance");
  return out;
}

AerialImage hopkins_aerial(const SocsKernels& kernels, const MaskGrid& mask,
                           const OpticalConfig& cfg) {
  const int n = cfg.n_mask;
  if (mask.transmission.rows() != n || mask.transmission.cols() != n)
    throw ConfigError("hopkins_aerial: mask grid does not match n_mask");

  AerialImage img;
  img.intensity = RealGrid::Zero(n, n);
  if (kernels.q_used == 0) return img;
  for (const auto& k : kernels.freq_kernels)
    if (k.rows() != n) throw ConfigError("hopkins_aerial: kernel grid does not match n_mask");

  const ComplexGrid spectrum = fft::forward(mask.transmission);

  struct Scratch {
    ComplexGrid buf, field;
  };
  const int n_q = kernels.q_used;
  std::function<Scratch()> make_scratch = [n] { return Scratch{ComplexGrid(n, n), ComplexGrid(n, n)}; };
  std::function<void(int, Scratch&, RealGrid&)> work = [&](int chunk, Scratch& sc,
                                                           RealGrid& partial) {
    partial.resize(n, n);
    partial.setZero();
    const int lo = chunk * kGroupsPerChunk;
    const int hi = std::min(n_q, lo + kGroupsPerChunk);
    for (int qi = lo; qi < hi; ++qi) {
      sc.buf = kernels.freq_kernels[qi] * spectrum;
      fft::inverse(sc.buf, sc.field);
      partial += kernels.eigenvalues[qi] * sc.field.abs2();
    }
  };
  std::function<void(int, RealGrid&)> commit = [&](int, RealGrid& partial) {
    img.intensity += partial;
  };
  ordered_parallel_run<RealGrid, Scratch>(chunk_count(n_q), cfg.parallel_width, make_scratch,
                                          work, commit);
  return img;
}

ResistImage resist(const AerialImage& aerial, const OpticalConfig& cfg) {
  if (!(cfg.resist_steepness > 0)) throw ConfigError("resist: steepness must be > 0");
  return ResistImage{sigmoid(cfg.resist_steepness * (aerial.intensity - cfg.resist_threshold))};
}

ForwardWindow forward_process_window(const ParamField& theta_j, const ParamField& theta_m,
                                     const OpticalConfig& cfg) {
  const SourceGrid source = activate_source(theta_j, cfg);
  const MaskGrid mask = activate_mask(theta_m, cfg);
  const Pupil pupil = build_pupil(cfg);

  ForwardWindow w;
  w.aerial = abbe_aerial(source, mask, pupil, cfg);
  const RealGrid& nominal = w.aerial.intensity;
  const double beta = cfg.resist_steepness;
  const double tr = cfg.resist_threshold;
  // The forward model is quadratic in the mask, so dose d scales intensity by d^2.
  w.z = ResistImage{sigmoid(beta * (nominal - tr))};
  w.z_min = ResistImage{sigmoid(beta * (cfg.dose_min * cfg.dose_min * nominal - tr))};
  w.z_max = ResistImage{sigmoid(beta * (cfg.dose_max * cfg.dose_max * nominal - tr))};
  return w;
}

}  // namespace smo
