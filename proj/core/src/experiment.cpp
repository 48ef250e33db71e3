#include "smo/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <thread>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "smo/errors.hpp"
#include "smo/log.hpp"
#include "smo/pgm.hpp"

namespace smo {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    double d = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("invalid numeric value for " + key + ": '" + value + "'");
  }
}

int to_int(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    long l = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return static_cast<int>(l);
  } catch (const std::exception&) {
    throw ConfigError("invalid integer value for " + key + ": '" + value + "'");
  }
}

template <typename T, typename Conv>
bool take(std::map<std::string, std::string>& kv, const std::string& key, T& out, Conv conv) {
  auto it = kv.find(key);
  if (it == kv.end()) return false;
  out = conv(key, it->second);
  kv.erase(it);
  return true;
}

}  // namespace

void apply_optimizer_keys(std::map<std::string, std::string>& kv, OptimizerConfig& cfg) {
  take(kv, "unroll_t", cfg.unroll_T, to_int);
  take(kv, "neumann_k", cfg.neumann_K, to_int);
  take(kv, "cg_k", cfg.cg_K, to_int);
  take(kv, "lr_inner", cfg.lr_inner, to_double);
  take(kv, "lr_outer", cfg.lr_outer, to_double);
  take(kv, "lr_fd", cfg.lr_fd, to_double);
  take(kv, "max_outer_iters", cfg.max_outer_iters, to_int);
  take(kv, "convergence_rel_tol", cfg.convergence_rel_tol, to_double);
  take(kv, "convergence_window", cfg.convergence_window, to_int);
  take(kv, "so_epoch_iters", cfg.so_epoch_iters, to_int);
  take(kv, "mo_epoch_iters", cfg.mo_epoch_iters, to_int);
  take(kv, "hvp_eps", cfg.hvp_eps, to_double);
  take(kv, "neumann_scale", cfg.neumann_scale, to_double);
  take(kv, "hypergrad_trust", cfg.hypergrad_trust, to_double);
  take(kv, "adam_beta1", cfg.step_rule.adam.beta1, to_double);
  take(kv, "adam_beta2", cfg.step_rule.adam.beta2, to_double);
  take(kv, "adam_eps", cfg.step_rule.adam.eps, to_double);
  auto it = kv.find("step_rule");
  if (it != kv.end()) {
    if (it->second == "gd" || it->second == "GD") {
      cfg.step_rule.kind = StepKind::GradientDescent;
    } else if (it->second == "adam" || it->second == "Adam") {
      cfg.step_rule.kind = StepKind::Adam;
    } else {
      throw ConfigError("step_rule must be gd or adam, got '" + it->second + "'");
    }
    kv.erase(it);
  }
  int audit = cfg.audit_at_start ? 1 : 0;
  if (take(kv, "audit_at_start", audit, to_int)) cfg.audit_at_start = audit != 0;
  int polish = cfg.post_polish ? 1 : 0;
  if (take(kv, "post_polish", polish, to_int)) cfg.post_polish = polish != 0;
}

void apply_experiment_keys(std::map<std::string, std::string>& kv, ExperimentSpec& spec) {
  apply_optical_keys(kv, spec.optical);
  apply_optimizer_keys(kv, spec.optimizer);
  take(kv, "epe_sample_step_nm", spec.epe.sample_step_nm, to_double);
  take(kv, "epe_threshold_nm", spec.epe.threshold_nm, to_double);
  auto t = kv.find("source_template");
  if (t != kv.end()) {
    spec.source_template = source_template_from_string(t->second);
    kv.erase(t);
  }
  auto m = kv.find("method");
  if (m != kv.end()) {
    spec.method = method_from_string(m->second);
    kv.erase(m);
  }
  long long seed = static_cast<long long>(spec.seed);
  auto s = kv.find("seed");
  if (s != kv.end()) {
    seed = std::stoll(s->second);
    spec.seed = static_cast<std::uint64_t>(seed);
    kv.erase(s);
  }
  int det = spec.deterministic_artifacts ? 1 : 0;
  if (take(kv, "deterministic_artifacts", det, to_int)) spec.deterministic_artifacts = det != 0;
  if (!kv.empty()) throw ConfigError("unrecognized configuration key: " + kv.begin()->first);
}

namespace {

struct Evaluation {
  double l2_nm2 = 0;
  double pvb_nm2 = 0;
  EpeResult epe;
  ForwardWindow window;
};

Evaluation evaluate(const ParamField& theta_j, const ParamField& theta_m,
                    const OpticalConfig& cfg, const TargetPattern& target, const EpeSpec& epe) {
  Evaluation ev;
  ev.window = forward_process_window(theta_j, theta_m, cfg);
  const BinaryImage z = binarize(ev.window.z);
  const BinaryImage z_min = binarize(ev.window.z_min);
  const BinaryImage z_max = binarize(ev.window.z_max);
  ev.l2_nm2 = metric_l2(z, target, cfg.pixel_nm);
  ev.pvb_nm2 = metric_pvb(z_min, z_max, cfg.pixel_nm);
  ev.epe = epe_stats(z, target, epe, cfg.pixel_nm);
  return ev;
}

void write_loss_curve(const std::string& path, const RunReport& report) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write " + path);
  f << "iter,total,l2_term,pvb_term,wall_clock_s\n";
  for (const auto& p : report.loss_trajectory)
    f << p.iter << "," << fmt(p.loss.total) << "," << fmt(p.loss.l2_term) << ","
      << fmt(p.loss.pvb_term) << "," << fmt(p.wall_clock_s) << "\n";
}

void write_summary(const std::string& path, const std::string& method, const Evaluation& ev,
                   int iters, double total_seconds, const std::string& status,
                   bool deterministic) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write " + path);
  f << "method,l2_nm2,pvb_nm2,epe_count,iters,total_seconds,status\n";
  f << method << "," << fmt(ev.l2_nm2) << "," << fmt(ev.pvb_nm2) << "," << ev.epe.violations
    << "," << iters << "," << fmt(deterministic ? 0.0 : total_seconds) << "," << status << "\n";
}

void write_images(const std::string& dir, const OpticalConfig& cfg, const ParamField& theta_j,
                  const ParamField& theta_m, const TargetPattern& target,
                  const ForwardWindow& window) {
  const MaskGrid mask = activate_mask(theta_m, cfg);
  const SourceGrid source = activate_source(theta_j, cfg);
  write_pgm(dir + "/final_mask.pgm", mask.transmission);
  write_pgm_binary(dir + "/final_mask_bin.pgm", mask.transmission);
  write_pgm(dir + "/final_source.pgm", source.intensities);
  write_pgm(dir + "/resist_nominal.pgm", window.z.values);
  write_pgm_binary(dir + "/resist_nominal_bin.pgm", window.z.values);
  write_pgm_binary(dir + "/target.pgm", target.pixels);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  const Clock::time_point t0 = Clock::now();
  spec.optical.validate();
  spec.optimizer.validate();
  if (spec.output_dir.empty()) throw ConfigError("output_dir must be set");
  fs::create_directories(spec.output_dir);

  const TargetPattern target = ingest_pattern(spec.pattern_path, spec.optical);
  const ParamField theta_m0 = init_mask_params(target, spec.optical);
  const ParamField theta_j0 = init_source_params(spec.source_template, spec.optical);
  SmoBilevelProblem problem(spec.optical, target);

  ExperimentResult out;
  out.report = run_method(problem, theta_j0.values, theta_m0.values, spec.method, spec.optimizer);
  if (out.report.aborted) out.status = "numeric_failure:" + out.report.abort_reason;

  Evaluation ev = evaluate(out.report.final_theta_J, out.report.final_theta_M, spec.optical,
                           target, spec.epe);
  out.l2_nm2 = ev.l2_nm2;
  out.pvb_nm2 = ev.pvb_nm2;
  out.epe_count = ev.epe.violations;
  out.total_seconds = seconds_since(t0);

  write_loss_curve(spec.output_dir + "/loss_curve.csv", out.report);
  write_images(spec.output_dir, spec.optical, out.report.final_theta_J, out.report.final_theta_M,
               target, ev.window);
  write_summary(spec.output_dir + "/summary.csv", to_string(spec.method), ev,
                out.report.iters_run, out.total_seconds, out.status,
                spec.deterministic_artifacts);
  return out;
}

ExperimentResult simulate(const ExperimentSpec& spec) {
  const Clock::time_point t0 = Clock::now();
  spec.optical.validate();
  if (spec.output_dir.empty()) throw ConfigError("output_dir must be set");
  fs::create_directories(spec.output_dir);

  const TargetPattern target = ingest_pattern(spec.pattern_path, spec.optical);
  const ParamField theta_m0 = init_mask_params(target, spec.optical);
  const ParamField theta_j0 = init_source_params(spec.source_template, spec.optical);

  ExperimentResult out;
  Evaluation ev = evaluate(theta_j0, theta_m0, spec.optical, target, spec.epe);
  out.l2_nm2 = ev.l2_nm2;
  out.pvb_nm2 = ev.pvb_nm2;
  out.epe_count = ev.epe.violations;
  out.total_seconds = seconds_since(t0);

  write_pgm(spec.output_dir + "/aerial.pgm",
            (ev.window.aerial.intensity / std::max(1e-12, ev.window.aerial.intensity.maxCoeff()))
                .eval());
  write_images(spec.output_dir, spec.optical, theta_j0, theta_m0, target, ev.window);
  write_summary(spec.output_dir + "/summary.csv", "SIM", ev, 0, out.total_seconds, out.status,
                spec.deterministic_artifacts);
  return out;
}

namespace {

// Deterministic random instance for gradient checking: a couple of feature
// rectangles plus noise on both parameter fields.
struct GradcheckInstance {
  TargetPattern target;
  ParamField theta_j, theta_m;
};

GradcheckInstance gradcheck_instance(const ExperimentSpec& spec) {
  const OpticalConfig& cfg = spec.optical;
  std::mt19937_64 rng(spec.seed * 0x9e3779b9ULL + 12345ULL);
  const long tile = static_cast<long>(cfg.tile_nm());
  std::uniform_int_distribution<long> pos(tile / 8, tile * 5 / 8);
  std::uniform_int_distribution<long> size(tile / 6, tile / 3);
  std::vector<Rect> rects;
  for (int i = 0; i < 2; ++i) {
    Rect r;
    r.x1 = pos(rng);
    r.y1 = pos(rng);
    r.x2 = std::min<long>(tile, r.x1 + size(rng));
    r.y2 = std::min<long>(tile, r.y1 + size(rng));
    if (r.x1 < r.x2 && r.y1 < r.y2) rects.push_back(r);
  }
  GradcheckInstance inst;
  inst.target = pattern_from_rects(rects, cfg);
  inst.theta_m = init_mask_params(inst.target, cfg);
  inst.theta_j = init_source_params(spec.source_template, cfg);
  std::uniform_real_distribution<double> noise(-0.3, 0.3);
  for (auto& v : inst.theta_m.values.reshaped()) v += noise(rng);
  for (auto& v : inst.theta_j.values.reshaped()) v += noise(rng);
  return inst;
}

// Max |analytic - fd| over the field, relative to the largest fd magnitude.
double max_rel_error(const RealGrid& analytic, const RealGrid& fd) {
  const double scale = std::max(fd.abs().maxCoeff(), 1e-12);
  return (analytic - fd).abs().maxCoeff() / scale;
}

}  // namespace

GradcheckReport gradcheck(const ExperimentSpec& spec, bool corrupt_hook) {
  if (spec.optical.n_mask > 64)
    throw ValidationError("gradcheck refuses n_mask > 64 (full finite differences)");
  spec.optical.validate();

  GradcheckInstance inst = gradcheck_instance(spec);
  SmoBilevelProblem problem(spec.optical, inst.target);
  if (corrupt_hook) problem.corrupt_gradients_for_test(1.02);

  const RealGrid& tj = inst.theta_j.values;
  const RealGrid& tm = inst.theta_m.values;
  const GradPair analytic = problem.upper_grad(tj, tm);

  const double h = 1e-4;
  RealGrid fd_mask(tm.rows(), tm.cols());
  {
    RealGrid x = tm;
    for (int r = 0; r < tm.rows(); ++r)
      for (int c = 0; c < tm.cols(); ++c) {
        const double keep = x(r, c);
        x(r, c) = keep + h;
        const double up = problem.upper_loss(tj, x);
        x(r, c) = keep - h;
        const double down = problem.upper_loss(tj, x);
        x(r, c) = keep;
        fd_mask(r, c) = (up - down) / (2 * h);
      }
  }
  RealGrid fd_source(tj.rows(), tj.cols());
  {
    RealGrid x = tj;
    for (int r = 0; r < tj.rows(); ++r)
      for (int c = 0; c < tj.cols(); ++c) {
        const double keep = x(r, c);
        x(r, c) = keep + h;
        const double up = problem.lower_loss(x, tm);
        x(r, c) = keep - h;
        const double down = problem.lower_loss(x, tm);
        x(r, c) = keep;
        fd_source(r, c) = (up - down) / (2 * h);
      }
  }

  GradcheckReport rep;
  rep.max_rel_err_mask = max_rel_error(analytic.wrt_mask, fd_mask);
  rep.max_rel_err_source = max_rel_error(analytic.wrt_source, fd_source);

  // HVP symmetry: <H u, v> must equal <u, H v>.
  std::mt19937_64 rng(spec.seed + 99);
  std::normal_distribution<double> nd(0.0, 1.0);
  RealGrid u(tj.rows(), tj.cols()), v(tj.rows(), tj.cols());
  for (auto& x : u.reshaped()) x = nd(rng);
  for (auto& x : v.reshaped()) x = nd(rng);
  const RealGrid hu = hvp_so_jj(inst.theta_j, inst.theta_m, u, spec.optical, inst.target,
                                spec.optimizer.hvp_eps);
  const RealGrid hv = hvp_so_jj(inst.theta_j, inst.theta_m, v, spec.optical, inst.target,
                                spec.optimizer.hvp_eps);
  const double uhv = (u * hv).sum();
  const double vhu = (v * hu).sum();
  rep.hvp_symmetry_rel = std::abs(uhv - vhu) / std::max({std::abs(uhv), std::abs(vhu), 1e-12});

  rep.passed = rep.max_rel_err_mask <= 1e-3 && rep.max_rel_err_source <= 1e-3 &&
               rep.hvp_symmetry_rel <= 1e-3;
  return rep;
}

std::vector<ExperimentSpec> suite_specs(const OpticalConfig& base, const OptimizerConfig& opt,
                                        const std::vector<Method>& methods,
                                        const std::string& out_root) {
  std::vector<ExperimentSpec> specs;
  for (Method m : methods) {
    for (const std::string& name : suite_names()) {
      ExperimentSpec s;
      s.pattern_path = "suite:" + name;
      s.optical = base;
      s.optimizer = opt;
      if (m == Method::FD) s.optimizer.unroll_T = 1;  // single inner step by construction
      s.method = m;
      s.output_dir = out_root + "/" + to_string(m) + "_" + name;
      specs.push_back(std::move(s));
    }
  }
  return specs;
}

std::vector<BenchmarkRow> run_benchmark(const std::vector<ExperimentSpec>& specs,
                                        const std::string& out_dir, int jobs) {
  std::vector<BenchmarkRow> rows(specs.size());
  auto run_one = [&](size_t i) {
    const ExperimentSpec& spec = specs[i];
    BenchmarkRow row;
    row.method = to_string(spec.method);
    row.pattern = spec.pattern_path;
    try {
      ExperimentResult res = run_experiment(spec);
      row.l2_nm2 = res.l2_nm2;
      row.pvb_nm2 = res.pvb_nm2;
      row.epe_avg = res.epe_count;
      row.iters = res.report.iters_run;
      row.total_seconds = res.total_seconds;
      row.sec_per_iter = res.report.iters_run > 0 ? res.total_seconds / res.report.iters_run : 0;
      row.status = res.status;
    } catch (const Error& e) {
      row.status = std::string("error:") + e.what();
      log::warn("benchmark run failed (" + row.method + ", " + row.pattern + "): " + e.what());
    }
    rows[i] = std::move(row);
  };
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(specs.size())));
  if (jobs == 1) {
    for (size_t i = 0; i < specs.size(); ++i) run_one(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < jobs; ++w)
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < specs.size(); i = next.fetch_add(1)) run_one(i);
      });
    for (auto& th : pool) th.join();
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const BenchmarkRow& a, const BenchmarkRow& b) { return a.l2_nm2 < b.l2_nm2; });
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    auto write_rows = [](const std::string& path, const std::vector<BenchmarkRow>& rs) {
      std::ofstream f(path);
      if (!f) throw ValidationError("cannot write " + path);
      f << "method,pattern,l2_nm2,pvb_nm2,epe_avg,iters,sec_per_iter,total_seconds,status\n";
      for (const auto& r : rs)
        f << r.method << "," << r.pattern << "," << fmt(r.l2_nm2) << "," << fmt(r.pvb_nm2) << ","
          << fmt(r.epe_avg) << "," << r.iters << "," << fmt(r.sec_per_iter) << ","
          << fmt(r.total_seconds) << "," << r.status << "\n";
    };
    write_rows(out_dir + "/benchmark.csv", rows);
    write_rows(out_dir + "/benchmark_methods.csv", aggregate_by_method(rows));
  }
  return rows;
}

std::vector<BenchmarkRow> aggregate_by_method(const std::vector<BenchmarkRow>& rows) {
  std::map<std::string, std::vector<const BenchmarkRow*>> by_method;
  for (const auto& r : rows)
    if (r.status == "ok") by_method[r.method].push_back(&r);

  std::vector<BenchmarkRow> avg;
  for (const auto& [method, group] : by_method) {
    BenchmarkRow a;
    a.method = method;
    a.pattern = "avg(" + std::to_string(group.size()) + ")";
    for (const BenchmarkRow* r : group) {
      a.l2_nm2 += r->l2_nm2;
      a.pvb_nm2 += r->pvb_nm2;
      a.epe_avg += r->epe_avg;
      a.iters += r->iters;
      a.sec_per_iter += r->sec_per_iter;
      a.total_seconds += r->total_seconds;
    }
    const double n = static_cast<double>(group.size());
    a.l2_nm2 /= n;
    a.pvb_nm2 /= n;
    a.epe_avg /= n;
    a.iters = static_cast<int>(a.iters / n);
    a.sec_per_iter /= n;
    avg.push_back(std::move(a));
  }
  std::stable_sort(avg.begin(), avg.end(),
                   [](const BenchmarkRow& a, const BenchmarkRow& b) { return a.l2_nm2 < b.l2_nm2; });
  return avg;
}

ForwardTimingReport forward_timing(const OpticalConfig& cfg, const TargetPattern& target,
                                   SourceTemplate source_template, int repeats) {
  cfg.validate();
  const ParamField theta_j = init_source_params(source_template, cfg);
  const ParamField theta_m = init_mask_params(target, cfg);
  const SourceGrid source = activate_source(theta_j, cfg);
  const MaskGrid mask = activate_mask(theta_m, cfg);
  const Pupil pupil = build_pupil(cfg);

  ForwardTimingReport rep;
  rep.active_groups = static_cast<int>(group_source_points(source, cfg).groups.size());

  const TccMatrix tcc = build_tcc(source, pupil, cfg);
  const SocsKernels kernels = socs_decompose(tcc, cfg.q_kernels, cfg);
  rep.q_kernels = kernels.q_used;

  auto time_forward = [&](auto&& fn) {
    fn();  // warm caches and FFT plans
    const Clock::time_point t0 = Clock::now();
    for (int i = 0; i < repeats; ++i) fn();
    return seconds_since(t0) / repeats;
  };

  OpticalConfig serial = cfg;
  serial.parallel_width = 1;
  rep.abbe_s_pmax = time_forward([&] { abbe_aerial(source, mask, pupil, cfg); });
  rep.abbe_s_p1 = time_forward([&] { abbe_aerial(source, mask, pupil, serial); });
  rep.hopkins_s = time_forward([&] { hopkins_aerial(kernels, mask, cfg); });

  const double sigma = rep.active_groups;
  const double q = std::max(1, rep.q_kernels);
  rep.measured_ratio_pmax = rep.abbe_s_pmax / rep.hopkins_s;
  rep.measured_ratio_p1 = rep.abbe_s_p1 / rep.hopkins_s;
  rep.theory_ratio_pmax = std::ceil(sigma / cfg.parallel_width) / std::ceil(q / cfg.parallel_width);
  rep.theory_ratio_p1 = sigma / q;
  return rep;
}

void write_forward_timing_csv(const std::string& path, const ForwardTimingReport& r) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write " + path);
  f << "active_groups,q_kernels,abbe_s_pmax,abbe_s_p1,hopkins_s,measured_ratio_pmax,"
       "measured_ratio_p1,theory_ratio_pmax,theory_ratio_p1\n";
  f << r.active_groups << "," << r.q_kernels << "," << fmt(r.abbe_s_pmax) << ","
    << fmt(r.abbe_s_p1) << "," << fmt(r.hopkins_s) << "," << fmt(r.measured_ratio_pmax) << ","
    << fmt(r.measured_ratio_p1) << "," << fmt(r.theory_ratio_pmax) << ","
    << fmt(r.theory_ratio_p1) << "\n";
}

}  // namespace smo
