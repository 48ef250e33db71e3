// smo: batch front end for source/mask co-optimization.
//
// Subcommands: simulate, optimize, gradcheck, benchmark. Any configuration
// key can be overridden with --set key=value; --config loads a key=value
// file first. Exit codes: 0 ok, 1 validation/configuration error, 2 numeric
// failure, 3 gradcheck failure.

#include <CLI11.hpp>

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "smo/errors.hpp"
#include "smo/experiment.hpp"
#include "smo/log.hpp"

using namespace smo;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  int verbosity = 1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "key=value configuration file");
  cmd->add_option("--set", opts.sets, "override a configuration key, e.g. --set n_mask=128")
      ->take_all();
  cmd->add_option("-v,--verbosity", opts.verbosity, "0 silent, 1 warnings, 2 info");
}

// Layered configuration: defaults, then file, then --set overrides.
void apply_common(const CommonOpts& opts, ExperimentSpec& spec) {
  log::set_verbosity(opts.verbosity);
  std::map<std::string, std::string> kv;
  if (!opts.config_path.empty()) kv = load_key_values(opts.config_path);
  for (const std::string& s : opts.sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  apply_experiment_keys(kv, spec);
  spec.optical.validate();
  spec.optimizer.validate();
}

void print_result(const char* verb, const ExperimentResult& res) {
  std::printf("%s: L2 %.0f nm^2, PVB %.0f nm^2, EPE %d, %d iters, %.2f s [%s]\n", verb,
              res.l2_nm2, res.pvb_nm2, res.epe_count, res.report.iters_run, res.total_seconds,
              res.status.c_str());
}

std::vector<Method> parse_methods(const std::string& csv) {
  std::vector<Method> methods;
  std::string token;
  std::istringstream in(csv);
  while (std::getline(in, token, ',')) {
    if (!token.empty()) methods.push_back(method_from_string(token));
  }
  if (methods.empty()) throw ConfigError("no methods given");
  return methods;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"source/mask co-optimization toolkit"};
  app.require_subcommand(1);

  // simulate ---------------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "forward imaging of the initialized parameters");
  CommonOpts sim_opts;
  ExperimentSpec sim_spec;
  add_common(sim, sim_opts);
  sim->add_option("--pattern", sim_spec.pattern_path, "rect list, graymap, or suite:<name>")
      ->required();
  sim->add_option("--out", sim_spec.output_dir, "output directory")->required();

  // optimize ---------------------------------------------------------------
  auto* opt = app.add_subcommand("optimize", "run one optimization method");
  CommonOpts opt_opts;
  ExperimentSpec opt_spec;
  std::string opt_method = "NMN";
  add_common(opt, opt_opts);
  opt->add_option("--pattern", opt_spec.pattern_path, "rect list, graymap, or suite:<name>")
      ->required();
  opt->add_option("--out", opt_spec.output_dir, "output directory")->required();
  opt->add_option("--method", opt_method, "MO, AM, FD, NMN or CG");
  opt->add_option("--seed", opt_spec.seed, "random seed recorded with the run");

  // gradcheck ----------------------------------------------------------------
  auto* gc = app.add_subcommand("gradcheck", "finite-difference audit of the gradients");
  CommonOpts gc_opts;
  ExperimentSpec gc_spec;
  int gc_instances = 3;
  bool gc_corrupt = false;
  add_common(gc, gc_opts);
  gc->add_option("--instances", gc_instances, "number of seeded instances");
  gc->add_option("--seed", gc_spec.seed, "base seed");
  gc->add_flag("--corrupt-gradient", gc_corrupt, "test hook: inject a gradient error");

  // benchmark ----------------------------------------------------------------
  auto* bm = app.add_subcommand("benchmark", "run a method comparison table");
  CommonOpts bm_opts;
  ExperimentSpec bm_spec;
  std::vector<std::string> bm_patterns;
  std::string bm_methods = "MO,AM,FD,NMN,CG";
  bool bm_suite = false;
  bool bm_forward_timing = false;
  add_common(bm, bm_opts);
  bm->add_option("--pattern", bm_patterns, "patterns to run (repeatable)")->take_all();
  bm->add_flag("--suite", bm_suite, "run the bundled six-target synthetic suite");
  bm->add_option("--methods", bm_methods, "comma-separated method list");
  bm->add_option("--out", bm_spec.output_dir, "output directory")->required();
  int bm_jobs = 1;
  bm->add_option("--jobs", bm_jobs, "concurrent runs (each run also parallelizes internally)");
  bm->add_flag("--forward-timing", bm_forward_timing,
               "also measure the per-call forward-model times");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage problems are validation errors
  }

  try {
    if (sim->parsed()) {
      apply_common(sim_opts, sim_spec);
      print_result("simulate", simulate(sim_spec));
      return 0;
    }

    if (opt->parsed()) {
      apply_common(opt_opts, opt_spec);
      opt_spec.method = method_from_string(opt_method);
      if (opt_spec.method == Method::FD) opt_spec.optimizer.unroll_T = 1;
      ExperimentResult res = run_experiment(opt_spec);
      print_result("optimize", res);
      return res.status == "ok" ? 0 : 2;
    }

    if (gc->parsed()) {
      gc_spec.optical.n_mask = 32;
      gc_spec.optical.pixel_nm = 16.0;
      gc_spec.optical.n_source = 3;
      apply_common(gc_opts, gc_spec);
      if (gc_spec.optical.n_mask > 64)
        throw ValidationError("gradcheck instances are limited to n_mask <= 64");
      double worst_mask = 0, worst_source = 0, worst_sym = 0;
      for (int i = 0; i < gc_instances; ++i) {
        ExperimentSpec inst = gc_spec;
        inst.seed = gc_spec.seed + i + 1;
        GradcheckReport rep = gradcheck(inst, gc_corrupt);
        std::printf("instance %d (seed %llu): mask %.3e source %.3e hvp-symmetry %.3e\n", i + 1,
                    static_cast<unsigned long long>(inst.seed), rep.max_rel_err_mask,
                    rep.max_rel_err_source, rep.hvp_symmetry_rel);
        worst_mask = std::max(worst_mask, rep.max_rel_err_mask);
        worst_source = std::max(worst_source, rep.max_rel_err_source);
        worst_sym = std::max(worst_sym, rep.hvp_symmetry_rel);
      }
      std::printf("worst: mask %.3e source %.3e hvp-symmetry %.3e\n", worst_mask, worst_source,
                  worst_sym);
      const bool ok = worst_mask <= 1e-3 && worst_source <= 1e-3 && worst_sym <= 1e-3;
      std::printf("gradcheck %s\n", ok ? "PASSED" : "FAILED");
      return ok ? 0 : 3;
    }

    if (bm->parsed()) {
      apply_common(bm_opts, bm_spec);
      std::vector<Method> methods = parse_methods(bm_methods);
      std::vector<ExperimentSpec> specs;
      if (bm_suite) {
        specs = suite_specs(bm_spec.optical, bm_spec.optimizer, methods,
                            bm_spec.output_dir + "/runs");
      } else {
        if (bm_patterns.empty())
          throw ConfigError("benchmark needs --suite or at least one --pattern");
        for (Method m : methods) {
          for (const std::string& p : bm_patterns) {
            ExperimentSpec s = bm_spec;
            s.pattern_path = p;
            s.method = m;
            if (m == Method::FD) s.optimizer.unroll_T = 1;
            std::string stem = p.substr(p.find_last_of("/:") + 1);
            s.output_dir = bm_spec.output_dir + "/runs/" + to_string(m) + "_" + stem;
            specs.push_back(std::move(s));
          }
        }
      }
      auto rows = run_benchmark(specs, bm_spec.output_dir, bm_jobs);
      auto print_table = [](const std::vector<BenchmarkRow>& rs) {
        std::printf("%-5s %-24s %12s %12s %8s %6s %10s %10s\n", "meth", "pattern", "L2[nm^2]",
                    "PVB[nm^2]", "EPE", "iters", "s/iter", "total[s]");
        for (const auto& r : rs)
          std::printf("%-5s %-24s %12.0f %12.0f %8.1f %6d %10.4f %10.2f %s\n", r.method.c_str(),
                      r.pattern.c_str(), r.l2_nm2, r.pvb_nm2, r.epe_avg, r.iters, r.sec_per_iter,
                      r.total_seconds, r.status == "ok" ? "" : r.status.c_str());
      };
      print_table(rows);
      if (rows.size() > 1) {
        std::printf("\nper-method averages (sorted by L2):\n");
        print_table(aggregate_by_method(rows));
      }
      if (bm_forward_timing) {
        TargetPattern target = ingest_pattern(
            bm_suite ? "suite:dense_lines" : bm_patterns.front(), bm_spec.optical);
        ForwardTimingReport rep =
            forward_timing(bm_spec.optical, target, bm_spec.source_template, 5);
        write_forward_timing_csv(bm_spec.output_dir + "/forward_timing.csv", rep);
        std::printf(
            "forward timing: %d groups vs Q=%d; per call %.4f ms (P=%d) / %.4f ms (P=1) vs "
            "%.4f ms; measured ratio %.2f (P=max) %.2f (P=1); theory %.2f / %.2f\n",
            rep.active_groups, rep.q_kernels, rep.abbe_s_pmax * 1e3,
            bm_spec.optical.parallel_width, rep.abbe_s_p1 * 1e3, rep.hopkins_s * 1e3,
            rep.measured_ratio_pmax, rep.measured_ratio_p1, rep.theory_ratio_pmax,
            rep.theory_ratio_p1);
      }
      return 0;
    }
  } catch (const DarkSourceError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
