#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "smo/metrics.hpp"
#include "smo/optimize.hpp"
#include "smo/pattern.hpp"

namespace smo {

// One batch run: pattern, configuration, method and output location.
struct ExperimentSpec {
  std::string pattern_path;
  OpticalConfig optical;
  OptimizerConfig optimizer;
  EpeSpec epe;
  Method method = Method::NMN;
  SourceTemplate source_template = SourceTemplate::Annular;
  std::string output_dir;
  std::uint64_t seed = 0;

  // When set, summary.csv carries a zero in the total_seconds column so the
  // file is byte-identical across repeated runs; wall clocks stay available
  // in loss_curve.csv.
  bool deterministic_artifacts = true;
};

// Applies recognized optimizer/EPE/experiment keys (see README for the list);
// consumed keys are erased from the map.
void apply_optimizer_keys(std::map<std::string, std::string>& kv, OptimizerConfig& cfg);
void apply_experiment_keys(std::map<std::string, std::string>& kv, ExperimentSpec& spec);

// Final evaluation of a run.
struct ExperimentResult {
  RunReport report;
  double l2_nm2 = 0;
  double pvb_nm2 = 0;
  int epe_count = 0;
  double total_seconds = 0;
  std::string status = "ok";
};

// Runs one experiment and writes loss_curve.csv, summary.csv, final_mask.pgm,
// final_mask_bin.pgm, final_source.pgm, resist_nominal.pgm,
// resist_nominal_bin.pgm and target.pgm into spec.output_dir.
ExperimentResult run_experiment(const ExperimentSpec& spec);

// Forward simulation only: images and metrics of the initialized parameters.
ExperimentResult simulate(const ExperimentSpec& spec);

struct GradcheckReport {
  double max_rel_err_mask = 0;
  double max_rel_err_source = 0;
  double hvp_symmetry_rel = 0;
  bool passed = false;
};

// Full-entry finite-difference audit of the analytic gradients on small
// fixed-seed instances (refuses n_mask > 64). `corrupt_hook` injects a
// deliberate gradient error (negative-control path).
GradcheckReport gradcheck(const ExperimentSpec& spec, bool corrupt_hook = false);

struct BenchmarkRow {
  std::string method;
  std::string pattern;
  double l2_nm2 = 0;
  double pvb_nm2 = 0;
  double epe_avg = 0;
  int iters = 0;
  double sec_per_iter = 0;
  double total_seconds = 0;
  std::string status = "ok";
};

// Runs every spec (failures recorded per row, the rest continue) and returns
// rows sorted by L2; also writes benchmark.csv under out_dir when non-empty.
// Runs execute concurrently up to `jobs` workers; each run owns its output
// directory and no state is shared across runs.
std::vector<BenchmarkRow> run_benchmark(const std::vector<ExperimentSpec>& specs,
                                        const std::string& out_dir, int jobs = 1);

// Per-method averages over the successful rows, sorted by average L2; written
// to benchmark_methods.csv by run_benchmark when out_dir is non-empty.
std::vector<BenchmarkRow> aggregate_by_method(const std::vector<BenchmarkRow>& rows);

// Forward-model timing: per-call seconds for the source-point model at the
// configured and serialized parallel widths against the kernel model, plus
// the predicted ceil(sigma/P)/ceil(Q/P) ratios.
struct ForwardTimingReport {
  int active_groups = 0;
  int q_kernels = 0;
  double abbe_s_pmax = 0;
  double abbe_s_p1 = 0;
  double hopkins_s = 0;
  double measured_ratio_pmax = 0;  // abbe_s_pmax / hopkins_s
  double measured_ratio_p1 = 0;    // abbe_s_p1 / hopkins_s
  double theory_ratio_pmax = 0;
  double theory_ratio_p1 = 0;
};

ForwardTimingReport forward_timing(const OpticalConfig& cfg, const TargetPattern& target,
                                   SourceTemplate source_template, int repeats = 3);
void write_forward_timing_csv(const std::string& path, const ForwardTimingReport& r);

// Bundled-suite helpers used by the CLI and the acceptance tests.
std::vector<ExperimentSpec> suite_specs(const OpticalConfig& base, const OptimizerConfig& opt,
                                        const std::vector<Method>& methods,
                                        const std::string& out_root);

}  // namespace smo
