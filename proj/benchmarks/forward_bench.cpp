// Microbenchmarks for the forward models and the gradient evaluation at the
// desk-scale configuration (128x128 tile, 4 nm pixels, 35x35 source).

#include <benchmark/benchmark.h>

#include "smo/experiment.hpp"
#include "smo/log.hpp"

using namespace smo;

namespace {

struct DeskSetup {
  OpticalConfig cfg;
  TargetPattern target;
  ParamField theta_j, theta_m;
  SourceGrid source;
  MaskGrid mask;
  Pupil pupil;

  DeskSetup() {
    smo::log::set_verbosity(0);
    target = suite_target("dense_lines", cfg);
    theta_j = init_source_params(SourceTemplate::Annular, cfg);
    theta_m = init_mask_params(target, cfg);
    source = activate_source(theta_j, cfg);
    mask = activate_mask(theta_m, cfg);
    pupil = build_pupil(cfg);
  }
};

DeskSetup& setup() {
  static DeskSetup s;
  return s;
}

void BM_AbbeForward(benchmark::State& state) {
  DeskSetup& s = setup();
  OpticalConfig cfg = s.cfg;
  cfg.parallel_width = static_cast<int>(state.range(0));
  for (auto _ : state) {
    AerialImage img = abbe_aerial(s.source, s.mask, s.pupil, cfg);
    benchmark::DoNotOptimize(img.intensity.data());
  }
}
BENCHMARK(BM_AbbeForward)->Arg(1)->Arg(256);

void BM_HopkinsForward(benchmark::State& state) {
  DeskSetup& s = setup();
  static TccMatrix tcc = build_tcc(s.source, s.pupil, s.cfg);
  static SocsKernels kernels = socs_decompose(tcc, s.cfg.q_kernels, s.cfg);
  for (auto _ : state) {
    AerialImage img = hopkins_aerial(kernels, s.mask, s.cfg);
    benchmark::DoNotOptimize(img.intensity.data());
  }
}
BENCHMARK(BM_HopkinsForward);

void BM_TccBuild(benchmark::State& state) {
  DeskSetup& s = setup();
  for (auto _ : state) {
    TccMatrix tcc = build_tcc(s.source, s.pupil, s.cfg);
    benchmark::DoNotOptimize(tcc.entries.data());
  }
}
BENCHMARK(BM_TccBuild);

void BM_SocsDecompose(benchmark::State& state) {
  DeskSetup& s = setup();
  static TccMatrix tcc = build_tcc(s.source, s.pupil, s.cfg);
  for (auto _ : state) {
    SocsKernels k = socs_decompose(tcc, s.cfg.q_kernels, s.cfg);
    benchmark::DoNotOptimize(k.eigenvalues.data());
  }
}
BENCHMARK(BM_SocsDecompose);

void BM_GradSmo(benchmark::State& state) {
  DeskSetup& s = setup();
  const GradView view = static_cast<GradView>(state.range(0));
  for (auto _ : state) {
    GradResult res = grad_smo(s.theta_j, s.theta_m, s.cfg, s.target, view);
    benchmark::DoNotOptimize(res.loss.total);
  }
}
BENCHMARK(BM_GradSmo)
    ->Arg(static_cast<int>(GradView::Both))
    ->Arg(static_cast<int>(GradView::SourceOnly))
    ->Arg(static_cast<int>(GradView::MaskOnly));

void BM_LossForward(benchmark::State& state) {
  DeskSetup& s = setup();
  for (auto _ : state) {
    LossValue v = loss_smo(s.theta_j, s.theta_m, s.cfg, s.target);
    benchmark::DoNotOptimize(v.total);
  }
}
BENCHMARK(BM_LossForward);

}  // namespace

BENCHMARK_MAIN();
