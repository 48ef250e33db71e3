#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "smo/errors.hpp"
#include "smo/loss.hpp"
#include "smo/pattern.hpp"

using namespace smo;

namespace {

OpticalConfig grad_config(int n_mask = 16, double pixel = 25.0) {
  OpticalConfig cfg;
  cfg.n_mask = n_mask;
  cfg.pixel_nm = pixel;
  cfg.n_source = 3;
  cfg.parallel_width = 2;
  return cfg;
}

struct Instance {
  OpticalConfig cfg;
  TargetPattern target;
  ParamField theta_j, theta_m;
};

Instance make_instance(int n_mask, double pixel, unsigned seed) {
  Instance inst;
  inst.cfg = grad_config(n_mask, pixel);
  const long tile = static_cast<long>(inst.cfg.tile_nm());
  inst.target = pattern_from_rects({{tile / 4, tile / 4, 5 * tile / 8, 9 * tile / 16},
                                    {tile / 2, tile / 2, 3 * tile / 4, 13 * tile / 16}},
                                   inst.cfg);
  inst.theta_m = init_mask_params(inst.target, inst.cfg);
  inst.theta_m.values += fixtures::random_grid(n_mask, n_mask, seed, 0.3);
  inst.theta_j = init_source_params(SourceTemplate::Annular, inst.cfg);
  inst.theta_j.values += fixtures::random_grid(3, 3, seed + 1, 0.3);
  return inst;
}

}  // namespace

TEST_SUITE_BEGIN("loss-grad");

TEST_CASE("squared-sum losses against naive loops") {
  OpticalConfig cfg = grad_config(8);
  TargetPattern t;
  t.pixels = RealGrid::Zero(8, 8);
  t.pixels.block(2, 2, 3, 3) = 1.0;

  SUBCASE("exact match is zero") {
    ResistImage z{t.pixels};
    CHECK(loss_l2(z, t) == 0.0);
  }
  SUBCASE("all-ones vs all-zeros counts the pixels") {
    TargetPattern zeros;
    zeros.pixels = RealGrid::Zero(8, 8);
    ResistImage ones{RealGrid::Constant(8, 8, 1.0)};
    CHECK(loss_l2(ones, zeros) == 64.0);
  }
  SUBCASE("random values match a scalar loop") {
    ResistImage z{sigmoid(fixtures::random_grid(8, 8, 3))};
    double expected = 0;
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c) {
        const double d = z.values(r, c) - t.pixels(r, c);
        expected += d * d;
      }
    CHECK(loss_l2(z, t) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("pvb composes from two l2 terms") {
    ResistImage zmin{sigmoid(fixtures::random_grid(8, 8, 4))};
    ResistImage zmax{sigmoid(fixtures::random_grid(8, 8, 5))};
    CHECK(loss_pvb(zmin, zmax, t) ==
          doctest::Approx(loss_l2(zmin, t) + loss_l2(zmax, t)).epsilon(1e-12));
    CHECK(loss_pvb(ResistImage{t.pixels}, ResistImage{t.pixels}, t) == 0.0);
  }
  SUBCASE("shape mismatch throws") {
    TargetPattern small;
    small.pixels = RealGrid::Zero(4, 4);
    ResistImage z{RealGrid::Zero(8, 8)};
    CHECK_THROWS_AS(loss_l2(z, small), ConfigError);
  }
}

TEST_CASE("combined loss respects the weights") {
  Instance inst = make_instance(16, 25.0, 60);

  SUBCASE("zero weights give zero total") {
    OpticalConfig c = inst.cfg;
    c.gamma = 0;
    c.eta = 0;
    CHECK(loss_smo(inst.theta_j, inst.theta_m, c, inst.target).total == 0.0);
  }
  SUBCASE("total equals the weighted sum of terms") {
    LossValue v = loss_smo(inst.theta_j, inst.theta_m, inst.cfg, inst.target);
    CHECK(v.total ==
          doctest::Approx(inst.cfg.gamma * v.l2_term + inst.cfg.eta * v.pvb_term).epsilon(1e-12));
    CHECK(v.l2_term >= 0);
    CHECK(v.pvb_term >= 0);
  }
  SUBCASE("default loss weights are wired through") {
    CHECK(inst.cfg.gamma == 1000.0);
    CHECK(inst.cfg.eta == 3000.0);
  }
}

TEST_CASE("analytic gradients match full central differences") {
  Instance inst = make_instance(16, 25.0, 71);
  GradResult res = grad_smo(inst.theta_j, inst.theta_m, inst.cfg, inst.target);

  const double h = 1e-4;
  RealGrid fd_mask = oracle::fd_gradient(
      [&](const RealGrid& x) {
        return loss_smo(inst.theta_j, ParamField{x, ParamKind::MaskParams}, inst.cfg, inst.target)
            .total;
      },
      inst.theta_m.values, h);
  RealGrid fd_source = oracle::fd_gradient(
      [&](const RealGrid& x) {
        return loss_smo(ParamField{x, ParamKind::SourceParams}, inst.theta_m, inst.cfg,
                        inst.target)
            .total;
      },
      inst.theta_j.values, h);

  CHECK(oracle::max_rel_to_scale(res.grad.wrt_mask, fd_mask) < 1e-4);
  CHECK(oracle::max_rel_to_scale(res.grad.wrt_source, fd_source) < 1e-4);

  SUBCASE("gradient views agree with the combined computation") {
    GradResult src = grad_smo(inst.theta_j, inst.theta_m, inst.cfg, inst.target,
                              GradView::SourceOnly);
    GradResult msk = grad_smo(inst.theta_j, inst.theta_m, inst.cfg, inst.target,
                              GradView::MaskOnly);
    CHECK((src.grad.wrt_source - res.grad.wrt_source).abs().maxCoeff() == 0.0);
    CHECK((msk.grad.wrt_mask - res.grad.wrt_mask).abs().maxCoeff() == 0.0);
  }
}

TEST_CASE("zero residual is a stationary point") {
  // Build a raw target equal to the actual resist output; every residual is
  // exactly zero, so both gradient views vanish identically.
  Instance inst = make_instance(16, 25.0, 81);
  OpticalConfig c = inst.cfg;
  c.dose_min = 1.0;
  c.dose_max = 1.0;
  ForwardWindow w = forward_process_window(inst.theta_j, inst.theta_m, c);
  GradResult res = grad_smo_raw(inst.theta_j, inst.theta_m, c, w.z.values);
  CHECK(res.loss.total == 0.0);
  CHECK((res.grad.wrt_mask == 0.0).all());
  CHECK((res.grad.wrt_source == 0.0).all());
}

TEST_CASE("far-field mask parameters see a vanishing share of the gradient") {
  // Empty-corner target: the ideal low-pass kernel has slowly decaying tails,
  // so corner gradients are small relative to the feature gradients rather
  // than strictly zero, and shrink further as the corner moves away.
  auto corner_ratio = [](int n_mask) {
    OpticalConfig cfg = grad_config(n_mask, 8.0);
    const long tile = static_cast<long>(cfg.tile_nm());
    const long half_feature = 64;  // fixed 128 nm square, centered
    TargetPattern target = pattern_from_rects({{tile / 2 - half_feature, tile / 2 - half_feature,
                                                tile / 2 + half_feature,
                                                tile / 2 + half_feature}},
                                              cfg);
    ParamField tm = init_mask_params(target, cfg);
    ParamField tj = init_source_params(SourceTemplate::Annular, cfg);
    GradResult res = grad_smo(tj, tm, cfg, target);
    const double peak = res.grad.wrt_mask.abs().maxCoeff();
    double corner = 0.0;
    for (int r : {0, n_mask - 1})
      for (int c : {0, n_mask - 1})
        corner = std::max(corner, std::abs(res.grad.wrt_mask(r, c)));
    REQUIRE(peak > 1e-3);
    return corner / peak;
  };
  const double near = corner_ratio(48);
  const double far = corner_ratio(96);
  CHECK(near < 3e-2);
  CHECK(far < near);  // locality strengthens with distance
}

TEST_CASE("loss is invariant under simultaneous 180-degree rotation") {
  Instance inst = make_instance(16, 25.0, 91);
  LossValue base = loss_smo(inst.theta_j, inst.theta_m, inst.cfg, inst.target);

  ParamField tj_rot{inst.theta_j.values.reverse(), ParamKind::SourceParams};
  ParamField tm_rot{inst.theta_m.values.reverse(), ParamKind::MaskParams};
  RealGrid target_rot = inst.target.pixels.reverse();
  LossValue rot = loss_smo_raw(tj_rot, tm_rot, inst.cfg, target_rot);
  CHECK(rot.total == doctest::Approx(base.total).epsilon(1e-12));
}

TEST_CASE("curvature products") {
  Instance inst = make_instance(16, 25.0, 101);
  // Smaller step than the optimizer default: these checks probe the
  // quadratic term itself, so truncation error has to stay below 1e-5.
  const double eps = 1e-3;

  SUBCASE("zero directions return zero") {
    RealGrid z3 = RealGrid::Zero(3, 3);
    CHECK((hvp_so_jj(inst.theta_j, inst.theta_m, z3, inst.cfg, inst.target, eps) == 0.0).all());
    RealGrid jm = jvp_so_mj(inst.theta_j, inst.theta_m, z3, inst.cfg, inst.target, eps);
    CHECK(jm.rows() == inst.cfg.n_mask);
    CHECK((jm == 0.0).all());
  }
  SUBCASE("hessian-vector product is symmetric") {
    RealGrid u = fixtures::random_grid(3, 3, 201);
    RealGrid v = fixtures::random_grid(3, 3, 202);
    RealGrid hu = hvp_so_jj(inst.theta_j, inst.theta_m, u, inst.cfg, inst.target, eps);
    RealGrid hv = hvp_so_jj(inst.theta_j, inst.theta_m, v, inst.cfg, inst.target, eps);
    const double uhv = (u * hv).sum();
    const double vhu = (v * hu).sum();
    CHECK(std::abs(uhv - vhu) / std::max({std::abs(uhv), std::abs(vhu), 1e-12}) < 1e-5);
  }
  SUBCASE("bilinearity within finite-difference tolerance") {
    RealGrid u = fixtures::random_grid(3, 3, 203);
    RealGrid v = fixtures::random_grid(3, 3, 204);
    RealGrid lhs = hvp_so_jj(inst.theta_j, inst.theta_m, (2.0 * u + 0.5 * v).eval(), inst.cfg,
                             inst.target, eps);
    RealGrid rhs = 2.0 * hvp_so_jj(inst.theta_j, inst.theta_m, u, inst.cfg, inst.target, eps) +
                   0.5 * hvp_so_jj(inst.theta_j, inst.theta_m, v, inst.cfg, inst.target, eps);
    CHECK(oracle::max_rel_to_scale(lhs, rhs) < 1e-4);
  }
  SUBCASE("quadratic problem: directional second derivative is exact") {
    // 1/2 x^T A x through the generic finite-difference path.
    auto quad = fixtures::QuadraticBilevelProblem::random_spd(6, 4, 777);
    RealGrid x = fixtures::random_grid(6, 1, 205);
    RealGrid v = fixtures::random_grid(6, 1, 206);
    RealGrid outer = RealGrid::Zero(4, 1);
    RealGrid hv = quad.BilevelProblem::hvp_lower_inner(x, outer, v, eps);
    RealGrid expected = fixtures::to_grid(quad.A() * fixtures::to_vec(v));
    CHECK(oracle::max_rel_to_scale(hv, expected) < 1e-8);
  }
  SUBCASE("bilinear problem: mixed product is exact") {
    Eigen::MatrixXd b = Eigen::MatrixXd::Random(5, 7);
    fixtures::BilinearProblem prob(b);
    RealGrid theta = fixtures::random_grid(5, 1, 207);
    RealGrid phi = fixtures::random_grid(7, 1, 208);
    RealGrid w = fixtures::random_grid(5, 1, 209);
    RealGrid got = prob.jvp_lower_mixed(theta, phi, w, eps);
    RealGrid expected = fixtures::to_grid(b.transpose() * fixtures::to_vec(w));
    CHECK(oracle::max_rel_to_scale(got, expected) < 1e-8);
  }
  SUBCASE("mixed product matches a dense finite-difference assembly") {
    Instance small = make_instance(8, 50.0, 102);
    RealGrid w = fixtures::random_grid(3, 3, 210);
    RealGrid got = jvp_so_mj(small.theta_j, small.theta_m, w, small.cfg, small.target, eps);

    // Dense row assembly: perturb each source entry, difference the mask grad.
    RealGrid expected = RealGrid::Zero(small.cfg.n_mask, small.cfg.n_mask);
    const double h = 1e-4;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        ParamField plus = small.theta_j, minus = small.theta_j;
        plus.values(r, c) += h;
        minus.values(r, c) -= h;
        RealGrid gp = grad_smo(plus, small.theta_m, small.cfg, small.target,
                               GradView::MaskOnly).grad.wrt_mask;
        RealGrid gm = grad_smo(minus, small.theta_m, small.cfg, small.target,
                               GradView::MaskOnly).grad.wrt_mask;
        expected += w(r, c) * (gp - gm) / (2 * h);
      }
    CHECK(oracle::max_rel_to_scale(got, expected) < 1e-3);
  }
}



TEST_CASE("gradients are identical with and without the field cache") {
  Instance inst = make_instance(16, 25.0, 111);
  GradResult cached = grad_smo(inst.theta_j, inst.theta_m, inst.cfg, inst.target);

  const double keep = smo::detail::field_cache_budget_bytes();
  smo::detail::field_cache_budget_bytes() = 0;  // force the recompute path
  GradResult recomputed = grad_smo(inst.theta_j, inst.theta_m, inst.cfg, inst.target);
  smo::detail::field_cache_budget_bytes() = keep;

  CHECK((cached.grad.wrt_mask == recomputed.grad.wrt_mask).all());
  CHECK((cached.grad.wrt_source == recomputed.grad.wrt_source).all());
  CHECK(cached.loss.total == recomputed.loss.total);
}

TEST_SUITE_END();
