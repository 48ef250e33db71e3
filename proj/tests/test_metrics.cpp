#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "smo/errors.hpp"
#include "smo/metrics.hpp"
#include "smo/pattern.hpp"

using namespace smo;

namespace {

OpticalConfig metric_config(int n_mask = 64, double pixel = 5.0) {
  OpticalConfig cfg;
  cfg.n_mask = n_mask;
  cfg.pixel_nm = pixel;
  cfg.n_source = 3;
  return cfg;
}

BinaryImage from_pattern(const TargetPattern& t) { return binarize_target(t); }

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("binarize") {
  SUBCASE("threshold is inclusive") {
    ResistImage z{RealGrid::Constant(4, 4, 0.5)};
    BinaryImage b = binarize(z, 0.5);
    CHECK((b.pixels == 1).all());
  }
  SUBCASE("binary input is reproduced") {
    RealGrid v(2, 2);
    v << 0, 1, 1, 0;
    BinaryImage b = binarize(ResistImage{v}, 0.5);
    CHECK(b.pixels(0, 0) == 0);
    CHECK(b.pixels(0, 1) == 1);
    CHECK(b.pixels(1, 0) == 1);
    CHECK(b.pixels(1, 1) == 0);
  }
  SUBCASE("random values match a naive loop") {
    RealGrid v = sigmoid(fixtures::random_grid(16, 16, 5));
    BinaryImage b = binarize(ResistImage{v}, 0.5);
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c) CHECK((b.pixels(r, c) != 0) == (v(r, c) >= 0.5));
  }
  SUBCASE("cut must be interior") {
    ResistImage z{RealGrid::Zero(2, 2)};
    CHECK_THROWS_AS(binarize(z, 0.0), ConfigError);
    CHECK_THROWS_AS(binarize(z, 1.0), ConfigError);
  }
}

TEST_CASE("area metrics") {
  OpticalConfig cfg = metric_config(16, 4.0);
  TargetPattern t;
  t.pixels = RealGrid::Zero(16, 16);
  t.pixels.block(4, 4, 6, 6) = 1.0;

  SUBCASE("identical images have zero error") {
    CHECK(metric_l2(from_pattern(t), t, cfg.pixel_nm) == 0.0);
  }
  SUBCASE("one differing pixel of a 1 nm grid is 1 nm^2") {
    TargetPattern t1;
    t1.pixels = RealGrid::Zero(8, 8);
    BinaryImage z = from_pattern(t1);
    z.pixels(3, 3) = 1;
    CHECK(metric_l2(z, t1, 1.0) == 1.0);
  }
  SUBCASE("ten differing pixels at 4 nm are 160 nm^2") {
    BinaryImage z = from_pattern(t);
    for (int i = 0; i < 10; ++i) z.pixels(15, i) = 1;
    CHECK(metric_l2(z, t, cfg.pixel_nm) == 160.0);
  }
  SUBCASE("l2 is symmetric and satisfies the counting triangle bound") {
    TargetPattern ta, tb, tc;
    ta.pixels = (fixtures::random_grid(12, 12, 7) > 0).cast<double>();
    tb.pixels = (fixtures::random_grid(12, 12, 8) > 0).cast<double>();
    tc.pixels = (fixtures::random_grid(12, 12, 9) > 0).cast<double>();
    auto as_img = [](const TargetPattern& p) { return binarize_target(p); };
    const double ab = metric_l2(as_img(ta), tb, 2.0);
    const double ba = metric_l2(as_img(tb), ta, 2.0);
    CHECK(ab == ba);
    const double ac = metric_l2(as_img(ta), tc, 2.0);
    const double bc = metric_l2(as_img(tb), tc, 2.0);
    CHECK(ac <= ab + bc);
  }
  SUBCASE("pvb of identical prints is zero; complement counts everything") {
    BinaryImage z = from_pattern(t);
    CHECK(metric_pvb(z, z, cfg.pixel_nm) == 0.0);
    BinaryImage inv = z;
    inv.pixels = (1 - z.pixels.cast<int>()).cast<std::uint8_t>();
    CHECK(metric_pvb(z, inv, cfg.pixel_nm) == 256 * 16.0);
  }
}

TEST_CASE("edge placement measurement") {
  OpticalConfig cfg = metric_config(64, 5.0);  // 320 nm tile
  EpeSpec spec;                                // 40 nm sampling, 15 nm threshold
  // 200 nm square: each edge takes floor(200/40) = 5 points, 20 in total.
  const std::vector<Rect> square = {{60, 60, 260, 260}};
  TargetPattern target = pattern_from_rects(square, cfg);
  REQUIRE(target.edges.size() == 4);

  auto printed = [&](long grow_nm) {
    std::vector<Rect> r = square;
    r[0].x1 -= grow_nm;
    r[0].y1 -= grow_nm;
    r[0].x2 += grow_nm;
    r[0].y2 += grow_nm;
    return from_pattern(pattern_from_rects(r, cfg));
  };

  SUBCASE("perfect print has zero violations") {
    EpeResult res = epe_stats(printed(0), target, spec, cfg.pixel_nm);
    CHECK(res.violations == 0);
    CHECK(res.sample_points == 20);
    CHECK(res.mean_abs_deviation_nm == 0.0);
  }
  SUBCASE("a uniform 20 nm shift violates every sampled point") {
    EpeResult res = epe_stats(printed(20), target, spec, cfg.pixel_nm);
    CHECK(res.sample_points == 20);
    CHECK(res.violations == 20);
    CHECK(res.mean_abs_deviation_nm == doctest::Approx(20.0));
  }
  SUBCASE("a 10 nm shift stays within the 15 nm threshold") {
    EpeResult res = epe_stats(printed(10), target, spec, cfg.pixel_nm);
    CHECK(res.violations == 0);
    CHECK(res.mean_abs_deviation_nm == doctest::Approx(10.0));
  }
  SUBCASE("a missing feature violates everywhere") {
    TargetPattern empty;
    empty.pixels = RealGrid::Zero(64, 64);
    BinaryImage nothing = binarize_target(empty);
    EpeResult res = epe_stats(nothing, target, spec, cfg.pixel_nm);
    CHECK(res.violations == 20);
  }
  SUBCASE("short edges get a midpoint sample") {
    // 30 nm contact: edges shorter than the 40 nm step, one point each.
    TargetPattern small = pattern_from_rects({{150, 150, 180, 180}}, cfg);
    EpeResult res = epe_stats(from_pattern(small), small, spec, cfg.pixel_nm);
    CHECK(res.sample_points == 4);
    CHECK(res.violations == 0);
  }
  SUBCASE("translation invariance") {
    const long shift = 25;  // 5 pixels
    std::vector<Rect> moved = square;
    moved[0].x1 += shift;
    moved[0].x2 += shift;
    moved[0].y1 += shift;
    moved[0].y2 += shift;
    TargetPattern target2 = pattern_from_rects(moved, cfg);

    // Same 20 nm dilation, both translated.
    std::vector<Rect> print2 = moved;
    print2[0].x1 -= 20;
    print2[0].y1 -= 20;
    print2[0].x2 += 20;
    print2[0].y2 += 20;
    EpeResult base = epe_stats(printed(20), target, spec, cfg.pixel_nm);
    EpeResult shifted = epe_stats(from_pattern(pattern_from_rects(print2, cfg)), target2, spec,
                                  cfg.pixel_nm);
    CHECK(base.violations == shifted.violations);
    CHECK(base.sample_points == shifted.sample_points);
    CHECK(base.mean_abs_deviation_nm == doctest::Approx(shifted.mean_abs_deviation_nm));
  }
  SUBCASE("empty target reports zero with a warning") {
    TargetPattern empty;
    empty.pixels = RealGrid::Zero(64, 64);
    EpeResult res = epe_stats(from_pattern(target), empty, spec, cfg.pixel_nm);
    CHECK(res.violations == 0);
    CHECK(res.sample_points == 0);
  }
}

TEST_SUITE_END();
