#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "smo/errors.hpp"
#include "smo/pattern.hpp"
#include "smo/pgm.hpp"

using namespace smo;
namespace fs = std::filesystem;

namespace {

OpticalConfig tile_config(int n_mask = 128, double pixel = 4.0) {
  OpticalConfig cfg;
  cfg.n_mask = n_mask;
  cfg.pixel_nm = pixel;
  cfg.n_source = 3;
  return cfg;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("smo_test_" + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_SUITE_BEGIN("pattern");

TEST_CASE("rect list parsing") {
  SUBCASE("well-formed lines with comments") {
    std::istringstream in("# header\nRECT 0 0 100 100\n\nRECT 8 16 24 32 # inline\n");
    auto rects = parse_rect_list(in);
    REQUIRE(rects.size() == 2);
    CHECK(rects[1].y2 == 32);
  }
  SUBCASE("malformed line reports its number") {
    std::istringstream in("RECT 0 0 100 100\nBOX 1 2 3 4\n");
    try {
      parse_rect_list(in);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("missing coordinates and degenerate rectangles are rejected") {
    std::istringstream a("RECT 1 2 3\n");
    CHECK_THROWS_AS(parse_rect_list(a), ParseError);
    std::istringstream b("RECT 10 10 10 20\n");
    CHECK_THROWS_AS(parse_rect_list(b), ParseError);
    std::istringstream c("RECT 0 0 10 10 junk\n");
    CHECK_THROWS_AS(parse_rect_list(c), ParseError);
  }
}

TEST_CASE("rasterization and edge extraction") {
  OpticalConfig cfg = tile_config();

  SUBCASE("empty list gives an empty target") {
    TargetPattern t = pattern_from_rects({}, cfg);
    CHECK((t.pixels == 0.0).all());
    CHECK(t.edges.empty());
  }
  SUBCASE("a 100x100 nm block fills 25x25 pixels with four 100 nm edges") {
    TargetPattern t = pattern_from_rects({{100, 100, 200, 200}}, cfg);
    CHECK(static_cast<int>((t.pixels == 1.0).count()) == 25 * 25);
    CHECK(t.pixels(25, 25) == 1.0);
    CHECK(t.pixels(49, 49) == 1.0);
    CHECK(t.pixels(24, 25) == 0.0);
    CHECK(t.pixels(50, 25) == 0.0);
    REQUIRE(t.edges.size() == 4);
    for (const auto& e : t.edges) CHECK(e.length() == doctest::Approx(100.0));
  }
  SUBCASE("overlapping rectangles union by inclusion-exclusion") {
    const std::vector<Rect> rects = {{100, 100, 200, 200}, {160, 160, 260, 260}};
    TargetPattern t = pattern_from_rects(rects, cfg);
    // Brute-force pixel fill as the oracle.
    int expected = 0;
    for (int r = 0; r < cfg.n_mask; ++r)
      for (int c = 0; c < cfg.n_mask; ++c) {
        const double x = (c + 0.5) * cfg.pixel_nm;
        const double y = (r + 0.5) * cfg.pixel_nm;
        bool in = false;
        for (const Rect& rc : rects)
          in = in || (x >= rc.x1 && x < rc.x2 && y >= rc.y1 && y < rc.y2);
        expected += in ? 1 : 0;
      }
    CHECK(static_cast<int>((t.pixels == 1.0).count()) == expected);
    // 25^2 + 25^2 - 10^2 by inclusion-exclusion at 4 nm pixels.
    CHECK(expected == 25 * 25 + 25 * 25 - 10 * 10);
  }
  SUBCASE("rectangles outside the tile are rejected") {
    CHECK_THROWS_AS(pattern_from_rects({{-4, 0, 100, 100}}, cfg), ValidationError);
    CHECK_THROWS_AS(pattern_from_rects({{0, 0, 100, 513}}, cfg), ValidationError);
  }
}

TEST_CASE("graymap round trips") {
  OpticalConfig cfg = tile_config(64, 4.0);
  TempDir dir;

  SUBCASE("binary write/read is the identity") {
    RealGrid bits = (fixtures::random_grid(64, 64, 17) > 0.2).cast<double>();
    write_pgm_binary(dir.file("bits.pgm"), bits);
    PgmImage img = read_pgm(dir.file("bits.pgm"));
    CHECK(img.maxval == 255);
    CHECK(((img.values >= 0.5).cast<double>() - bits).abs().maxCoeff() == 0.0);
  }
  SUBCASE("rect ingestion equals raster ingestion of the equivalent graymap") {
    TargetPattern direct = pattern_from_rects({{32, 32, 128, 96}, {96, 96, 192, 160}}, cfg);
    write_pgm_binary(dir.file("target.pgm"), direct.pixels);
    TargetPattern via_pgm = ingest_pattern(dir.file("target.pgm"), cfg);
    CHECK((via_pgm.pixels - direct.pixels).abs().maxCoeff() == 0.0);
    CHECK(via_pgm.edges.size() == direct.edges.size());
  }
  SUBCASE("grayscale emission re-ingests to the image it depicts") {
    RealGrid gray = sigmoid(fixtures::random_grid(64, 64, 18, 2.0));
    write_pgm(dir.file("gray.pgm"), gray);
    PgmImage img = read_pgm(dir.file("gray.pgm"));
    // The depicted binarization is that of the 8-bit quantized field.
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) {
        const bool depicted = std::lround(gray(r, c) * 255.0) >= 128;
        CHECK((img.values(r, c) >= 0.5) == depicted);
      }
  }
  SUBCASE("ascii graymaps parse too") {
    std::ofstream f(dir.file("ascii.pgm"));
    f << "P2\n# comment\n4 2\n255\n0 255 0 255\n255 0 255 0\n";
    f.close();
    PgmImage img = read_pgm(dir.file("ascii.pgm"));
    CHECK(img.width == 4);
    CHECK(img.height == 2);
    CHECK(img.values(1, 1) == 1.0);  // top row is stored last (lower-left origin)
    CHECK(img.values(0, 0) == 1.0);
  }
  SUBCASE("integer resampling only") {
    RealGrid bits = (fixtures::random_grid(32, 32, 19) > 0).cast<double>();
    write_pgm_binary(dir.file("half.pgm"), bits);
    TargetPattern up = ingest_pattern(dir.file("half.pgm"), cfg);  // 32 -> 64 upsample
    CHECK(up.pixels(0, 0) == bits(0, 0));
    CHECK(up.pixels(63, 63) == bits(31, 31));

    OpticalConfig odd = tile_config(48, 4.0);
    CHECK_THROWS_AS(ingest_pattern(dir.file("half.pgm"), odd), ValidationError);
  }
}

TEST_CASE("bundled suite") {
  OpticalConfig cfg = tile_config();
  CHECK(suite_names().size() == 6);
  for (const std::string& name : suite_names()) {
    TargetPattern t = suite_target(name, cfg);
    CAPTURE(name);
    CHECK((t.pixels == 1.0).count() > 0);
    CHECK_FALSE(t.edges.empty());
    // Deterministic regeneration.
    TargetPattern again = suite_target(name, cfg);
    CHECK((t.pixels - again.pixels).abs().maxCoeff() == 0.0);
  }
  CHECK_THROWS_AS(suite_target("nonsense", cfg), ValidationError);
  // Ingestion through the suite: prefix resolves.
  TargetPattern t = ingest_pattern("suite:l_shape", cfg);
  CHECK((t.pixels == 1.0).count() > 0);
}

TEST_SUITE_END();
