#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "phasenet/datagen.hpp"
#include "phasenet/error.hpp"
#include "phasenet/peaks.hpp"

using namespace phasenet;

TEST_CASE("single rasterized atoms are recovered") {
  const GenConfig cfg = GenConfig::paper();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(10.0, 30.0);
  double sum = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Vec3 truth{u(rng), u(rng), u(rng)};
    const auto peaks = find_peaks(rasterize({truth}, cfg), PeakConfig{});
    REQUIRE(peaks.size() == 1);
    sum += distance(peaks[0].pos, truth);
  }
  CHECK(sum / 100.0 <= 0.3);
}

TEST_CASE("two separated atoms give two peaks") {
  const GenConfig cfg = GenConfig::paper();
  const AtomSet atoms{{15.3, 20.1, 19.7}, {25.3, 20.1, 19.7}};
  const auto peaks = find_peaks(rasterize(atoms, cfg), PeakConfig{});
  REQUIRE(peaks.size() == 2);
  for (const auto& a : atoms) {
    const double d = std::min(distance(peaks[0].pos, a), distance(peaks[1].pos, a));
    CHECK(d < 0.3);
  }
  CHECK(peaks[0].strength >= peaks[1].strength);
}

TEST_CASE("a constant map is one plateau") {
  ScalarField3D f(GridDims::cube(6));
  for (auto& v : f.data()) v = 0.4;
  const auto peaks = find_peaks(f, PeakConfig{});
  REQUIRE(peaks.size() == 1);
  // Plateau represented by voxel (0,0,0): its clipped 3x3x3 neighborhood has centers at 0.5 and 1.5.
  CHECK(peaks[0].pos == Vec3{1.0, 1.0, 1.0});
  CHECK(peaks[0].strength == doctest::Approx(8 * 0.4));
}

TEST_CASE("empty or negative maps are rejected") {
  ScalarField3D f(GridDims::cube(4));
  CHECK_THROWS_AS(find_peaks(f, PeakConfig{}), NumericError);
  for (auto& v : f.data()) v = -0.2;
  CHECK_THROWS_AS(find_peaks(f, PeakConfig{}), NumericError);
  CHECK_THROWS_AS(find_peaks(f, PeakConfig{1.5, 4}), ConfigError);
}

TEST_CASE("negative values are clipped before the centroid") {
  ScalarField3D f(GridDims::cube(5));
  f(2, 2, 2) = 1.0;
  f(1, 2, 2) = -5.0;
  f(3, 2, 2) = 0.5;
  const auto peaks = find_peaks(f, PeakConfig{});
  REQUIRE(peaks.size() == 1);
  CHECK(peaks[0].pos.x == doctest::Approx((2.5 * 1.0 + 3.5 * 0.5) / 1.5));
  CHECK(peaks[0].strength == doctest::Approx(1.5));
}

TEST_CASE("raising the threshold never adds peaks") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ScalarField3D f(GridDims::cube(12));
  for (auto& v : f.data()) v = u(rng);
  PeakConfig cfg;
  cfg.max_peaks = 100000;
  std::size_t prev = SIZE_MAX;
  for (double t = 0.05; t < 1.0; t += 0.05) {
    cfg.threshold_fraction = t;
    const auto n = find_peaks(f, cfg).size();
    CHECK(n <= prev);
    prev = n;
  }
  cfg.threshold_fraction = 0.05;
  cfg.max_peaks = 3;
  const auto capped = find_peaks(f, cfg);
  CHECK(capped.size() == 3);
  CHECK(capped[0].strength >= capped[1].strength);
  CHECK(capped[1].strength >= capped[2].strength);
}

TEST_CASE("integer shifts move interior peaks exactly") {
  const GenConfig cfg = GenConfig::paper();
  const TrainingExample ex = make_example(cfg, 5);
  const auto base = find_peaks(ex.target, PeakConfig{});
  const std::array<int, 3> s{3, -2, 1};
  const auto moved = find_peaks(circular_shift(ex.target, s), PeakConfig{});
  REQUIRE(moved.size() == base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    const Vec3 expect = base[i].pos + Vec3{double(s[0]), double(s[1]), double(s[2])};
    CHECK(distance(moved[i].pos, expect) < 1e-9);
    CHECK(moved[i].strength == doctest::Approx(base[i].strength));
  }
}

TEST_CASE("target maps yield most of their atoms") {
  const GenConfig cfg = GenConfig::paper();
  // Clashes between an atom and a mate merge peaks, so single cases can dip below 15.
  std::size_t total = 0;
  for (std::uint64_t s = 0; s < 40; ++s) {
    const auto n = find_peaks(make_example(cfg, s).target, PeakConfig{}).size();
    CHECK(n >= 12);
    CHECK(n <= 20);
    total += n;
  }
  CHECK(total >= 15 * 40);
}

TEST_CASE("peaks JSON round trip") {
  const std::vector<Peak> peaks{{{1.25, 2.5, 3.75}, 0.5}, {{4, 5, 6}, 0.25}};
  const auto path = std::filesystem::temp_directory_path() / "phasenet_test_peaks.json";
  write_peaks_json(path, peaks);
  const auto back = read_peaks_json(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].pos == peaks[0].pos);
  CHECK(back[1].strength == 0.25);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_peaks_json(path), IoError);
}
