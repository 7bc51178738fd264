#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "phasenet/error.hpp"
#include "phasenet/grid.hpp"

using namespace phasenet;

namespace {

ScalarField3D random_field(GridDims d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ScalarField3D f(d);
  for (auto& v : f.data()) v = u(rng);
  return f;
}

double max_rel_diff(const ScalarField3D& a, const ScalarField3D& b) {
  double scale = 0.0, diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(a[i]));
    diff = std::max(diff, std::abs(a[i] - b[i]));
  }
  return scale > 0.0 ? diff / scale : diff;
}

}  // namespace

TEST_CASE("fft3 of zeros and of a delta") {
  ScalarField3D f(GridDims::cube(4));
  const auto zeros = fft3(f);
  for (const auto& v : zeros.data()) CHECK(v == std::complex<double>{});
  f(0, 0, 0) = 1.0;
  const auto flat = fft3(f);
  for (const auto& v : flat.data()) {
    CHECK(v.real() == doctest::Approx(1.0));
    CHECK(std::abs(v.imag()) < 1e-15);
  }
}

TEST_CASE("fft3 round trip on an anisotropic grid") {
  const auto f = random_field({8, 6, 5}, 1);
  const auto back = real_part(ifft3(fft3(f)));
  CHECK(max_rel_diff(f, back) <= 1e-10);
}

TEST_CASE("fft3 matches a direct DFT") {
  const GridDims d{3, 4, 5};
  const auto f = random_field(d, 2);
  const auto F = fft3(f);
  const double tau = 2.0 * M_PI;
  double worst = 0.0;
  for (int w = 0; w < d.nz; ++w)
    for (int v = 0; v < d.ny; ++v)
      for (int u = 0; u < d.nx; ++u) {
        std::complex<double> acc{};
        for (int k = 0; k < d.nz; ++k)
          for (int j = 0; j < d.ny; ++j)
            for (int i = 0; i < d.nx; ++i) {
              const double phase = -tau * (double(u * i) / d.nx + double(v * j) / d.ny + double(w * k) / d.nz);
              acc += f(i, j, k) * std::polar(1.0, phase);
            }
        worst = std::max(worst, std::abs(acc - F(u, v, w)));
      }
  CHECK(worst < 1e-12);
}

TEST_CASE("patterson of one and two points") {
  ScalarField3D one(GridDims::cube(8));
  one(5, 2, 7) = 1.0;
  const auto p1 = patterson(one);
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i] == doctest::Approx(i == 0 ? 1.0 : 0.0).epsilon(1e-12));

  ScalarField3D two(GridDims::cube(8));
  two(1, 1, 1) = 1.0;
  two(3, 2, 1) = 1.0;
  const auto p2 = patterson(two);
  for (int k = 0; k < 8; ++k)
    for (int j = 0; j < 8; ++j)
      for (int i = 0; i < 8; ++i) {
        double expect = 0.0;
        if (i == 0 && j == 0 && k == 0) expect = 2.0;
        if (i == 2 && j == 1 && k == 0) expect = 1.0;
        if (i == 6 && j == 7 && k == 0) expect = 1.0;
        CHECK(std::abs(p2(i, j, k) - expect) < 1e-12);
      }
}

TEST_CASE("patterson invariants on random densities") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto f = random_field(GridDims::cube(8), 10 + s);
    const auto p = patterson(f);
    CHECK(p[0] == doctest::Approx(sum_squares(f)).epsilon(1e-10));
    CHECK(max_rel_diff(p, centro_invert_field(p)) <= 1e-10);
    CHECK(max_rel_diff(p, patterson(circular_shift(f, {3, -2, 9}))) <= 1e-9);
    CHECK(max_rel_diff(p, patterson(centro_invert_field(f))) <= 1e-9);
    CHECK(max_value(p) == p[0]);
  }
}

TEST_CASE("circular_shift and centro_invert_field") {
  ScalarField3D d(GridDims::cube(4));
  d(0, 0, 0) = 1.0;
  const auto s = circular_shift(d, {1, 2, 3});
  CHECK(s(1, 2, 3) == 1.0);
  CHECK(sum_squares(s) == 1.0);

  const auto f = random_field({5, 4, 3}, 3);
  CHECK(circular_shift(f, {5, 4, 3}) == f);
  CHECK(circular_shift(f, {0, 0, 0}) == f);
  CHECK(circular_shift(circular_shift(f, {1, 3, 2}), {2, 3, 2}) == circular_shift(f, {3, 6, 4}));

  ScalarField3D e(GridDims::cube(4));
  e(1, 0, 0) = 1.0;
  CHECK(centro_invert_field(e)(3, 0, 0) == 1.0);
  CHECK(centro_invert_field(centro_invert_field(f)) == f);
}

TEST_CASE("voxel count validation") {
  CHECK_THROWS_AS((GridDims{0, 4, 4}.voxels()), ShapeError);
  CHECK_THROWS_AS((GridDims{1 << 30, 1 << 30, 1 << 30}.voxels()), ShapeError);
}

TEST_CASE("PGRD round trip in both dtypes") {
  const auto f = random_field({3, 4, 5}, 4);
  std::stringstream s64;
  write_pgrd(s64, f, GridDtype::f64);
  CHECK(read_pgrd(s64) == f);

  std::stringstream s32;
  write_pgrd(s32, f, GridDtype::f32);
  const std::string bytes = s32.str();
  CHECK(bytes.substr(0, 4) == "PGRD");
  CHECK(bytes.size() == 4 + 4 + 12 + 1 + 4 * f.size());
  const auto g = read_pgrd(s32);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(g[i] == static_cast<double>(static_cast<float>(f[i])));
}

TEST_CASE("PGRD readers reject bad headers") {
  std::stringstream good;
  write_pgrd(good, ScalarField3D(GridDims::cube(2)));
  const std::string bytes = good.str();

  auto reject = [](std::string b) {
    std::stringstream s(b);
    CHECK_THROWS_AS(read_pgrd(s), IoError);
  };
  std::string bad = bytes;
  bad[0] = 'X';
  reject(bad);
  bad = bytes;
  bad[4] = 2;  // version
  reject(bad);
  bad = bytes;
  bad[20] = 7;  // dtype
  reject(bad);
  reject(bytes.substr(0, bytes.size() - 3));
}
