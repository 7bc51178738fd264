#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace phasenet {

struct GridDims {
  int nx = 1;
  int ny = 1;
  int nz = 1;

  static GridDims cube(int n) { return {n, n, n}; }

  // Throws ShapeError if any axis is < 1 or the voxel count overflows.
  std::size_t voxels() const;
  bool valid() const noexcept { return nx >= 1 && ny >= 1 && nz >= 1; }

  friend bool operator==(const GridDims&, const GridDims&) = default;
};

// Continuous position in pixel units. Voxel (i,j,k) covers [i,i+1)x[j,j+1)x[k,k+1),
// so its center sits at (i+0.5, j+0.5, k+0.5).
struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }
  friend Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
  friend Vec3 operator*(Vec3 a, double s) { return a *= s; }
  friend Vec3 operator*(double s, Vec3 a) { return a *= s; }
  friend bool operator==(const Vec3&, const Vec3&) = default;

  double norm2() const { return x * x + y * y + z * z; }
  double norm() const;
  bool finite() const;
};

double distance(const Vec3& a, const Vec3& b);

// Center of an n^3 box under the voxel convention above.
inline Vec3 box_center(int outer_dim) {
  const double c = outer_dim / 2.0;
  return {c, c, c};
}

template <typename T>
class Field3D {
 public:
  Field3D() = default;
  explicit Field3D(GridDims dims) : dims_(dims), values_(dims.voxels(), T{}) {}
  Field3D(GridDims dims, std::vector<T> values);

  const GridDims& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return values_.size(); }

  // x varies fastest, then y, then z.
  std::size_t index(int i, int j, int k) const noexcept {
    return (static_cast<std::size_t>(k) * dims_.ny + j) * dims_.nx + i;
  }
  std::array<int, 3> coords(std::size_t idx) const noexcept {
    const int i = static_cast<int>(idx % dims_.nx);
    const std::size_t rest = idx / dims_.nx;
    return {i, static_cast<int>(rest % dims_.ny), static_cast<int>(rest / dims_.ny)};
  }

  T& operator()(int i, int j, int k) noexcept { return values_[index(i, j, k)]; }
  const T& operator()(int i, int j, int k) const noexcept { return values_[index(i, j, k)]; }
  T& operator[](std::size_t idx) noexcept { return values_[idx]; }
  const T& operator[](std::size_t idx) const noexcept { return values_[idx]; }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  std::vector<T>& data() noexcept { return values_; }
  const std::vector<T>& data() const noexcept { return values_; }

  friend bool operator==(const Field3D&, const Field3D&) = default;

 private:
  GridDims dims_{};
  std::vector<T> values_;
};

using ScalarField3D = Field3D<double>;
using ComplexField3D = Field3D<std::complex<double>>;

extern template class Field3D<double>;
extern template class Field3D<std::complex<double>>;

// Unnormalized forward DFT.
ComplexField3D fft3(const ScalarField3D& field);
// Inverse DFT carrying the 1/(nx*ny*nz) factor, so ifft3(fft3(f)) == f.
ComplexField3D ifft3(const ComplexField3D& spectrum);
ScalarField3D real_part(const ComplexField3D& field);

// Circular autocorrelation: Re ifft3(|fft3(rho)|^2). Throws NumericError if the
// discarded imaginary residual exceeds 1e-9 of the real peak.
ScalarField3D patterson(const ScalarField3D& density);

// Toroidal shift: value at v moves to (v + by) mod dims.
ScalarField3D circular_shift(const ScalarField3D& field, std::array<int, 3> by);

// Value at v moves to (-v) mod dims.
ScalarField3D centro_invert_field(const ScalarField3D& field);

double max_value(const ScalarField3D& field);
double sum_squares(const ScalarField3D& field);

// ---------------------------------------------------------------------------
// PGRD binary grid format:
//   "PGRD" | u32 version=1 | u32 nx | u32 ny | u32 nz | u8 dtype | values
// All integers little-endian; dtype 0 = float32, 1 = float64; values x-fastest.

enum class GridDtype : std::uint8_t { f32 = 0, f64 = 1 };

void write_pgrd(std::ostream& out, const ScalarField3D& field, GridDtype dtype = GridDtype::f64);
void write_pgrd(const std::filesystem::path& path, const ScalarField3D& field,
                GridDtype dtype = GridDtype::f64);

struct PgrdHeader {
  std::uint32_t version = 0;
  GridDims dims{};
  GridDtype dtype = GridDtype::f64;
};

PgrdHeader read_pgrd_header(std::istream& in);
ScalarField3D read_pgrd(std::istream& in);
ScalarField3D read_pgrd(const std::filesystem::path& path);

}  // namespace phasenet
