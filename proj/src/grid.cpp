#include "phasenet/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "binary_io.hpp"
#include "fft_backend.hpp"
#include "phasenet/error.hpp"

namespace phasenet {

std::size_t GridDims::voxels() const {
  if (!valid()) {
    std::ostringstream msg;
    msg << "grid dims must be >= 1 on every axis, got " << nx << "x" << ny << "x" << nz;
    throw ShapeError(msg.str());
  }
  constexpr std::size_t limit = std::numeric_limits<std::size_t>::max();
  const auto x = static_cast<std::size_t>(nx);
  const auto y = static_cast<std::size_t>(ny);
  const auto z = static_cast<std::size_t>(nz);
  if (x > limit / y || x * y > limit / z) throw ShapeError("grid voxel count overflows size_t");
  return x * y * z;
}

double Vec3::norm() const { return std::sqrt(norm2()); }

bool Vec3::finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }

double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

template <typename T>
Field3D<T>::Field3D(GridDims dims, std::vector<T> values)
    : dims_(dims), values_(std::move(values)) {
  if (values_.size() != dims_.voxels()) throw ShapeError("field value count does not match dims");
}

template class Field3D<double>;
template class Field3D<std::complex<double>>;

ComplexField3D fft3(const ScalarField3D& field) {
  ComplexField3D out(field.dims());
  auto& dst = out.data();
  std::transform(field.data().begin(), field.data().end(), dst.begin(),
                 [](double v) { return std::complex<double>(v, 0.0); });
  detail::dft_c2c(field.dims(), dst.data(), dst.data(), /*inverse=*/false);
  return out;
}

ComplexField3D ifft3(const ComplexField3D& spectrum) {
  ComplexField3D out(spectrum.dims());
  detail::dft_c2c(spectrum.dims(), spectrum.data().data(), out.data().data(), /*inverse=*/true);
  const double scale = 1.0 / static_cast<double>(spectrum.size());
  for (auto& v : out.data()) v *= scale;
  return out;
}

ScalarField3D real_part(const ComplexField3D& field) {
  ScalarField3D out(field.dims());
  for (std::size_t i = 0; i < field.size(); ++i) out[i] = field[i].real();
  return out;
}

ScalarField3D patterson(const ScalarField3D& density) {
  ComplexField3D spectrum = fft3(density);
  for (auto& f : spectrum.data()) f = std::complex<double>(std::norm(f), 0.0);
  const ComplexField3D p = ifft3(spectrum);

  double max_real = 0.0;
  double max_imag = 0.0;
  for (const auto& v : p.data()) {
    max_real = std::max(max_real, std::abs(v.real()));
    max_imag = std::max(max_imag, std::abs(v.imag()));
  }
  if (max_imag > 1e-9 * max_real && max_imag > 1e-300)
    throw NumericError("Patterson imaginary residual too large; FFT backend is inconsistent");
  return real_part(p);
}

ScalarField3D circular_shift(const ScalarField3D& field, std::array<int, 3> by) {
  const GridDims& d = field.dims();
  auto wrap = [](int v, int n) { return ((v % n) + n) % n; };
  const int sx = wrap(by[0], d.nx);
  const int sy = wrap(by[1], d.ny);
  const int sz = wrap(by[2], d.nz);
  ScalarField3D out(d);
  for (int k = 0; k < d.nz; ++k) {
    const int tk = (k + sz) % d.nz;
    for (int j = 0; j < d.ny; ++j) {
      const int tj = (j + sy) % d.ny;
      for (int i = 0; i < d.nx; ++i) out((i + sx) % d.nx, tj, tk) = field(i, j, k);
    }
  }
  return out;
}

ScalarField3D centro_invert_field(const ScalarField3D& field) {
  const GridDims& d = field.dims();
  ScalarField3D out(d);
  for (int k = 0; k < d.nz; ++k) {
    const int tk = (d.nz - k) % d.nz;
    for (int j = 0; j < d.ny; ++j) {
      const int tj = (d.ny - j) % d.ny;
      for (int i = 0; i < d.nx; ++i) out((d.nx - i) % d.nx, tj, tk) = field(i, j, k);
    }
  }
  return out;
}

double max_value(const ScalarField3D& field) {
  if (field.size() == 0) return 0.0;
  return *std::max_element(field.data().begin(), field.data().end());
}

double sum_squares(const ScalarField3D& field) {
  double s = 0.0;
  for (double v : field.data()) s += v * v;
  return s;
}

// --- PGRD -------------------------------------------------------------------

namespace {
constexpr char kPgrdMagic[4] = {'P', 'G', 'R', 'D'};
constexpr std::uint32_t kPgrdVersion = 1;
}  // namespace

void write_pgrd(std::ostream& out, const ScalarField3D& field, GridDtype dtype) {
  const GridDims& d = field.dims();
  out.write(kPgrdMagic, 4);
  detail::put<std::uint32_t>(out, kPgrdVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(d.nx));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(d.ny));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(d.nz));
  detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
  if (dtype == GridDtype::f64) {
    out.write(reinterpret_cast<const char*>(field.data().data()),
              static_cast<std::streamsize>(field.size() * sizeof(double)));
  } else {
    std::vector<float> tmp(field.data().begin(), field.data().end());
    out.write(reinterpret_cast<const char*>(tmp.data()),
              static_cast<std::streamsize>(tmp.size() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing PGRD stream");
}

void write_pgrd(const std::filesystem::path& path, const ScalarField3D& field, GridDtype dtype) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_pgrd(out, field, dtype);
}

PgrdHeader read_pgrd_header(std::istream& in) {
  char magic[4];
  detail::get_bytes(in, magic, 4, "PGRD magic");
  if (!std::equal(magic, magic + 4, kPgrdMagic)) throw IoError("not a PGRD file (bad magic)");
  PgrdHeader h;
  h.version = detail::get<std::uint32_t>(in, "PGRD version");
  if (h.version != kPgrdVersion)
    throw IoError("unsupported PGRD version " + std::to_string(h.version));
  const auto nx = detail::get<std::uint32_t>(in, "PGRD dims");
  const auto ny = detail::get<std::uint32_t>(in, "PGRD dims");
  const auto nz = detail::get<std::uint32_t>(in, "PGRD dims");
  constexpr auto int_max = static_cast<std::uint32_t>(std::numeric_limits<int>::max());
  if (nx == 0 || ny == 0 || nz == 0 || nx > int_max || ny > int_max || nz > int_max)
    throw IoError("PGRD dims out of range");
  h.dims = {static_cast<int>(nx), static_cast<int>(ny), static_cast<int>(nz)};
  const auto code = detail::get<std::uint8_t>(in, "PGRD dtype");
  if (code > 1) throw IoError("unknown PGRD dtype code " + std::to_string(code));
  h.dtype = static_cast<GridDtype>(code);
  return h;
}

ScalarField3D read_pgrd(std::istream& in) {
  const PgrdHeader h = read_pgrd_header(in);
  ScalarField3D field(h.dims);
  const std::size_t n = field.size();
  if (h.dtype == GridDtype::f64) {
    detail::get_bytes(in, reinterpret_cast<char*>(field.data().data()), n * sizeof(double),
                      "PGRD values");
  } else {
    std::vector<float> tmp(n);
    detail::get_bytes(in, reinterpret_cast<char*>(tmp.data()), n * sizeof(float), "PGRD values");
    std::copy(tmp.begin(), tmp.end(), field.data().begin());
  }
  return field;
}

ScalarField3D read_pgrd(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_pgrd(in);
}

}  // namespace phasenet
