#pragma once

#include <complex>

#include "phasenet/grid.hpp"

namespace phasenet::detail {

// Thin wrappers over cached FFTW plans (FFTW_ESTIMATE, so results are
// reproducible run to run). Safe to call concurrently.
void dft_c2c(const GridDims& dims, const std::complex<double>* in, std::complex<double>* out,
             bool inverse);

// Half-spectrum transforms; the x axis is halved to nx/2+1 entries.
void dft_r2c(const GridDims& dims, const double* in, std::complex<double>* out);
void dft_c2r(const GridDims& dims, const std::complex<double>* in, double* out);

inline std::size_t half_spectrum_size(const GridDims& d) {
  return static_cast<std::size_t>(d.nz) * d.ny * (d.nx / 2 + 1);
}

}  // namespace phasenet::detail
