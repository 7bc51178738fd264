#include "fft_backend.hpp"

#include <fftw3.h>

#include "phasenet/error.hpp"

#include <map>
#include <mutex>
#include <tuple>
#include <vector>

namespace phasenet::detail {
namespace {

enum class Kind { forward, backward, r2c, c2r };

using Key = std::tuple<int, int, int, Kind>;

class PlanCache {
 public:
  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  fftw_plan get(const GridDims& d, Kind kind) {
    std::lock_guard lock(mu_);
    const Key key{d.nx, d.ny, d.nz, kind};
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;

    // Planning with FFTW_ESTIMATE never touches the arrays, but FFTW still
    // wants valid pointers to derive alignment; UNALIGNED lifts that.
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    const std::size_t n = d.voxels();
    std::vector<std::complex<double>> cbuf(n);
    std::vector<double> rbuf(n);
    auto* c = reinterpret_cast<fftw_complex*>(cbuf.data());
    fftw_plan plan = nullptr;
    switch (kind) {
      case Kind::forward:
        plan = fftw_plan_dft_3d(d.nz, d.ny, d.nx, c, c, FFTW_FORWARD, flags);
        break;
      case Kind::backward:
        plan = fftw_plan_dft_3d(d.nz, d.ny, d.nx, c, c, FFTW_BACKWARD, flags);
        break;
      case Kind::r2c:
        plan = fftw_plan_dft_r2c_3d(d.nz, d.ny, d.nx, rbuf.data(), c, flags);
        break;
      case Kind::c2r:
        plan = fftw_plan_dft_c2r_3d(d.nz, d.ny, d.nx, c, rbuf.data(), flags);
        break;
    }
    if (!plan) throw NumericError("FFTW failed to create a plan");
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mu_;
  std::map<Key, fftw_plan> plans_;
};

PlanCache& cache() {
  static PlanCache instance;
  return instance;
}

}  // namespace

void dft_c2c(const GridDims& dims, const std::complex<double>* in, std::complex<double>* out,
             bool inverse) {
  fftw_plan plan = cache().get(dims, inverse ? Kind::backward : Kind::forward);
  const std::size_t n = dims.voxels();
  if (in != out) std::copy(in, in + n, out);
  auto* c = reinterpret_cast<fftw_complex*>(out);
  fftw_execute_dft(plan, c, c);
}

void dft_r2c(const GridDims& dims, const double* in, std::complex<double>* out) {
  fftw_plan plan = cache().get(dims, Kind::r2c);
  // FFTW's new-array execute takes a non-const input even for r2c, which it
  // leaves untouched.
  fftw_execute_dft_r2c(plan, const_cast<double*>(in), reinterpret_cast<fftw_complex*>(out));
}

void dft_c2r(const GridDims& dims, const std::complex<double>* in, double* out) {
  fftw_plan plan = cache().get(dims, Kind::c2r);
  std::vector<std::complex<double>> scratch(in, in + half_spectrum_size(dims));
  fftw_execute_dft_c2r(plan, reinterpret_cast<fftw_complex*>(scratch.data()), out);
}

}  // namespace phasenet::detail
