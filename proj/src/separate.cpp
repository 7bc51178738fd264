#include "phasenet/separate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "fft_backend.hpp"
#include "phasenet/error.hpp"

namespace phasenet {

void SeparationConfig::validate() const {
  if (subset_size < 1) throw ConfigError("subset_size must be >= 1");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (!(cooling > 0.0 && cooling < 1.0)) throw ConfigError("cooling must lie in (0, 1)");
  if (initial_temperature && !(*initial_temperature > 0.0)) throw ConfigError("initial_temperature must be > 0");
}

AtomSet augment_with_mates(const AtomSet& candidates, int outer_dim) {
  if (candidates.empty()) throw ConfigError("cannot augment an empty candidate set");
  AtomSet pool(candidates);
  const AtomSet mates = centro_mates(candidates, outer_dim);
  pool.insert(pool.end(), mates.begin(), mates.end());
  return pool;
}

double patterson_mse(const ScalarField3D& a, const ScalarField3D& b) {
  if (!(a.dims() == b.dims())) throw ShapeError("patterson_mse operands differ in dims");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return a.size() ? s / static_cast<double>(a.size()) : 0.0;
}

// --- SeparationState ---------------------------------------------------------------

SeparationState::SeparationState(AtomSet pool, const ScalarField3D& true_patterson, const GenConfig& gen,
                                 bool normalize_patterson)
    : pool_(std::move(pool)), gen_(gen), normalize_(normalize_patterson), true_patterson_(true_patterson),
      density_(gen.dims()) {
  const GridDims dims = gen.dims();
  if (!(true_patterson.dims() == dims)) throw ShapeError("true Patterson dims do not match the generator grid");

  const std::size_t half = detail::half_spectrum_size(dims);
  true_spectrum_.resize(half);
  detail::dft_r2c(dims, true_patterson.data().data(), true_spectrum_.data());

  // Weights that turn a half-spectrum sum into a full-spectrum sum.
  half_weights_.assign(half, 2.0);
  const int hx = dims.nx / 2 + 1;
  for (std::size_t i = 0; i < half; ++i) {
    const int kx = static_cast<int>(i % static_cast<std::size_t>(hx));
    if (kx == 0 || (dims.nx % 2 == 0 && kx == dims.nx / 2)) half_weights_[i] = 1.0;
  }

  footprints_.reserve(pool_.size());
  atom_spectra_.reserve(pool_.size());
  ScalarField3D scratch(dims);
  for (const auto& p : pool_) {
    footprints_.push_back(atom_footprint(p, gen_));
    std::fill(scratch.data().begin(), scratch.data().end(), 0.0);
    for (const auto& [idx, v] : footprints_.back()) scratch[idx] += v;
    std::vector<std::complex<double>> spec(half);
    detail::dft_r2c(dims, scratch.data().data(), spec.data());
    atom_spectra_.push_back(std::move(spec));
  }
  spectrum_.assign(half, {0.0, 0.0});
  proposal_.assign(half, {0.0, 0.0});
}

AtomSet SeparationState::selected_positions() const {
  AtomSet out;
  out.reserve(selected_.size());
  for (auto i : selected_) out.push_back(pool_[i]);
  return out;
}

void SeparationState::select(std::vector<std::size_t> indices) {
  std::vector<bool> in(pool_.size(), false);
  for (auto i : indices) {
    if (i >= pool_.size() || in[i]) throw ConfigError("selection indices must be unique pool indices");
    in[i] = true;
  }
  selected_ = std::move(indices);
  unselected_.clear();
  for (std::size_t i = 0; i < pool_.size(); ++i)
    if (!in[i]) unselected_.push_back(i);

  std::fill(density_.data().begin(), density_.data().end(), 0.0);
  std::fill(spectrum_.begin(), spectrum_.end(), std::complex<double>{});
  for (auto i : selected_) {
    for (const auto& [idx, v] : footprints_[i]) density_[idx] += v;
    const auto& s = atom_spectra_[i];
    for (std::size_t h = 0; h < s.size(); ++h) spectrum_[h] += s[h];
  }
  score_ = spectral_score(spectrum_);
  has_proposal_ = false;
}

double SeparationState::spectral_score(const std::vector<std::complex<double>>& spectrum) const {
  const double n = static_cast<double>(density_.size());
  double scale = 1.0;
  if (normalize_) {
    // Origin of the test Patterson: (1/N) * sum over the full spectrum of |F|^2.
    double origin = 0.0;
    for (std::size_t h = 0; h < spectrum.size(); ++h) origin += half_weights_[h] * std::norm(spectrum[h]);
    origin /= n;
    scale = origin > 0.0 ? 1.0 / origin : 1.0;
  }
  double sum = 0.0;
  for (std::size_t h = 0; h < spectrum.size(); ++h) {
    const std::complex<double> diff = scale * std::norm(spectrum[h]) - true_spectrum_[h];
    sum += half_weights_[h] * std::norm(diff);
  }
  return sum / (n * n);
}

double SeparationState::propose_swap(std::size_t slot, std::size_t other) {
  if (slot >= selected_.size() || other >= unselected_.size()) throw ConfigError("swap indices out of range");
  const auto& out = atom_spectra_[selected_[slot]];
  const auto& in = atom_spectra_[unselected_[other]];
  for (std::size_t h = 0; h < spectrum_.size(); ++h) proposal_[h] = spectrum_[h] - out[h] + in[h];
  proposal_score_ = spectral_score(proposal_);
  proposal_slot_ = slot;
  proposal_other_ = other;
  has_proposal_ = true;
  return proposal_score_;
}

void SeparationState::accept() {
  if (!has_proposal_) throw ConfigError("accept() without a pending proposal");
  const std::size_t leaving = selected_[proposal_slot_];
  const std::size_t joining = unselected_[proposal_other_];
  for (const auto& [idx, v] : footprints_[leaving]) density_[idx] -= v;
  for (const auto& [idx, v] : footprints_[joining]) density_[idx] += v;
  selected_[proposal_slot_] = joining;
  unselected_[proposal_other_] = leaving;
  spectrum_.swap(proposal_);
  score_ = proposal_score_;
  has_proposal_ = false;
}

ScalarField3D SeparationState::recompute_density() const { return rasterize(selected_positions(), gen_); }

ScalarField3D SeparationState::test_patterson() const {
  ScalarField3D p = patterson(recompute_density());
  if (normalize_) {
    const double origin = p[0];
    if (origin > 0.0)
      for (auto& v : p.data()) v /= origin;
  }
  return p;
}

double SeparationState::recompute_score() const { return patterson_mse(test_patterson(), true_patterson_); }

// --- search ---------------------------------------------------------------------------

SeparationResult separate(const AtomSet& pool, const ScalarField3D& true_patterson, const GenConfig& gen,
                          const SeparationConfig& config) {
  config.validate();
  const auto k = static_cast<std::size_t>(config.subset_size);
  if (pool.size() < k) throw ConfigError("candidate pool is smaller than the subset size");

  std::mt19937_64 rng(config.seed);
  SeparationState state(pool, true_patterson, gen, config.normalize_patterson);

  std::vector<std::size_t> all(pool.size());
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  state.select(std::vector<std::size_t>(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k)));

  SeparationResult result;
  result.trace.reserve(static_cast<std::size_t>(config.iterations) + 1);
  result.trace.push_back(state.score());
  result.indices = state.selected();
  result.score = state.score();

  const bool can_swap = !state.unselected().empty();
  const double t0 = config.initial_temperature.value_or(0.1 * state.score());
  double temperature = t0;
  std::uniform_int_distribution<std::size_t> pick_slot(0, k - 1);
  std::uniform_int_distribution<std::size_t> pick_other(0, can_swap ? state.unselected().size() - 1 : 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int it = 0; it < config.iterations; ++it) {
    if (can_swap) {
      const std::size_t slot = pick_slot(rng);
      const std::size_t other = pick_other(rng);
      const double candidate = state.propose_swap(slot, other);
      const double delta = candidate - state.score();
      bool take = delta < 0.0;
      if (!take && config.mode == SearchMode::anneal && temperature > 0.0)
        take = unit(rng) < std::exp(-delta / temperature);
      if (take) {
        state.accept();
        ++result.accepted;
        if (state.score() < result.score) {
          result.score = state.score();
          result.indices = state.selected();
        }
      }
    }
    temperature *= config.cooling;
    result.trace.push_back(state.score());
  }

  for (auto i : result.indices) result.selected.push_back(pool[i]);
  return result;
}

void write_trace_tsv(const std::filesystem::path& path, const std::vector<double>& trace) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "iter\tscore\n";
  char buf[64];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\n", i, trace[i]);
    out << buf;
  }
}

void write_atoms_json(const std::filesystem::path& path, const AtomSet& atoms, double score) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : atoms) arr.push_back({p.x, p.y, p.z});
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << nlohmann::json{{"atoms", arr}, {"score", score}}.dump(2) << '\n';
}

}  // namespace phasenet
