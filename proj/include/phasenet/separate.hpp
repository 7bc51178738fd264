#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include "phasenet/datagen.hpp"
#include "phasenet/grid.hpp"

namespace phasenet {

enum class SearchMode { greedy, anneal };

struct SeparationConfig {
  int subset_size = 10;
  int iterations = 5000;
  SearchMode mode = SearchMode::greedy;
  // Annealing start temperature; 0.1 x the initial score when unset.
  std::optional<double> initial_temperature;
  double cooling = 0.999;  // geometric decay per iteration
  std::uint64_t seed = 0;
  // Compare origin-normalized Patterson maps (matches GenConfig::normalize_input).
  bool normalize_patterson = true;

  void validate() const;
};

// candidates followed by their centrosymmetric mates.
AtomSet augment_with_mates(const AtomSet& candidates, int outer_dim);

// Mean over voxels of (a - b)^2.
double patterson_mse(const ScalarField3D& a, const ScalarField3D& b);

// Swap-search state. The test density is kept as the sum of the selected atoms'
// rasterizations, and the score is evaluated from the running Fourier transform
// of that density: by Parseval, mse(P_test, P_true) equals the spectral sum
// N^-2 * sum_h (|F_h|^2 - P^_h)^2, so no inverse transform is needed per step.
class SeparationState {
 public:
  SeparationState(AtomSet pool, const ScalarField3D& true_patterson, const GenConfig& gen,
                  bool normalize_patterson);

  const AtomSet& pool() const noexcept { return pool_; }
  const std::vector<std::size_t>& selected() const noexcept { return selected_; }
  const std::vector<std::size_t>& unselected() const noexcept { return unselected_; }
  const ScalarField3D& test_density() const noexcept { return density_; }
  double score() const noexcept { return score_; }
  AtomSet selected_positions() const;

  // Replaces the selection outright.
  void select(std::vector<std::size_t> indices);

  // Score the selection would have after swapping selected()[slot] for
  // unselected()[other]; leaves the state untouched but caches the candidate.
  double propose_swap(std::size_t slot, std::size_t other);
  // Commits the most recent proposal.
  void accept();

  // Slow path straight from the definitions: rasterize the selection, FFT it to
  // a Patterson map and take the voxelwise MSE.
  ScalarField3D test_patterson() const;
  double recompute_score() const;
  ScalarField3D recompute_density() const;

 private:
  double spectral_score(const std::vector<std::complex<double>>& spectrum) const;

  AtomSet pool_;
  GenConfig gen_;
  bool normalize_;
  ScalarField3D true_patterson_;
  std::vector<std::complex<double>> true_spectrum_;
  std::vector<double> half_weights_;
  std::vector<Footprint> footprints_;
  std::vector<std::vector<std::complex<double>>> atom_spectra_;

  std::vector<std::size_t> selected_;
  std::vector<std::size_t> unselected_;
  ScalarField3D density_;
  std::vector<std::complex<double>> spectrum_;
  double score_ = 0.0;

  std::vector<std::complex<double>> proposal_;
  double proposal_score_ = 0.0;
  std::size_t proposal_slot_ = 0, proposal_other_ = 0;
  bool has_proposal_ = false;
};

struct SeparationResult {
  AtomSet selected;                  // best-ever selection
  std::vector<std::size_t> indices;  // into the pool
  double score = 0.0;                // best-ever score
  std::vector<double> trace;         // current score, initial state then one entry per iteration
  std::size_t accepted = 0;
};

SeparationResult separate(const AtomSet& pool, const ScalarField3D& true_patterson, const GenConfig& gen,
                          const SeparationConfig& config);

void write_trace_tsv(const std::filesystem::path& path, const std::vector<double>& trace);
void write_atoms_json(const std::filesystem::path& path, const AtomSet& atoms, double score);

}  // namespace phasenet
