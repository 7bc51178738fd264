#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "phasenet/datagen.hpp"
#include "phasenet/model.hpp"
#include "phasenet/peaks.hpp"
#include "phasenet/separate.hpp"
#include "phasenet/train.hpp"

namespace phasenet {

struct MatchPair {
  std::size_t deduced = 0;
  std::size_t truth = 0;
  double distance = 0.0;
};

struct MatchReport {
  std::vector<MatchPair> pairs;
  std::vector<std::size_t> unmatched_true;
  std::vector<std::size_t> unmatched_deduced;
  bool flipped = false;
  double mean_error = 0.0;
};

// Pairs (d, t) only when each is the other's nearest neighbor; ties go to the
// lower index.
MatchReport match_atoms(const AtomSet& deduced, const AtomSet& truth);

// Tries deduced and its centrosymmetric mates; keeps the report with more pairs,
// then the lower mean error.
MatchReport best_enantiomer_match(const AtomSet& deduced, const AtomSet& truth, int outer_dim);

struct EvalOptions {
  PeakConfig peaks;
  SeparationConfig separation;
  // Skip the network and pick peaks from the target map.
  bool oracle = false;
  unsigned threads = 1;
};

struct CaseResult {
  std::size_t index = 0;
  bool ok = false;
  std::string error;
  std::size_t peaks = 0;
  double separation_score = 0.0;
  std::vector<double> trace;
  MatchReport match;
};

struct AccuracyReport {
  std::size_t cases = 0;
  std::size_t failed_cases = 0;
  std::size_t atoms_total = 0;
  std::size_t atoms_matched = 0;
  double mean_error_px = 0.0;
  double flipped_fraction = 0.0;
  std::vector<double> distances;
  std::vector<CaseResult> per_case;

  double matched_fraction() const {
    return atoms_total ? static_cast<double>(atoms_matched) / static_cast<double>(atoms_total) : 0.0;
  }
};

struct Network {
  ArchSpec arch;
  NetworkWeights weights;
};

// infer (or take the target when oracle) -> find_peaks -> augment_with_mates ->
// separate -> best_enantiomer_match for one example.
CaseResult evaluate_case(const TrainingExample& example, const GenConfig& gen, const Network* net,
                         const EvalOptions& options, std::size_t index);

AccuracyReport aggregate(std::vector<CaseResult> cases);

// Loads examples one at a time from the manifest. Per-case failures are recorded
// and do not stop the run.
AccuracyReport evaluate_corpus(const DatasetManifest& manifest, const Network* net, const EvalOptions& options);
AccuracyReport evaluate_examples(const std::vector<TrainingExample>& examples, const GenConfig& gen,
                                 const Network* net, const EvalOptions& options);

// Bins of the given width starting at 0: (left edge, count).
std::vector<std::pair<double, std::size_t>> histogram(const std::vector<double>& values, double bin_width = 0.05);

void write_summary_json(const std::filesystem::path& path, const AccuracyReport& report);
void write_histogram_tsv(const std::filesystem::path& path, const AccuracyReport& report, double bin_width = 0.05);

// --- ablations ---------------------------------------------------------------------

enum class AblationVariant { baseline, no_centro_10, no_centro_20, inner_mid, inner_large };

std::string to_string(AblationVariant v);
AblationVariant parse_variant(const std::string& name);
const std::vector<AblationVariant>& all_variants();

struct VariantSetup {
  GenConfig gen;
  TrainConfig train;
};

// Derives the data/loss settings of a variant from the baseline configs: the
// no-centrosymmetry variants drop the mates from the target (10-atom: same atom
// count, loss x2; 20-atom: twice the atoms); the inner-box variants scale the
// 18 and 24 voxel boxes of a 40 voxel grid onto base.outer_dim.
VariantSetup variant_setup(AblationVariant variant, const GenConfig& base_gen, const TrainConfig& base_train);

struct AblationRun {
  AblationVariant variant;
  std::vector<LogRow> log;
};

AblationRun run_ablation(AblationVariant variant, const ArchSpec& arch, const GenConfig& base_gen,
                         const TrainConfig& base_train, const TrainHooks& hooks = {});

void write_ablation_tsv(const std::filesystem::path& path, const std::vector<AblationRun>& runs);

}  // namespace phasenet
