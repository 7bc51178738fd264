#include "phasenet/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "phasenet/error.hpp"

namespace phasenet {

MatchReport match_atoms(const AtomSet& deduced, const AtomSet& truth) {
  MatchReport r;
  auto nearest = [](const Vec3& p, const AtomSet& set) {
    std::size_t best = 0;
    double best_d2 = INFINITY;
    for (std::size_t i = 0; i < set.size(); ++i) {
      const double d2 = (p - set[i]).norm2();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = i;
      }
    }
    return best;
  };

  std::vector<bool> truth_used(truth.size(), false);
  std::vector<bool> deduced_used(deduced.size(), false);
  if (!deduced.empty() && !truth.empty()) {
    for (std::size_t d = 0; d < deduced.size(); ++d) {
      const std::size_t t = nearest(deduced[d], truth);
      if (nearest(truth[t], deduced) != d) continue;
      r.pairs.push_back({d, t, distance(deduced[d], truth[t])});
      truth_used[t] = true;
      deduced_used[d] = true;
    }
  }
  for (std::size_t t = 0; t < truth.size(); ++t)
    if (!truth_used[t]) r.unmatched_true.push_back(t);
  for (std::size_t d = 0; d < deduced.size(); ++d)
    if (!deduced_used[d]) r.unmatched_deduced.push_back(d);
  double sum = 0.0;
  for (const auto& p : r.pairs) sum += p.distance;
  r.mean_error = r.pairs.empty() ? 0.0 : sum / static_cast<double>(r.pairs.size());
  return r;
}

MatchReport best_enantiomer_match(const AtomSet& deduced, const AtomSet& truth, int outer_dim) {
  MatchReport direct = match_atoms(deduced, truth);
  MatchReport flipped = match_atoms(centro_mates(deduced, outer_dim), truth);
  flipped.flipped = true;
  if (flipped.pairs.size() != direct.pairs.size()) return flipped.pairs.size() > direct.pairs.size() ? flipped : direct;
  return flipped.mean_error < direct.mean_error ? flipped : direct;
}

CaseResult evaluate_case(const TrainingExample& example, const GenConfig& gen, const Network* net,
                         const EvalOptions& options, std::size_t index) {
  CaseResult r;
  r.index = index;
  try {
    ScalarField3D map;
    if (options.oracle) {
      map = example.target;
    } else {
      if (!net) throw ConfigError("network evaluation requested without weights");
      map = infer(net->arch, net->weights, example.input);
    }
    const auto peaks = find_peaks(map, options.peaks);
    r.peaks = peaks.size();
    const AtomSet pool = augment_with_mates(peak_positions(peaks), gen.outer_dim);

    SeparationConfig sep = options.separation;
    sep.seed = mix_seed(options.separation.seed, index);
    sep.subset_size = std::min<int>(sep.subset_size, static_cast<int>(pool.size()));
    const SeparationResult s = separate(pool, example.input, gen, sep);
    r.separation_score = s.score;
    r.trace = s.trace;
    r.match = best_enantiomer_match(s.selected, example.truth, gen.outer_dim);
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

AccuracyReport aggregate(std::vector<CaseResult> cases) {
  AccuracyReport rep;
  rep.cases = cases.size();
  std::size_t flipped = 0, ok = 0;
  double sum = 0.0;
  for (const auto& c : cases) {
    if (!c.ok) {
      ++rep.failed_cases;
      continue;
    }
    ++ok;
    flipped += c.match.flipped;
    rep.atoms_total += c.match.pairs.size() + c.match.unmatched_true.size();
    rep.atoms_matched += c.match.pairs.size();
    for (const auto& p : c.match.pairs) {
      rep.distances.push_back(p.distance);
      sum += p.distance;
    }
  }
  rep.mean_error_px = rep.distances.empty() ? 0.0 : sum / static_cast<double>(rep.distances.size());
  rep.flipped_fraction = ok ? static_cast<double>(flipped) / static_cast<double>(ok) : 0.0;
  rep.per_case = std::move(cases);
  return rep;
}

namespace {

template <typename Fn>
std::vector<CaseResult> run_cases(std::size_t count, unsigned threads, Fn&& one) {
  std::vector<CaseResult> results(count);
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < count;) results[i] = one(i);
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return results;
}

}  // namespace

AccuracyReport evaluate_corpus(const DatasetManifest& manifest, const Network* net, const EvalOptions& options) {
  auto results = run_cases(manifest.entries.size(), options.threads, [&](std::size_t i) {
    try {
      return evaluate_case(load_example(manifest, i), manifest.config, net, options, i);
    } catch (const std::exception& e) {
      CaseResult r;
      r.index = i;
      r.error = e.what();
      return r;
    }
  });
  return aggregate(std::move(results));
}

AccuracyReport evaluate_examples(const std::vector<TrainingExample>& examples, const GenConfig& gen,
                                 const Network* net, const EvalOptions& options) {
  auto results = run_cases(examples.size(), options.threads,
                           [&](std::size_t i) { return evaluate_case(examples[i], gen, net, options, i); });
  return aggregate(std::move(results));
}

std::vector<std::pair<double, std::size_t>> histogram(const std::vector<double>& values, double bin_width) {
  if (!(bin_width > 0.0)) throw ConfigError("histogram bin width must be > 0");
  std::vector<std::pair<double, std::size_t>> bins;
  if (values.empty()) return bins;
  const double top = *std::max_element(values.begin(), values.end());
  const auto n = static_cast<std::size_t>(std::floor(top / bin_width)) + 1;
  bins.resize(n);
  for (std::size_t b = 0; b < n; ++b) bins[b] = {static_cast<double>(b) * bin_width, 0};
  for (double v : values) {
    auto b = static_cast<std::size_t>(std::floor(std::max(0.0, v) / bin_width));
    bins[std::min(b, n - 1)].second++;
  }
  return bins;
}

void write_summary_json(const std::filesystem::path& path, const AccuracyReport& report) {
  const nlohmann::json j{{"cases", report.cases},
                         {"atoms_total", report.atoms_total},
                         {"atoms_matched", report.atoms_matched},
                         {"mean_error_px", report.mean_error_px},
                         {"flipped_fraction", report.flipped_fraction},
                         {"failed_cases", report.failed_cases}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_histogram_tsv(const std::filesystem::path& path, const AccuracyReport& report, double bin_width) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "bin_left_px\tcount\n";
  char buf[64];
  for (const auto& [left, count] : histogram(report.distances, bin_width)) {
    std::snprintf(buf, sizeof buf, "%.2f\t%zu\n", left, count);
    out << buf;
  }
}

// --- ablations ---------------------------------------------------------------------------

namespace {
const std::map<std::string, AblationVariant> kVariants{{"baseline", AblationVariant::baseline},
                                                       {"no_centro_10", AblationVariant::no_centro_10},
                                                       {"no_centro_20", AblationVariant::no_centro_20},
                                                       {"inner_mid", AblationVariant::inner_mid},
                                                       {"inner_large", AblationVariant::inner_large}};
}  // namespace

std::string to_string(AblationVariant v) {
  for (const auto& [name, var] : kVariants)
    if (var == v) return name;
  return "?";
}

AblationVariant parse_variant(const std::string& name) {
  auto it = kVariants.find(name);
  if (it == kVariants.end()) throw ConfigError("unknown ablation variant '" + name + "'");
  return it->second;
}

const std::vector<AblationVariant>& all_variants() {
  static const std::vector<AblationVariant> v{AblationVariant::baseline, AblationVariant::no_centro_10,
                                              AblationVariant::no_centro_20, AblationVariant::inner_mid,
                                              AblationVariant::inner_large};
  return v;
}

VariantSetup variant_setup(AblationVariant variant, const GenConfig& base_gen, const TrainConfig& base_train) {
  VariantSetup s{base_gen, base_train};
  // Reference proportions: 18 and 24 voxel inner boxes on a 40 voxel grid.
  auto scaled = [&](int ref) { return static_cast<int>(std::lround(ref * base_gen.outer_dim / 40.0)); };
  switch (variant) {
    case AblationVariant::baseline: break;
    case AblationVariant::no_centro_10:
      s.gen.centro_target = false;
      s.train.loss_scale = 2.0 * base_train.loss_scale;
      break;
    case AblationVariant::no_centro_20:
      s.gen.centro_target = false;
      s.gen.n_atoms = 2 * base_gen.n_atoms;
      break;
    case AblationVariant::inner_mid: s.gen.inner_dim = scaled(18); break;
    case AblationVariant::inner_large: s.gen.inner_dim = scaled(24); break;
  }
  return s;
}

AblationRun run_ablation(AblationVariant variant, const ArchSpec& arch, const GenConfig& base_gen,
                         const TrainConfig& base_train, const TrainHooks& hooks) {
  const VariantSetup s = variant_setup(variant, base_gen, base_train);
  return {variant, train(arch, s.gen, s.train, std::nullopt, hooks).log};
}

void write_ablation_tsv(const std::filesystem::path& path, const std::vector<AblationRun>& runs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "refresh_index\tvariant\tval_loss\n";
  char buf[128];
  for (const auto& run : runs)
    for (const auto& row : run.log) {
      std::snprintf(buf, sizeof buf, "%d\t%s\t%.17g\n", row.refresh_index, to_string(run.variant).c_str(), row.val_loss);
      out << buf;
    }
}

}  // namespace phasenet
