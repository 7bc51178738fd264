// Acceptance suite. Usage: acceptance <criterion>... [--cli PATH] [--work DIR]
// Prints one PASS/FAIL line per criterion; exits nonzero if any failed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "phasenet/eval.hpp"

namespace fs = std::filesystem;
using namespace phasenet;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path cli;
  fs::path work;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// --- 1: architecture exactness ------------------------------------------------------------

constexpr std::size_t kPaperParams = 1'202'821;
constexpr int kPaperReceptiveField = 56;

Outcome architecture(const Context&) {
  const ArchSpec a = ArchSpec::paper();
  const std::size_t params = param_count(a);
  const int rf = receptive_field(a);
  return {params == kPaperParams && rf == kPaperReceptiveField,
          "param_count=" + std::to_string(params) + " (want 1202821), receptive_field=" + std::to_string(rf) +
              " (want 56)"};
}

// --- 2: Patterson invariants -----------------------------------------------------------------

constexpr int kPattersonCases = 100;
constexpr double kPattersonTol = 1e-9;

double rel_diff(const ScalarField3D& a, const ScalarField3D& b) {
  double scale = 0.0, diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(a[i]));
    diff = std::max(diff, std::abs(a[i] - b[i]));
  }
  return scale > 0.0 ? diff / scale : diff;
}

Outcome patterson_invariants(const Context&) {
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> dim(8, 40);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst_shift = 0, worst_inv = 0, worst_sym = 0, worst_zero = 0;
  int failures = 0;
  for (int c = 0; c < kPattersonCases; ++c) {
    const GridDims d{dim(rng), dim(rng), dim(rng)};
    ScalarField3D f(d);
    for (auto& v : f.data()) v = unit(rng);
    std::uniform_int_distribution<int> shift(-50, 50);
    const ScalarField3D p = patterson(f);
    const double e_shift = rel_diff(p, patterson(circular_shift(f, {shift(rng), shift(rng), shift(rng)})));
    const double e_inv = rel_diff(p, patterson(centro_invert_field(f)));
    const double e_sym = rel_diff(p, centro_invert_field(p));
    const double ss = sum_squares(f);
    const double e_zero = std::abs(p[0] - ss) / ss;
    worst_shift = std::max(worst_shift, e_shift);
    worst_inv = std::max(worst_inv, e_inv);
    worst_sym = std::max(worst_sym, e_sym);
    worst_zero = std::max(worst_zero, e_zero);
    failures += !(e_shift <= kPattersonTol && e_inv <= kPattersonTol && e_sym <= kPattersonTol && e_zero <= kPattersonTol);
  }
  return {failures == 0, std::to_string(kPattersonCases) + " densities 8..40 per axis; worst rel: translation " +
                             fmt("%.2e", worst_shift) + ", inversion " + fmt("%.2e", worst_inv) + ", symmetry " +
                             fmt("%.2e", worst_sym) + ", zero-lag " + fmt("%.2e", worst_zero) + " (tol 1e-9)"};
}

// --- 3: gradient correctness ---------------------------------------------------------------

constexpr double kGradStep = 1e-5;
constexpr double kGradTol = 1e-4;

double gradient_error(const ArchSpec& arch, GridDims dims, std::uint64_t seed, std::size_t& probed) {
  Weights<double> w = init_weights<double>(arch, seed);
  std::mt19937_64 rng(seed ^ 0x5bd1e995);
  std::normal_distribution<double> n(0.0, 0.1);
  for (auto& c : w.convs)
    for (auto& b : c.bias) b = n(rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<double> input(1, dims), target(1, dims);
  for (auto& v : input.values) v = u(rng);
  for (auto& v : target.values) v = u(rng);

  const auto analytic = backward(arch, w, input, target);
  double worst = 0.0;
  auto probe = [&](double& p, double g) {
    const double keep = p;
    p = keep + kGradStep;
    const double up = mse_loss(forward(arch, w, input), target);
    p = keep - kGradStep;
    const double down = mse_loss(forward(arch, w, input), target);
    p = keep;
    const double numeric = (up - down) / (2.0 * kGradStep);
    worst = std::max(worst, std::abs(numeric - g) / std::max({std::abs(numeric), std::abs(g), 1e-6}));
    ++probed;
  };
  for (std::size_t l = 0; l < w.convs.size(); ++l) {
    for (std::size_t i = 0; i < w.convs[l].kernel.size(); ++i) probe(w.convs[l].kernel[i], analytic.grad.convs[l].kernel[i]);
    for (std::size_t i = 0; i < w.convs[l].bias.size(); ++i) probe(w.convs[l].bias[i], analytic.grad.convs[l].bias[i]);
  }
  return worst;
}

Outcome gradients(const Context&) {
  using L = LayerSpec;
  const std::vector<std::pair<ArchSpec, GridDims>> cases{
      {{"conv-relu-tanh", {L::conv(1, 2, 3, Activation::relu), L::conv(2, 1, 3, Activation::tanh)}}, GridDims::cube(6)},
      {{"conv-none", {L::conv(1, 3, 5, Activation::none), L::conv(3, 1, 1, Activation::none)}}, GridDims{6, 5, 4}},
      {{"pool-upsample",
        {L::conv(1, 2, 3, Activation::relu), L::maxpool(), L::conv(2, 2, 3, Activation::relu), L::upsample(),
         L::conv(2, 2, 5, Activation::tanh), L::conv(2, 1, 3, Activation::tanh)}},
       GridDims::cube(6)},
      {{"deep-pool",
        {L::conv(1, 2, 3, Activation::tanh), L::maxpool(), L::conv(2, 2, 3, Activation::tanh),
         L::conv(2, 2, 3, Activation::relu), L::upsample(), L::conv(2, 1, 3, Activation::tanh)}},
       GridDims{4, 6, 2}},
  };
  double worst = 0.0;
  std::size_t probed = 0;
  std::ostringstream detail;
  std::uint64_t seed = 1;
  for (const auto& [arch, dims] : cases) {
    const double e = gradient_error(arch, dims, seed++, probed);
    worst = std::max(worst, e);
    detail << arch.name << "=" << fmt("%.1e", e) << " ";
  }
  detail << "| " << probed << " parameters, worst rel " << fmt("%.2e", worst) << " (tol 1e-4, h=1e-5)";
  return {worst <= kGradTol, detail.str()};
}

// --- 4: desk-scale learning ----------------------------------------------------------------

constexpr double kLearnRatio = 0.5;
constexpr double kTrackRatio = 2.0;

Outcome desk_learning(const Context&) {
  TrainConfig tc = TrainConfig::desk();
  tc.seed = 2024;
  const TrainResult r = train(ArchSpec::desk(), GenConfig::desk(), tc);
  const double first = r.log.front().val_loss, last = r.log.back().val_loss;
  double worst_track = 1.0;
  for (std::size_t i = 1; i < r.log.size(); ++i) {
    const auto& row = r.log[i];
    worst_track = std::max({worst_track, row.val_loss / row.train_loss, row.train_loss / row.val_loss});
  }
  const bool pass = last <= kLearnRatio * first && worst_track <= kTrackRatio;
  return {pass, "val " + fmt("%.4g", first) + " -> " + fmt("%.4g", last) + " (ratio " + fmt("%.3f", last / first) +
                    ", want <= 0.5); worst val/train at swaps " + fmt("%.3f", worst_track) + " (want <= 2)"};
}

// --- 5: ablation orderings -----------------------------------------------------------------

Outcome ablation_orderings(const Context& ctx) {
  const std::vector<std::uint64_t> seeds{2024, 7};
  int holds = 0;
  std::ostringstream detail;
  for (auto seed : seeds) {
    TrainConfig tc = TrainConfig::desk();
    tc.seed = seed;
    std::map<AblationVariant, double> final_val;
    std::vector<AblationRun> runs;
    for (auto v : all_variants()) {
      runs.push_back(run_ablation(v, ArchSpec::desk(), GenConfig::desk(), tc));
      final_val[v] = runs.back().log.back().val_loss;
    }
    if (!ctx.work.empty()) write_ablation_tsv(ctx.work / ("ablation_seed" + std::to_string(seed) + ".tsv"), runs);
    const double base = final_val[AblationVariant::baseline];
    const double nc10 = final_val[AblationVariant::no_centro_10];
    const double nc20 = final_val[AblationVariant::no_centro_20];
    const double mid = final_val[AblationVariant::inner_mid];
    const double large = final_val[AblationVariant::inner_large];
    const bool ok = base < nc10 && base < nc20 && base < mid && mid < large;
    holds += ok;
    detail << "seed " << seed << (ok ? " ok" : " VIOLATED") << " [baseline " << fmt("%.4g", base) << ", no_centro_10 "
           << fmt("%.4g", nc10) << ", no_centro_20 " << fmt("%.4g", nc20) << ", inner_mid " << fmt("%.4g", mid)
           << ", inner_large " << fmt("%.4g", large) << "] ";
  }
  detail << "| orderings held on " << holds << "/" << seeds.size() << " seeds (want 2/2)";
  return {holds == static_cast<int>(seeds.size()), detail.str()};
}

// --- 6: separation oracle ------------------------------------------------------------------

constexpr int kSepCases = 20;
constexpr int kSepNeeded = 19;
constexpr int kDecoys = 10;
constexpr double kSepPosTol = 1e-6;
constexpr double kSepMse = 1e-9;

bool same_set(const AtomSet& a, const AtomSet& b, double tol) {
  if (a.size() != b.size()) return false;
  std::vector<bool> used(b.size(), false);
  for (const auto& p : a) {
    bool found = false;
    for (std::size_t j = 0; j < b.size() && !found; ++j)
      if (!used[j] && distance(p, b[j]) <= tol) found = used[j] = true;
    if (!found) return false;
  }
  return true;
}

Outcome separation_oracle(const Context&) {
  const GenConfig cfg = GenConfig::paper();
  int recovered = 0;
  double worst_ok_score = 0.0;
  for (int c = 0; c < kSepCases; ++c) {
    const TrainingExample ex = make_example(cfg, mix_seed(606, c));
    AtomSet pool = augment_with_mates(ex.truth, cfg.outer_dim);
    std::mt19937_64 rng(mix_seed(607, c));
    std::uniform_real_distribution<double> u(cfg.inner_lo(), cfg.inner_lo() + cfg.inner_dim);
    for (int i = 0; i < kDecoys; ++i) pool.push_back({u(rng), u(rng), u(rng)});

    SeparationConfig sc;
    sc.subset_size = cfg.n_atoms;
    sc.iterations = 5000;
    sc.mode = SearchMode::greedy;
    sc.seed = static_cast<std::uint64_t>(c);
    const SeparationResult r = separate(pool, ex.input, cfg, sc);
    const double mse = patterson_mse(patterson_input(rasterize(r.selected, cfg), cfg), ex.input);
    const bool match = same_set(r.selected, ex.truth, kSepPosTol) || same_set(r.selected, ex.truth_mates, kSepPosTol);
    if (match && mse <= kSepMse) {
      ++recovered;
      worst_ok_score = std::max(worst_ok_score, mse);
    }
  }
  return {recovered >= kSepNeeded, std::to_string(recovered) + "/" + std::to_string(kSepCases) +
                                       " recovered with 10 decoys (want >= 19); worst recovered MSE " +
                                       fmt("%.2e", worst_ok_score) + " (want <= 1e-9)"};
}

// --- 7: oracle pipeline accuracy -----------------------------------------------------------

constexpr int kPipelineCases = 100;
constexpr double kPipelineMeanPx = 0.35;
constexpr double kPipelineMatched = 0.95;

Outcome pipeline_accuracy(const Context& ctx) {
  const GenConfig cfg = GenConfig::paper();
  std::vector<TrainingExample> cases;
  for (int c = 0; c < kPipelineCases; ++c) cases.push_back(make_example(cfg, mix_seed(707, c)));
  EvalOptions opt;
  opt.oracle = true;
  opt.separation.subset_size = cfg.n_atoms;
  opt.separation.seed = 707;
  const AccuracyReport rep = evaluate_examples(cases, cfg, nullptr, opt);
  if (!ctx.work.empty()) {
    write_summary_json(ctx.work / "oracle_summary.json", rep);
    write_histogram_tsv(ctx.work / "oracle_histogram.tsv", rep);
  }
  const bool pass = rep.failed_cases == 0 && rep.mean_error_px <= kPipelineMeanPx && rep.matched_fraction() >= kPipelineMatched;
  return {pass, std::to_string(rep.cases) + " cases: mean error " + fmt("%.4f", rep.mean_error_px) +
                    " px (want <= 0.35), matched " + std::to_string(rep.atoms_matched) + "/" +
                    std::to_string(rep.atoms_total) + " = " + fmt("%.4f", rep.matched_fraction()) +
                    " (want >= 0.95), failed cases " + std::to_string(rep.failed_cases)};
}

// --- 8: determinism ------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Byte-compares every regular file under two trees. Returns the number compared, or -1 on mismatch.
long compare_trees(const fs::path& a, const fs::path& b, std::string& why) {
  long n = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) {
      why = rel.string();
      return -1;
    }
    ++n;
  }
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file() && !fs::exists(a / fs::relative(e.path(), b))) {
      why = fs::relative(e.path(), b).string();
      return -1;
    }
  return n;
}

Outcome determinism(const Context& ctx) {
  if (ctx.cli.empty()) return {false, "needs --cli PATH to the phasenet executable"};
  const fs::path root = (ctx.work.empty() ? fs::temp_directory_path() : ctx.work) / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);

  auto run = [&](const std::string& args) {
    const std::string cmd = "PHASENET_THREADS=1 \"" + ctx.cli.string() + "\" " + args + " >/dev/null 2>&1";
    return std::system(cmd.c_str()) == 0;
  };
  std::ostringstream detail;
  bool ok = true;
  for (int rep : {1, 2}) {
    const fs::path d = root / ("run" + std::to_string(rep));
    ok &= run("gen --preset desk --count 20 --seed 7 --out \"" + (d / "gen").string() + "\"");
    ok &= run("train --preset desk --seed 7 --epochs 2 --train-set-size 20 --val-set-size 10 --refresh-every-epochs 1 "
              "--out \"" + (d / "train").string() + "\"");
  }
  if (!ok) return {false, "a CLI invocation failed"};
  std::string why;
  const long gen = compare_trees(root / "run1" / "gen", root / "run2" / "gen", why);
  if (gen < 0) return {false, "gen output differs: " + why};
  const long tr = compare_trees(root / "run1" / "train", root / "run2" / "train", why);
  if (tr < 0) return {false, "train output differs: " + why};
  detail << "gen: " << gen << " files identical; train: " << tr << " files identical (two runs, seed 7, 1 thread)";
  fs::remove_all(root);
  return {gen > 0 && tr > 0, detail.str()};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome(const Context&)> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {1, "architecture exactness", architecture},
      {2, "Patterson invariant suite", patterson_invariants},
      {3, "gradient correctness", gradients},
      {4, "desk-scale learning", desk_learning},
      {5, "ablation orderings", ablation_orderings},
      {6, "separation oracle", separation_oracle},
      {7, "non-network pipeline accuracy", pipeline_accuracy},
      {8, "determinism", determinism},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--cli" && i + 1 < argc) ctx.cli = argv[++i];
    else if (a == "--work" && i + 1 < argc) ctx.work = argv[++i];
    else selected.push_back(std::atoi(a.c_str()));
  }
  if (selected.empty())
    for (const auto& c : criteria()) selected.push_back(c.id);
  if (!ctx.work.empty()) fs::create_directories(ctx.work);

  int failed = 0;
  for (int id : selected) {
    const auto it = std::find_if(criteria().begin(), criteria().end(), [&](const Criterion& c) { return c.id == id; });
    if (it == criteria().end()) {
      std::printf("FAIL %d unknown criterion\n", id);
      ++failed;
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, it->name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
