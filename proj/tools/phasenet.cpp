// phasenet: Patterson map -> atomic coordinates pipeline.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "phasenet/config.hpp"
#include "phasenet/error.hpp"
#include "phasenet/eval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace phasenet;

namespace {

struct GlobalOptions {
  std::optional<std::string> preset;
  std::optional<std::string> config_path;
  std::map<std::string, std::string> flags;  // flat key -> raw text
  std::map<std::string, CLI::Option*> options;
};

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

// Flag text is read as JSON when it parses (numbers, booleans, arrays) and as a
// plain string otherwise, so `--mode anneal` and `--epochs 3` both work.
json flag_value(const std::string& text) {
  json v = json::parse(text, nullptr, false);
  return v.is_discarded() ? json(text) : v;
}

RunConfig resolve(const GlobalOptions& g) {
  json file;
  if (g.config_path) file = load_json_file(*g.config_path);
  if (!file.is_null() && !file.is_object()) throw ConfigError("config file must hold a JSON object");

  std::string preset = "desk";
  if (file.is_object() && file.contains("preset")) preset = file.at("preset").get<std::string>();
  if (g.preset) preset = *g.preset;

  RunConfig rc = RunConfig::from_preset(preset);
  if (file.is_object()) rc.apply(file);
  for (const auto& [key, opt] : g.options)
    if (opt->count() > 0) rc.set(key, flag_value(g.flags.at(key)));
  rc.finalize();
  return rc;
}

unsigned env_threads(unsigned fallback) {
  if (const char* s = std::getenv("PHASENET_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(s, &end, 10);
    if (end == s || *end != '\0' || v < 1) throw ConfigError("PHASENET_THREADS must be a positive integer");
    return static_cast<unsigned>(v);
  }
  return fallback;
}

unsigned default_threads() { return env_threads(std::max(1u, std::thread::hardware_concurrency())); }

void warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

void emit(const json& result) { std::cout << result.dump() << std::endl; }

void warn_uniqueness(const GenConfig& gen) {
  if (gen.uniqueness_violated()) {
    std::ostringstream msg;
    msg << "inner_dim " << gen.inner_dim << " x sqrt(3) = " << gen.inner_dim * std::sqrt(3.0)
        << " exceeds outer_dim/2 = " << gen.outer_dim / 2.0
        << "; Patterson vectors no longer have unique origins";
    warn(msg.str());
  }
}

// --- subcommands ---------------------------------------------------------------------

int cmd_gen(const RunConfig& rc, std::size_t count, const fs::path& out, const std::string& dtype) {
  warn_uniqueness(rc.gen);
  DatasetOptions opts;
  if (dtype == "f32") opts.dtype = GridDtype::f32;
  else if (dtype != "f64") throw ConfigError("--dtype must be f32 or f64");
  opts.threads = default_threads();
  const DatasetManifest m = make_dataset(rc.gen, count, rc.seed, out, opts);

  // Sparsity is sampled from the first examples written.
  const std::size_t sample = std::min<std::size_t>(m.entries.size(), 100);
  const int region = std::min(rc.gen.outer_dim, rc.gen.inner_dim + 2 * static_cast<int>(std::ceil(rc.gen.atom_radius)));
  double sparsity = 0.0;
  for (std::size_t i = 0; i < sample; ++i) sparsity += nonzero_fraction(read_pgrd(m.root / m.entries[i].target), region);
  emit({{"command", "gen"},
        {"manifest", (out / "manifest.json").string()},
        {"count", m.entries.size()},
        {"atoms_per_example", rc.gen.n_atoms},
        {"target_atoms_per_example", rc.gen.centro_target ? 2 * rc.gen.n_atoms : rc.gen.n_atoms},
        {"sparsity_region", region},
        {"mean_target_sparsity", sample ? sparsity / static_cast<double>(sample) : 0.0},
        {"uniqueness_violated", rc.gen.uniqueness_violated()}});
  return 0;
}

int cmd_train(RunConfig rc, const fs::path& out, bool parallel) {
  warn_uniqueness(rc.gen);
  rc.train.threads = 1;
  if (parallel) {
    rc.train.threads = default_threads();
    warn("--parallel-minibatch reduces gradients across threads; results are not bit-reproducible");
  }
  TrainHooks hooks;
  hooks.on_log = [](const LogRow& r) {
    std::fprintf(stderr, "refresh %d epoch %d train %.6g val %.6g\n", r.refresh_index, r.epoch, r.train_loss, r.val_loss);
  };
  const TrainResult r = train(rc.arch, rc.gen, rc.train, out, hooks);
  for (const auto& w : r.warnings) warn(w);
  std::ofstream(out / "config.json") << rc.to_flat_json().dump(2) << '\n';
  const LogRow& first = r.log.front();
  const LogRow& last = r.log.back();
  emit({{"command", "train"},
        {"checkpoint", (out / "final.ppnw").string()},
        {"log", (out / "log.tsv").string()},
        {"steps", r.steps},
        {"rows", r.log.size()},
        {"initial_val_loss", first.val_loss},
        {"final_val_loss", last.val_loss},
        {"final_train_loss", last.train_loss},
        {"param_count", param_count(rc.arch)}});
  return 0;
}

int cmd_infer(const fs::path& weights, const fs::path& input, const fs::path& out) {
  const Checkpoint ck = read_checkpoint(weights);
  const ScalarField3D in = read_pgrd(input);
  if (auto w = receptive_field_warning(ck.arch, in.dims()); !w.empty()) warn(w);
  const ScalarField3D map = infer(ck.arch, ck.weights, in);
  write_pgrd(out, map);
  std::size_t shown = 0;
  const double top = max_value(map);
  for (double v : map.data()) shown += v >= 0.1 && top > 0.0;
  emit({{"command", "infer"},
        {"output", out.string()},
        {"dims", {map.dims().nx, map.dims().ny, map.dims().nz}},
        {"max", top},
        {"display_threshold", 0.1},
        {"voxels_above_threshold", shown}});
  return 0;
}

int cmd_peaks(const RunConfig& rc, const fs::path& map_path, const fs::path& out) {
  const auto peaks = find_peaks(read_pgrd(map_path), rc.peaks);
  write_peaks_json(out, peaks);
  emit({{"command", "peaks"}, {"output", out.string()}, {"peaks", peaks.size()}});
  return 0;
}

int cmd_separate(const RunConfig& rc, const fs::path& peaks_path, const fs::path& patterson_path,
                 const fs::path& out, const std::optional<fs::path>& trace_path) {
  const auto peaks = read_peaks_json(peaks_path);
  const ScalarField3D truth = read_pgrd(patterson_path);
  if (!(truth.dims() == rc.gen.dims()))
    throw ConfigError("Patterson map dims do not match outer_dim " + std::to_string(rc.gen.outer_dim));
  const AtomSet pool = augment_with_mates(peak_positions(peaks), rc.gen.outer_dim);
  const SeparationResult r = separate(pool, truth, rc.gen, rc.separation);
  write_atoms_json(out, r.selected, r.score);
  const fs::path trace = trace_path.value_or(fs::path(out).replace_extension(".trace.tsv"));
  write_trace_tsv(trace, r.trace);
  emit({{"command", "separate"},
        {"output", out.string()},
        {"trace", trace.string()},
        {"pool", pool.size()},
        {"selected", r.selected.size()},
        {"score", r.score},
        {"accepted", r.accepted}});
  return 0;
}

int cmd_eval(RunConfig rc, const fs::path& manifest_path, const std::optional<fs::path>& weights, bool oracle,
             const fs::path& out) {
  const DatasetManifest m = load_manifest(manifest_path);
  if (!rc.subset_size_explicit) rc.separation.subset_size = m.config.n_atoms;
  rc.separation.normalize_patterson = m.config.normalize_input;

  EvalOptions opt;
  opt.peaks = rc.peaks;
  opt.separation = rc.separation;
  opt.oracle = oracle;
  opt.threads = default_threads();
  std::optional<Network> net;
  if (!oracle) {
    if (!weights) throw ConfigError("eval needs --weights unless --oracle is given");
    Checkpoint ck = read_checkpoint(*weights);
    net = Network{std::move(ck.arch), std::move(ck.weights)};
  }
  const AccuracyReport rep = evaluate_corpus(m, net ? &*net : nullptr, opt);
  for (const auto& c : rep.per_case)
    if (!c.ok) warn("case " + std::to_string(c.index) + " failed: " + c.error);

  fs::create_directories(out);
  write_summary_json(out / "summary.json", rep);
  write_histogram_tsv(out / "histogram.tsv", rep);
  emit({{"command", "eval"},
        {"summary", (out / "summary.json").string()},
        {"histogram", (out / "histogram.tsv").string()},
        {"cases", rep.cases},
        {"failed_cases", rep.failed_cases},
        {"atoms_total", rep.atoms_total},
        {"atoms_matched", rep.atoms_matched},
        {"mean_error_px", rep.mean_error_px},
        {"flipped_fraction", rep.flipped_fraction}});
  return 0;
}

int cmd_ablate(const RunConfig& rc, const std::vector<std::string>& names, const fs::path& out) {
  std::vector<AblationVariant> variants;
  if (names.empty()) variants = all_variants();
  for (const auto& n : names) variants.push_back(parse_variant(n));
  fs::create_directories(out);

  std::vector<AblationRun> runs;
  json finals = json::object();
  for (auto v : variants) {
    const VariantSetup s = variant_setup(v, rc.gen, rc.train);
    warn_uniqueness(s.gen);
    TrainHooks hooks;
    const std::string name = to_string(v);
    hooks.on_log = [&name](const LogRow& r) {
      std::fprintf(stderr, "%s refresh %d epoch %d val %.6g\n", name.c_str(), r.refresh_index, r.epoch, r.val_loss);
    };
    runs.push_back(run_ablation(v, rc.arch, rc.gen, rc.train, hooks));
    write_log_tsv(out / (name + ".log.tsv"), runs.back().log);
    finals[name] = runs.back().log.back().val_loss;
    write_ablation_tsv(out / "ablation.tsv", runs);
  }
  emit({{"command", "ablate"}, {"output", (out / "ablation.tsv").string()}, {"final_val_loss", finals}});
  return 0;
}

json tensor_stats(const std::vector<TensorInfo>& infos) {
  json arr = json::array();
  for (const auto& t : infos)
    arr.push_back({{"name", t.name}, {"shape", t.shape}, {"count", t.count}, {"min", t.min},
                   {"max", t.max}, {"mean", t.mean}, {"std", t.stddev}});
  return arr;
}

int cmd_inspect(const RunConfig& rc, const std::optional<fs::path>& path) {
  if (!path) {
    emit({{"command", "inspect"},
          {"arch", rc.arch.name},
          {"param_count", param_count(rc.arch)},
          {"receptive_field", receptive_field(rc.arch)},
          {"config", rc.to_flat_json()}});
    return 0;
  }
  std::ifstream in(*path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path->string());
  char magic[4] = {};
  in.read(magic, 4);
  in.seekg(0);
  const std::string m(magic, 4);
  if (m == "PGRD") {
    const PgrdHeader h = read_pgrd_header(in);
    in.seekg(0);
    const ScalarField3D f = read_pgrd(in);
    double lo = f.size() ? f[0] : 0.0, hi = lo, sum = 0.0;
    for (double v : f.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
    }
    emit({{"command", "inspect"},
          {"format", "PGRD"},
          {"version", h.version},
          {"dims", {h.dims.nx, h.dims.ny, h.dims.nz}},
          {"dtype", h.dtype == GridDtype::f32 ? "f32" : "f64"},
          {"min", lo},
          {"max", hi},
          {"mean", f.size() ? sum / static_cast<double>(f.size()) : 0.0}});
    return 0;
  }
  if (m == "PPNW") {
    const Checkpoint ck = read_checkpoint(in);
    emit({{"command", "inspect"},
          {"format", "PPNW"},
          {"arch", ck.arch.name},
          {"step", ck.step},
          {"param_count", param_count(ck.arch)},
          {"receptive_field", receptive_field(ck.arch)},
          {"tensors", tensor_stats(describe(ck.weights))}});
    return 0;
  }
  throw IoError(path->string() + " is neither a PGRD grid nor a PPNW checkpoint");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patterson map to atomic coordinates pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--preset", g.preset, "Preset defaults: desk or paper");
  app.add_option("--config", g.config_path, "JSON file of flat config keys");
  for (const auto& key : run_config_keys()) g.options[key] = app.add_option(flag_name(key), g.flags[key]);

  std::size_t count = 0;
  std::string out, dtype = "f64", weights_path, input_path, map_path, peaks_path, patterson_path, manifest_path;
  std::optional<std::string> trace_path, inspect_path, eval_weights;
  bool parallel = false, oracle = false;
  std::vector<std::string> variants;

  auto* gen = app.add_subcommand("gen", "Generate a dataset of examples");
  gen->add_option("--count", count)->required();
  gen->add_option("--out", out)->required();
  gen->add_option("--dtype", dtype, "f32 or f64 grid values");

  auto* tr = app.add_subcommand("train", "Train a network");
  tr->add_option("--out", out)->required();
  tr->add_flag("--parallel-minibatch", parallel, "Spread each minibatch over PHASENET_THREADS threads");

  auto* inf = app.add_subcommand("infer", "Run a trained network on a Patterson map");
  inf->add_option("--weights", weights_path)->required();
  inf->add_option("--input", input_path)->required();
  inf->add_option("--out", out)->required();

  auto* pk = app.add_subcommand("peaks", "Pick peaks from a density map");
  pk->add_option("--map", map_path)->required();
  pk->add_option("--out", out)->required();

  auto* sep = app.add_subcommand("separate", "Select the atom subset that explains a Patterson map");
  sep->add_option("--peaks", peaks_path)->required();
  sep->add_option("--patterson", patterson_path)->required();
  sep->add_option("--out", out)->required();
  sep->add_option("--trace", trace_path);

  auto* ev = app.add_subcommand("eval", "Positional accuracy over a dataset");
  ev->add_option("--manifest", manifest_path)->required();
  ev->add_option("--weights", eval_weights);
  ev->add_flag("--oracle", oracle, "Pick peaks from the target maps instead of running the network");
  ev->add_option("--out", out)->required();

  auto* ab = app.add_subcommand("ablate", "Train the ablation variants and collect validation curves");
  ab->add_option("--variants", variants, "Subset of baseline,no_centro_10,no_centro_20,inner_mid,inner_large")
      ->delimiter(',');
  ab->add_option("--out", out)->required();

  auto* ins = app.add_subcommand("inspect", "Describe a PGRD grid, a PPNW checkpoint, or the resolved preset");
  ins->add_option("file", inspect_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  try {
    const RunConfig rc = resolve(g);
    if (*gen) return cmd_gen(rc, count, out, dtype);
    if (*tr) return cmd_train(rc, out, parallel);
    if (*inf) return cmd_infer(weights_path, input_path, out);
    if (*pk) return cmd_peaks(rc, map_path, out);
    if (*sep) return cmd_separate(rc, peaks_path, patterson_path, out, trace_path ? std::optional<fs::path>(*trace_path) : std::nullopt);
    if (*ev) return cmd_eval(rc, manifest_path, eval_weights ? std::optional<fs::path>(*eval_weights) : std::nullopt, oracle, out);
    if (*ab) return cmd_ablate(rc, variants, out);
    if (*ins) return cmd_inspect(rc, inspect_path ? std::optional<fs::path>(*inspect_path) : std::nullopt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::io);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::usage);
  }
  return static_cast<int>(ErrorKind::usage);
}
