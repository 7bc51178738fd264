#include "phasenet/datagen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "phasenet/config.hpp"
#include "phasenet/error.hpp"

namespace phasenet {

using nlohmann::json;

namespace {
constexpr int kRetriesPerAtom = 10'000;
// Attempts at drawing a whole set whose centered positions and mates all clear
// the outer boundary. Only large inner boxes ever need more than one.
constexpr int kSetAttempts = 1'000;
}  // namespace

GenConfig GenConfig::desk() {
  GenConfig c;
  c.outer_dim = 20;
  c.inner_dim = 6;
  c.n_atoms = 4;
  return c;
}

void GenConfig::validate() const {
  if (outer_dim < 4) throw ConfigError("outer_dim must be >= 4");
  if (inner_dim < 1 || inner_dim > outer_dim) throw ConfigError("inner_dim must be in [1, outer_dim]");
  if (n_atoms < 0) throw ConfigError("n_atoms must be >= 0");
  if (!(atom_radius > 0.0)) throw ConfigError("atom_radius must be > 0");
  if (!(min_separation >= 0.0)) throw ConfigError("min_separation must be >= 0");
  if (!(per_atom_scale > 0.0) || per_atom_scale * 2.0 > 1.0)
    throw ConfigError("per_atom_scale must be in (0, 0.5] so two clashing atoms stay <= 1");
  if (supersample < 1) throw ConfigError("supersample must be >= 1");
  if (exclusion_region) {
    const Box3& b = *exclusion_region;
    if (!(b.lo.x < b.hi.x && b.lo.y < b.hi.y && b.lo.z < b.hi.z))
      throw ConfigError("exclusion_region must have lo < hi on every axis");
  }
  // Disjoint balls of radius s/2 centered in the inner box all fit inside the
  // box grown by s/2 per side.
  if (n_atoms > 1 && min_separation > 0.0) {
    const double s = min_separation;
    const double ball = 4.0 / 3.0 * std::numbers::pi * std::pow(s / 2.0, 3);
    if (n_atoms * ball > std::pow(inner_dim + s, 3))
      throw ConfigError("inner box cannot hold n_atoms at min_separation");
  }
}

bool GenConfig::uniqueness_violated() const {
  return inner_dim * std::sqrt(3.0) > outer_dim / 2.0 + 1.0;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) ^ (index * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
}

AtomSet sample_atoms(const GenConfig& config, std::mt19937_64& rng) {
  config.validate();
  const double lo = config.inner_lo();
  std::uniform_real_distribution<double> coord(lo, lo + config.inner_dim);
  const double min_d2 = config.min_separation * config.min_separation;

  AtomSet atoms;
  atoms.reserve(static_cast<std::size_t>(config.n_atoms));
  for (int a = 0; a < config.n_atoms; ++a) {
    bool placed = false;
    for (int attempt = 0; attempt < kRetriesPerAtom && !placed; ++attempt) {
      const double x = coord(rng);
      const double y = coord(rng);
      const double z = coord(rng);
      const Vec3 p{x, y, z};
      if (config.exclusion_region && config.exclusion_region->contains(p)) continue;
      const bool clear = std::all_of(atoms.begin(), atoms.end(),
                                     [&](const Vec3& q) { return (p - q).norm2() >= min_d2; });
      if (clear) {
        atoms.push_back(p);
        placed = true;
      }
    }
    if (!placed) {
      std::ostringstream msg;
      msg << "could not place atom " << a + 1 << " of " << config.n_atoms << " after "
          << kRetriesPerAtom << " attempts (config too dense)";
      throw PlacementExhausted(msg.str());
    }
  }
  return atoms;
}

AtomSet sample_atoms(const GenConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_atoms(config, rng);
}

Vec3 centroid(const AtomSet& atoms) {
  Vec3 c;
  for (const auto& p : atoms) c += p;
  if (!atoms.empty()) c *= 1.0 / static_cast<double>(atoms.size());
  return c;
}

AtomSet center_atoms(const AtomSet& atoms, int outer_dim) {
  if (atoms.empty()) throw ConfigError("center_atoms needs a non-empty set");
  const Vec3 shift = box_center(outer_dim) - centroid(atoms);
  AtomSet out(atoms);
  for (auto& p : out) p += shift;
  return out;
}

AtomSet centro_mates(const AtomSet& atoms, int outer_dim) {
  const Vec3 c2 = 2.0 * box_center(outer_dim);
  AtomSet out;
  out.reserve(atoms.size());
  for (const auto& p : atoms) out.push_back(c2 - p);
  return out;
}

namespace {

void check_boundary(const Vec3& c, const GenConfig& config) {
  const double margin = config.atom_radius + 1.0;
  const double hi = config.outer_dim - margin;
  for (double v : {c.x, c.y, c.z}) {
    if (!std::isfinite(v) || v < margin || v > hi) {
      std::ostringstream msg;
      msg << "atom at (" << c.x << ", " << c.y << ", " << c.z << ") lies within "
          << margin << " px of the outer boundary";
      throw BoundaryViolation(msg.str());
    }
  }
}

bool clears_boundary(const AtomSet& atoms, const GenConfig& config) {
  const double margin = config.atom_radius + 1.0;
  const double hi = config.outer_dim - margin;
  return std::all_of(atoms.begin(), atoms.end(), [&](const Vec3& p) {
    return p.x >= margin && p.x <= hi && p.y >= margin && p.y <= hi && p.z >= margin && p.z <= hi;
  });
}

}  // namespace

Footprint atom_footprint(const Vec3& c, const GenConfig& config) {
  check_boundary(c, config);
  const GridDims dims = config.dims();
  const double r = config.atom_radius;
  const double r2 = r * r;
  const int s = config.supersample;
  const double step = 1.0 / s;
  const double weight = config.per_atom_scale / (static_cast<double>(s) * s * s);

  const int i0 = static_cast<int>(std::floor(c.x - r)), i1 = static_cast<int>(std::floor(c.x + r));
  const int j0 = static_cast<int>(std::floor(c.y - r)), j1 = static_cast<int>(std::floor(c.y + r));
  const int k0 = static_cast<int>(std::floor(c.z - r)), k1 = static_cast<int>(std::floor(c.z + r));

  // Squared offsets of subcell centers along one axis, per voxel.
  auto offsets = [&](int v0, int v1, double center) {
    std::vector<double> d2(static_cast<std::size_t>(v1 - v0 + 1) * s);
    for (int v = v0; v <= v1; ++v)
      for (int t = 0; t < s; ++t) {
        const double d = v + (t + 0.5) * step - center;
        d2[static_cast<std::size_t>(v - v0) * s + t] = d * d;
      }
    return d2;
  };
  const auto dx = offsets(i0, i1, c.x);
  const auto dy = offsets(j0, j1, c.y);
  const auto dz = offsets(k0, k1, c.z);

  Footprint fp;
  for (int k = k0; k <= k1; ++k)
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i) {
        long count = 0;
        for (int tz = 0; tz < s; ++tz) {
          const double z2 = dz[static_cast<std::size_t>(k - k0) * s + tz];
          if (z2 > r2) continue;
          for (int ty = 0; ty < s; ++ty) {
            const double yz2 = z2 + dy[static_cast<std::size_t>(j - j0) * s + ty];
            if (yz2 > r2) continue;
            const double* row = &dx[static_cast<std::size_t>(i - i0) * s];
            for (int tx = 0; tx < s; ++tx) count += (yz2 + row[tx] <= r2);
          }
        }
        if (count > 0) {
          const std::size_t idx = (static_cast<std::size_t>(k) * dims.ny + j) * dims.nx + i;
          fp.emplace_back(idx, weight * static_cast<double>(count));
        }
      }
  return fp;
}

ScalarField3D rasterize(const AtomSet& atoms, const GenConfig& config) {
  ScalarField3D field(config.dims());
  for (const auto& p : atoms)
    for (const auto& [idx, v] : atom_footprint(p, config)) field[idx] += v;
  return field;
}

ScalarField3D patterson_input(const ScalarField3D& density, const GenConfig& config) {
  ScalarField3D p = patterson(density);
  if (config.normalize_input) {
    const double origin = p[0];
    if (origin > 0.0)
      for (auto& v : p.data()) v /= origin;
  }
  return p;
}

TrainingExample make_example(const GenConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  TrainingExample ex;
  ex.seed = seed;
  int attempt = 0;
  for (;; ++attempt) {
    if (attempt == kSetAttempts)
      throw BoundaryViolation("no atom set cleared the outer boundary after centering; inner box too large");
    AtomSet raw = sample_atoms(config, rng);
    if (raw.empty()) break;
    ex.truth = center_atoms(raw, config.outer_dim);
    ex.truth_mates = centro_mates(ex.truth, config.outer_dim);
    if (clears_boundary(ex.truth, config) && clears_boundary(ex.truth_mates, config)) break;
  }
  const ScalarField3D density = rasterize(ex.truth, config);
  ex.input = patterson_input(density, config);
  ex.target = density;
  if (config.centro_target)
    for (const auto& p : ex.truth_mates)
      for (const auto& [idx, v] : atom_footprint(p, config)) ex.target[idx] += v;
  return ex;
}

double nonzero_fraction(const ScalarField3D& field, int region_dim) {
  const GridDims& d = field.dims();
  auto range = [&](int n) {
    const int lo = std::max(0, (n - region_dim) / 2);
    return std::pair{lo, std::min(n, lo + region_dim)};
  };
  const auto [x0, x1] = range(d.nx);
  const auto [y0, y1] = range(d.ny);
  const auto [z0, z1] = range(d.nz);
  std::size_t nonzero = 0, total = 0;
  for (int k = z0; k < z1; ++k)
    for (int j = y0; j < y1; ++j)
      for (int i = x0; i < x1; ++i) {
        ++total;
        nonzero += field(i, j, k) > 0.0;
      }
  return total ? static_cast<double>(nonzero) / static_cast<double>(total) : 0.0;
}

// --- datasets -----------------------------------------------------------------

namespace {

json atoms_json(const AtomSet& atoms) {
  json arr = json::array();
  for (const auto& p : atoms) arr.push_back({p.x, p.y, p.z});
  return arr;
}

AtomSet atoms_from_json(const json& arr) {
  AtomSet out;
  for (const auto& p : arr) out.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
  return out;
}

std::string example_stem(std::size_t i) {
  std::ostringstream s;
  s << "ex_" << std::setw(6) << std::setfill('0') << i;
  return s.str();
}

}  // namespace

void write_truth_json(const std::filesystem::path& path, const AtomSet& atoms, const AtomSet& mates) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const json j{{"atoms", atoms_json(atoms)}, {"mates", atoms_json(mates)}};
  out << j.dump() << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::pair<AtomSet, AtomSet> read_truth_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    const json j = json::parse(in);
    return {atoms_from_json(j.at("atoms")), atoms_from_json(j.value("mates", json::array()))};
  } catch (const json::exception& e) {
    throw IoError("malformed truth JSON " + path.string() + ": " + e.what());
  }
}

DatasetManifest make_dataset(const GenConfig& config, std::size_t count, std::uint64_t base_seed,
                             const std::filesystem::path& out_dir, const DatasetOptions& opts) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.config = config;
  manifest.base_seed = base_seed;
  manifest.root = out_dir;
  manifest.entries.resize(count);

  auto build = [&](std::size_t i) {
    const std::uint64_t seed = mix_seed(base_seed, i);
    const TrainingExample ex = make_example(config, seed);
    const std::string stem = example_stem(i);
    ManifestEntry e{seed, stem + "_input.pgrd", stem + "_target.pgrd", stem + "_truth.json"};
    write_pgrd(out_dir / e.input, ex.input, opts.dtype);
    write_pgrd(out_dir / e.target, ex.target, opts.dtype);
    write_truth_json(out_dir / e.truth, ex.truth, ex.truth_mates);
    manifest.entries[i] = std::move(e);
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(opts.threads, static_cast<unsigned>(count)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) build(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < count;) {
          try {
            build(i);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  json entries = json::array();
  for (const auto& e : manifest.entries)
    entries.push_back({{"seed", e.seed}, {"input", e.input}, {"target", e.target}, {"truth", e.truth}});
  const json j{{"version", 1}, {"base_seed", base_seed}, {"config", config}, {"examples", entries}};
  std::ofstream out(out_dir / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + out_dir.string());
  out << j.dump(2) << '\n';
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path.string());
  DatasetManifest m;
  m.root = manifest_path.parent_path();
  try {
    const json j = json::parse(in);
    if (j.value("version", 0) != 1) throw IoError("unsupported manifest version");
    m.config = j.at("config").get<GenConfig>();
    m.base_seed = j.at("base_seed").get<std::uint64_t>();
    for (const auto& e : j.at("examples"))
      m.entries.push_back({e.at("seed").get<std::uint64_t>(), e.at("input").get<std::string>(),
                           e.at("target").get<std::string>(), e.at("truth").get<std::string>()});
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  return m;
}

TrainingExample load_example(const DatasetManifest& manifest, std::size_t index) {
  const ManifestEntry& e = manifest.entries.at(index);
  TrainingExample ex;
  ex.seed = e.seed;
  ex.input = read_pgrd(manifest.root / e.input);
  ex.target = read_pgrd(manifest.root / e.target);
  std::tie(ex.truth, ex.truth_mates) = read_truth_json(manifest.root / e.truth);
  return ex;
}

}  // namespace phasenet
