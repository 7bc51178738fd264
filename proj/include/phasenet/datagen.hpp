#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "phasenet/grid.hpp"

namespace phasenet {

// Axis-aligned box in absolute pixel coordinates; a point p is inside when
// lo <= p < hi on every axis.
struct Box3 {
  Vec3 lo;
  Vec3 hi;
  bool contains(const Vec3& p) const {
    return p.x >= lo.x && p.x < hi.x && p.y >= lo.y && p.y < hi.y && p.z >= lo.z && p.z < hi.z;
  }
};

struct GenConfig {
  int outer_dim = 40;
  int inner_dim = 12;
  int n_atoms = 10;
  double atom_radius = 1.0;
  double min_separation = 2.0;
  double per_atom_scale = 0.5;
  int supersample = 8;
  std::optional<Box3> exclusion_region;

  // Divide each Patterson input by its origin value.
  bool normalize_input = true;
  // Target holds the centrosymmetric mates as well as the originals. Turning
  // this off reproduces the no-centrosymmetry ablation.
  bool centro_target = true;

  static GenConfig paper() { return {}; }
  static GenConfig desk();

  GridDims dims() const { return GridDims::cube(outer_dim); }
  Vec3 center() const { return box_center(outer_dim); }
  // Lower corner of the inner box.
  double inner_lo() const { return (outer_dim - inner_dim) / 2.0; }

  // Throws ConfigError on values no generator run could satisfy.
  void validate() const;
  // True when inner_dim*sqrt(3) exceeds outer_dim/2 by more than one voxel, i.e.
  // Patterson vector origins are no longer guaranteed to be unambiguous.
  bool uniqueness_violated() const;
};

using AtomSet = std::vector<Vec3>;

struct TrainingExample {
  ScalarField3D input;   // Patterson map of the originals (normalized per config)
  ScalarField3D target;  // originals + mates density
  AtomSet truth;
  AtomSet truth_mates;
  std::uint64_t seed = 0;
};

// SplitMix64 finalizer, used for all seed derivation.
std::uint64_t splitmix64(std::uint64_t x);
// Derive an independent stream seed for item `index` under `base`.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index);

AtomSet sample_atoms(const GenConfig& config, std::uint64_t seed);
// Same as above but drawing from a caller-owned engine.
AtomSet sample_atoms(const GenConfig& config, std::mt19937_64& rng);

AtomSet center_atoms(const AtomSet& atoms, int outer_dim);
AtomSet centro_mates(const AtomSet& atoms, int outer_dim);
Vec3 centroid(const AtomSet& atoms);

// Sparse per-atom rasterization: (voxel index, value) with value already scaled
// by per_atom_scale. Throws BoundaryViolation when the sphere reaches within one
// voxel of the outer face.
using Footprint = std::vector<std::pair<std::size_t, double>>;
Footprint atom_footprint(const Vec3& center, const GenConfig& config);

ScalarField3D rasterize(const AtomSet& atoms, const GenConfig& config);

// Normalized (or raw, per config) Patterson map used as network input.
ScalarField3D patterson_input(const ScalarField3D& density, const GenConfig& config);

TrainingExample make_example(const GenConfig& config, std::uint64_t seed);

// Fraction of voxels in the centered cube of edge `region_dim` with value > 0.
double nonzero_fraction(const ScalarField3D& field, int region_dim);

// ---------------------------------------------------------------------------
// On-disk datasets.

struct ManifestEntry {
  std::uint64_t seed = 0;
  std::string input;   // paths relative to the manifest's directory
  std::string target;
  std::string truth;
};

struct DatasetManifest {
  GenConfig config;
  std::uint64_t base_seed = 0;
  std::vector<ManifestEntry> entries;
  std::filesystem::path root;  // directory holding the manifest; not serialized
};

struct DatasetOptions {
  GridDtype dtype = GridDtype::f64;
  unsigned threads = 1;
};

// Writes `count` examples plus manifest.json into out_dir (count == 0 leaves a
// manifest with no entries). Example i uses seed mix_seed(base_seed, i).
DatasetManifest make_dataset(const GenConfig& config, std::size_t count, std::uint64_t base_seed,
                             const std::filesystem::path& out_dir, const DatasetOptions& opts = {});

DatasetManifest load_manifest(const std::filesystem::path& manifest_path);
TrainingExample load_example(const DatasetManifest& manifest, std::size_t index);

void write_truth_json(const std::filesystem::path& path, const AtomSet& atoms, const AtomSet& mates);
std::pair<AtomSet, AtomSet> read_truth_json(const std::filesystem::path& path);

}  // namespace phasenet
