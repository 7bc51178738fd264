#pragma once

#include <filesystem>
#include <vector>

#include "phasenet/datagen.hpp"
#include "phasenet/grid.hpp"

namespace phasenet {

struct PeakConfig {
  double threshold_fraction = 0.10;  // of the map maximum
  int max_peaks = 40;

  void validate() const;
};

struct Peak {
  Vec3 pos;
  double strength = 0.0;  // summed density over the 3x3x3 neighborhood
};

// Local maxima over the 26-neighborhood (negative values clipped to zero), each
// refined to the density-weighted centroid of its 3x3x3 neighborhood. Plateaus
// yield one peak at their lexicographically first voxel. Sorted by strength,
// strongest first. Throws NumericError when the clipped map is all zero.
std::vector<Peak> find_peaks(const ScalarField3D& map, const PeakConfig& config);

AtomSet peak_positions(const std::vector<Peak>& peaks);

void write_peaks_json(const std::filesystem::path& path, const std::vector<Peak>& peaks);
std::vector<Peak> read_peaks_json(const std::filesystem::path& path);

}  // namespace phasenet
