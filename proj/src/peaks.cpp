#include "phasenet/peaks.hpp"

#include <algorithm>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "phasenet/error.hpp"

namespace phasenet {

void PeakConfig::validate() const {
  if (!(threshold_fraction > 0.0 && threshold_fraction < 1.0))
    throw ConfigError("threshold_fraction must lie in (0, 1)");
  if (max_peaks < 1) throw ConfigError("max_peaks must be >= 1");
}

namespace {

template <typename Fn>
void for_each_neighbor(const GridDims& d, int i, int j, int k, Fn&& fn) {
  for (int dk = -1; dk <= 1; ++dk) {
    const int z = k + dk;
    if (z < 0 || z >= d.nz) continue;
    for (int dj = -1; dj <= 1; ++dj) {
      const int y = j + dj;
      if (y < 0 || y >= d.ny) continue;
      for (int di = -1; di <= 1; ++di) {
        const int x = i + di;
        if (x < 0 || x >= d.nx || (di == 0 && dj == 0 && dk == 0)) continue;
        fn(x, y, z);
      }
    }
  }
}

}  // namespace

std::vector<Peak> find_peaks(const ScalarField3D& map, const PeakConfig& config) {
  config.validate();
  const GridDims& d = map.dims();
  ScalarField3D clipped(d);
  for (std::size_t i = 0; i < map.size(); ++i) clipped[i] = std::max(0.0, map[i]);
  const double top = max_value(clipped);
  if (!(top > 0.0)) throw NumericError("peak search on an empty map (max <= 0)");
  const double floor_value = config.threshold_fraction * top;

  // 0 = unvisited, 1 = resolved as part of an examined plateau.
  std::vector<std::uint8_t> visited(map.size(), 0);
  std::vector<std::size_t> maxima;
  std::vector<std::size_t> plateau, stack;

  for (std::size_t idx = 0; idx < clipped.size(); ++idx) {
    const double v = clipped[idx];
    if (v < floor_value || visited[idx]) continue;
    const auto [i, j, k] = clipped.coords(idx);
    bool higher = false, equal = false;
    for_each_neighbor(d, i, j, k, [&](int x, int y, int z) {
      const double n = clipped(x, y, z);
      higher |= n > v;
      equal |= n == v;
    });
    if (higher) continue;
    if (!equal) {
      maxima.push_back(idx);
      continue;
    }
    // Flood the plateau; it is a maximum if nothing around it is higher. Its
    // lowest index represents it, and that is where the scan reaches it first.
    plateau.clear();
    stack.assign(1, idx);
    visited[idx] = 1;
    bool is_max = true;
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      plateau.push_back(cur);
      const auto [ci, cj, ck] = clipped.coords(cur);
      for_each_neighbor(d, ci, cj, ck, [&](int x, int y, int z) {
        const std::size_t n = clipped.index(x, y, z);
        if (clipped[n] > v) is_max = false;
        if (clipped[n] == v && !visited[n]) {
          visited[n] = 1;
          stack.push_back(n);
        }
      });
    }
    if (is_max) maxima.push_back(*std::min_element(plateau.begin(), plateau.end()));
  }

  std::vector<std::pair<Peak, std::size_t>> found;
  found.reserve(maxima.size());
  for (std::size_t idx : maxima) {
    const auto [i, j, k] = clipped.coords(idx);
    double w = clipped[idx];
    Vec3 acc = Vec3{i + 0.5, j + 0.5, k + 0.5} * w;
    for_each_neighbor(d, i, j, k, [&](int x, int y, int z) {
      const double n = clipped(x, y, z);
      w += n;
      acc += Vec3{x + 0.5, y + 0.5, z + 0.5} * n;
    });
    found.push_back({Peak{acc * (1.0 / w), w}, idx});
  }
  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) {
    if (a.first.strength != b.first.strength) return a.first.strength > b.first.strength;
    return a.second < b.second;
  });
  if (found.size() > static_cast<std::size_t>(config.max_peaks)) found.resize(static_cast<std::size_t>(config.max_peaks));

  std::vector<Peak> peaks;
  peaks.reserve(found.size());
  for (auto& f : found) peaks.push_back(f.first);
  return peaks;
}

AtomSet peak_positions(const std::vector<Peak>& peaks) {
  AtomSet out;
  out.reserve(peaks.size());
  for (const auto& p : peaks) out.push_back(p.pos);
  return out;
}

void write_peaks_json(const std::filesystem::path& path, const std::vector<Peak>& peaks) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : peaks) arr.push_back({{"pos", {p.pos.x, p.pos.y, p.pos.z}}, {"strength", p.strength}});
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << arr.dump(2) << '\n';
}

std::vector<Peak> read_peaks_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Peak> peaks;
  try {
    for (const auto& p : nlohmann::json::parse(in)) {
      const auto& pos = p.at("pos");
      peaks.push_back({{pos.at(0).get<double>(), pos.at(1).get<double>(), pos.at(2).get<double>()},
                       p.value("strength", 0.0)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed peaks JSON " + path.string() + ": " + e.what());
  }
  return peaks;
}

}  // namespace phasenet
