#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "phasenet/datagen.hpp"
#include "phasenet/model.hpp"
#include "phasenet/peaks.hpp"
#include "phasenet/separate.hpp"
#include "phasenet/train.hpp"

namespace phasenet {

void to_json(nlohmann::json& j, const Box3& b);
void from_json(const nlohmann::json& j, Box3& b);
void to_json(nlohmann::json& j, const GenConfig& c);
void from_json(const nlohmann::json& j, GenConfig& c);
void to_json(nlohmann::json& j, const LayerSpec& l);
void from_json(const nlohmann::json& j, LayerSpec& l);
void to_json(nlohmann::json& j, const ArchSpec& a);
void from_json(const nlohmann::json& j, ArchSpec& a);

// Everything a CLI invocation needs. Resolution order, lowest to highest:
// preset defaults, JSON config file, command-line flags.
struct RunConfig {
  std::string preset = "desk";
  ArchSpec arch = ArchSpec::desk();
  GenConfig gen = GenConfig::desk();
  TrainConfig train = TrainConfig::desk();
  PeakConfig peaks;
  SeparationConfig separation;
  std::uint64_t seed = 0;
  // subset_size follows n_atoms unless set explicitly.
  bool subset_size_explicit = false;

  // Resets every section to the named preset ("paper" or "desk").
  static RunConfig from_preset(const std::string& name);

  // Applies one flat key (e.g. "inner_dim"); throws ConfigError on unknown keys
  // or ill-typed values.
  void set(const std::string& key, const nlohmann::json& value);
  void apply(const nlohmann::json& flat);
  nlohmann::json to_flat_json() const;

  // Fills dependent defaults (subset size from atom count, normalization flag,
  // seeds) and validates every section.
  void finalize();
};

// Every flat key understood by RunConfig::set, in a stable order.
const std::vector<std::string>& run_config_keys();

nlohmann::json load_json_file(const std::filesystem::path& path);

}  // namespace phasenet
