#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "phasenet/datagen.hpp"
#include "phasenet/model.hpp"

namespace phasenet {

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int minibatch_size = 10;
  int train_set_size = 3000;
  int val_set_size = 100;
  int refresh_every_epochs = 3;
  int epochs = 0;
  std::uint64_t seed = 0;
  // Multiplies the reported loss and its gradient (the 10-atom ablation uses 2).
  double loss_scale = 1.0;
  // Seed bases for the two example streams; derived from `seed` when unset.
  std::optional<std::uint64_t> train_seed_base;
  std::optional<std::uint64_t> val_seed_base;
  // Reuse the first training set at every refresh instead of drawing new seeds.
  bool freeze_training_set = false;
  // Worker threads for minibatch gradients. 1 gives bit-exact reproducibility.
  unsigned threads = 1;

  static TrainConfig paper();
  static TrainConfig desk();

  void validate() const;
  AdamConfig adam() const { return {learning_rate, beta1, beta2, epsilon}; }
  std::uint64_t resolved_train_base() const;
  std::uint64_t resolved_val_base() const;
  std::uint64_t init_seed() const;
};

// One row per training-set refresh, plus a closing row after the last epoch.
// train_loss is measured on the freshly drawn set before any step is taken on it.
struct LogRow {
  int refresh_index = 0;
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  std::vector<LogRow> log;
  NetworkWeights weights;
  std::uint64_t steps = 0;
  std::vector<std::string> warnings;
};

struct TrainHooks {
  // Called after each log row is produced.
  std::function<void(const LogRow&)> on_log;
};

// Runs the refresh schedule. When out_dir is set, writes log.tsv,
// checkpoint_rNNNN.ppnw at each log row and final.ppnw.
TrainResult train(const ArchSpec& arch, const GenConfig& gen, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                  const TrainHooks& hooks = {});

// Warning text when the receptive field does not cover the input, else empty.
std::string receptive_field_warning(const ArchSpec& arch, const GridDims& input_dims);

ScalarField3D infer(const ArchSpec& arch, const NetworkWeights& weights, const ScalarField3D& patterson_input);

struct ExampleTensors {
  Tensor<float> input;
  Tensor<float> target;
};
std::vector<ExampleTensors> build_example_set(const GenConfig& gen, std::uint64_t seed_base, int count,
                                              unsigned threads = 1);

double evaluate_loss(const ArchSpec& arch, const NetworkWeights& weights,
                     const std::vector<ExampleTensors>& set, double loss_scale = 1.0);

void write_log_tsv(const std::filesystem::path& path, const std::vector<LogRow>& rows);
std::vector<LogRow> read_log_tsv(const std::filesystem::path& path);

}  // namespace phasenet
