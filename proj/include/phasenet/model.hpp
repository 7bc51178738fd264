#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "phasenet/grid.hpp"

namespace phasenet {

enum class LayerKind { conv3d, maxpool2, upsample2 };
enum class Activation { none, relu, tanh };

struct LayerSpec {
  LayerKind kind = LayerKind::conv3d;
  int in_channels = 0;
  int out_channels = 0;
  int kernel_size = 0;  // odd; "same" zero padding
  Activation activation = Activation::none;

  static LayerSpec conv(int in, int out, int k, Activation act) {
    return {LayerKind::conv3d, in, out, k, act};
  }
  static LayerSpec maxpool() { return {LayerKind::maxpool2, 0, 0, 0, Activation::none}; }
  static LayerSpec upsample() { return {LayerKind::upsample2, 0, 0, 0, Activation::none}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ArchSpec {
  std::string name;
  std::vector<LayerSpec> layers;

  // 40^3 reference network: conv5 x2 | pool | conv7 x8 | upsample | conv5 | conv5 -> tanh.
  static ArchSpec paper();
  // Reduced network for CPU runs: 8 channels, conv7 x4 in the pooled stage.
  static ArchSpec desk();
  static ArchSpec preset(const std::string& name);

  // Throws ConfigError when the channel chain or kernel sizes are inconsistent.
  void validate() const;
  // Input spatial dims must be divisible by this (2^pool depth).
  int spatial_divisor() const;
  std::size_t conv_count() const;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

std::size_t param_count(const ArchSpec& arch);
// One-sided reach in input voxels: sum over convs of (k-1)/2 times the
// downsampling factor in effect at that layer.
int receptive_field(const ArchSpec& arch);

// Channel-major activations; each channel is an x-fastest volume.
template <typename T>
struct Tensor {
  int channels = 0;
  GridDims dims{};
  std::vector<T> values;

  Tensor() = default;
  Tensor(int c, GridDims d) : channels(c), dims(d), values(static_cast<std::size_t>(c) * d.voxels(), T{}) {}

  std::size_t volume() const { return static_cast<std::size_t>(dims.nx) * dims.ny * dims.nz; }
  T* channel(int c) { return values.data() + static_cast<std::size_t>(c) * volume(); }
  const T* channel(int c) const { return values.data() + static_cast<std::size_t>(c) * volume(); }
};

template <typename T>
struct ConvParams {
  int out_channels = 0;
  int in_channels = 0;
  int kernel_size = 0;
  std::vector<T> kernel;  // [out][in][kz][ky][kx]
  std::vector<T> bias;    // [out]

  ConvParams() = default;
  ConvParams(int out, int in, int k)
      : out_channels(out), in_channels(in), kernel_size(k),
        kernel(static_cast<std::size_t>(out) * in * k * k * k, T{}), bias(static_cast<std::size_t>(out), T{}) {}

  std::size_t fan_in() const { return static_cast<std::size_t>(in_channels) * kernel_size * kernel_size * kernel_size; }
};

// One ConvParams per conv layer, in layer order.
template <typename T>
struct Weights {
  std::vector<ConvParams<T>> convs;

  std::size_t size() const;
  void fill(T value);
  // this += scale * other
  void add_scaled(const Weights& other, T scale);
  template <typename U>
  Weights<U> cast() const;
};

using NetworkWeights = Weights<float>;

template <typename T>
Weights<T> zero_weights(const ArchSpec& arch);

// He-normal kernels (std = sqrt(2 / fan_in)), zero biases.
template <typename T>
Weights<T> init_weights(const ArchSpec& arch, std::uint64_t seed);

// --- layer primitives --------------------------------------------------------

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const ConvParams<T>& params, Activation act);
template <typename T>
Tensor<T> maxpool2_forward(const Tensor<T>& input);
template <typename T>
Tensor<T> upsample2_forward(const Tensor<T>& input);

// --- whole network -------------------------------------------------------------

template <typename T>
Tensor<T> forward(const ArchSpec& arch, const Weights<T>& weights, const Tensor<T>& input);

template <typename T>
struct LossAndGrad {
  double loss = 0.0;
  Weights<T> grad;
};

// loss = loss_scale * mean((output - target)^2); gradients via reverse mode.
template <typename T>
LossAndGrad<T> backward(const ArchSpec& arch, const Weights<T>& weights, const Tensor<T>& input,
                        const Tensor<T>& target, double loss_scale = 1.0);

// Like backward, but accumulates into `grad` (which must be shaped like the
// weights) and returns the loss.
template <typename T>
double accumulate_gradient(const ArchSpec& arch, const Weights<T>& weights, const Tensor<T>& input,
                           const Tensor<T>& target, double loss_scale, Weights<T>& grad);

template <typename T>
double mse_loss(const Tensor<T>& output, const Tensor<T>& target);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  Weights<T> m;
  Weights<T> v;
  std::uint64_t step = 0;
};

template <typename T>
AdamState<T> adam_init(const Weights<T>& like);

// Advances state.step to t and applies one bias-corrected Adam update.
template <typename T>
void adam_step(Weights<T>& weights, const Weights<T>& grad, AdamState<T>& state, const AdamConfig& config);

Tensor<float> to_tensor(const ScalarField3D& field);
ScalarField3D to_field(const Tensor<float>& tensor);

// --- PPNW checkpoints ------------------------------------------------------------
//   "PPNW" | u32 version=1 | u32 json_len | ArchSpec JSON | u64 step |
//   per tensor: u16 name_len | name | u8 rank | u32 dims[rank] | f32 data

struct Checkpoint {
  ArchSpec arch;
  NetworkWeights weights;
  std::uint64_t step = 0;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
Checkpoint read_checkpoint(const std::filesystem::path& path);

struct TensorInfo {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::size_t count = 0;
  double min = 0.0, max = 0.0, mean = 0.0, stddev = 0.0;
};
std::vector<TensorInfo> describe(const NetworkWeights& weights);

}  // namespace phasenet
