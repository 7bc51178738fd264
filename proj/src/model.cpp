#include "phasenet/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "phasenet/error.hpp"

namespace phasenet {

// --- architecture --------------------------------------------------------------

ArchSpec ArchSpec::paper() {
  constexpr int ch = 20;
  ArchSpec a{"paper", {}};
  a.layers.push_back(LayerSpec::conv(1, ch, 5, Activation::relu));
  a.layers.push_back(LayerSpec::conv(ch, ch, 5, Activation::relu));
  a.layers.push_back(LayerSpec::maxpool());
  for (int i = 0; i < 8; ++i) a.layers.push_back(LayerSpec::conv(ch, ch, 7, Activation::relu));
  a.layers.push_back(LayerSpec::upsample());
  a.layers.push_back(LayerSpec::conv(ch, ch, 5, Activation::relu));
  a.layers.push_back(LayerSpec::conv(ch, 1, 5, Activation::tanh));
  return a;
}

ArchSpec ArchSpec::desk() {
  constexpr int ch = 8;
  ArchSpec a{"desk", {}};
  a.layers.push_back(LayerSpec::conv(1, ch, 5, Activation::relu));
  a.layers.push_back(LayerSpec::conv(ch, ch, 5, Activation::relu));
  a.layers.push_back(LayerSpec::maxpool());
  for (int i = 0; i < 4; ++i) a.layers.push_back(LayerSpec::conv(ch, ch, 7, Activation::relu));
  a.layers.push_back(LayerSpec::upsample());
  a.layers.push_back(LayerSpec::conv(ch, ch, 5, Activation::relu));
  a.layers.push_back(LayerSpec::conv(ch, 1, 5, Activation::tanh));
  return a;
}

ArchSpec ArchSpec::preset(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw ConfigError("unknown architecture preset '" + name + "'");
}

void ArchSpec::validate() const {
  int channels = 1;
  int depth = 0;
  bool any_conv = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    std::ostringstream where;
    where << "layer " << i << ": ";
    switch (l.kind) {
      case LayerKind::conv3d:
        if (l.in_channels != channels)
          throw ConfigError(where.str() + "in_channels does not match the previous layer");
        if (l.out_channels < 1) throw ConfigError(where.str() + "out_channels must be >= 1");
        if (l.kernel_size < 1 || l.kernel_size % 2 == 0)
          throw ConfigError(where.str() + "kernel_size must be odd");
        channels = l.out_channels;
        any_conv = true;
        break;
      case LayerKind::maxpool2:
        ++depth;
        break;
      case LayerKind::upsample2:
        if (--depth < 0) throw ConfigError(where.str() + "upsample without a matching pool");
        break;
    }
  }
  if (!any_conv) throw ConfigError("architecture has no conv layers");
  if (channels != 1) throw ConfigError("last conv layer must have one output channel");
  if (depth != 0) throw ConfigError("pool and upsample layers must balance");
}

int ArchSpec::spatial_divisor() const {
  int depth = 0, max_depth = 0;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::maxpool2) max_depth = std::max(max_depth, ++depth);
    if (l.kind == LayerKind::upsample2) --depth;
  }
  return 1 << max_depth;
}

std::size_t ArchSpec::conv_count() const {
  return static_cast<std::size_t>(std::count_if(
      layers.begin(), layers.end(), [](const LayerSpec& l) { return l.kind == LayerKind::conv3d; }));
}

std::size_t param_count(const ArchSpec& arch) {
  std::size_t n = 0;
  for (const auto& l : arch.layers) {
    if (l.kind != LayerKind::conv3d) continue;
    const auto k = static_cast<std::size_t>(l.kernel_size);
    n += k * k * k * l.in_channels * l.out_channels + l.out_channels;
  }
  return n;
}

int receptive_field(const ArchSpec& arch) {
  int factor = 1;
  int reach = 0;
  for (const auto& l : arch.layers) {
    switch (l.kind) {
      case LayerKind::conv3d: reach += factor * (l.kernel_size - 1) / 2; break;
      case LayerKind::maxpool2: factor *= 2; break;
      case LayerKind::upsample2: factor /= 2; break;
    }
  }
  return reach;
}

// --- weights -------------------------------------------------------------------

template <typename T>
std::size_t Weights<T>::size() const {
  std::size_t n = 0;
  for (const auto& c : convs) n += c.kernel.size() + c.bias.size();
  return n;
}

template <typename T>
void Weights<T>::fill(T value) {
  for (auto& c : convs) {
    std::fill(c.kernel.begin(), c.kernel.end(), value);
    std::fill(c.bias.begin(), c.bias.end(), value);
  }
}

template <typename T>
void Weights<T>::add_scaled(const Weights& other, T scale) {
  for (std::size_t l = 0; l < convs.size(); ++l) {
    auto& a = convs[l];
    const auto& b = other.convs.at(l);
    for (std::size_t i = 0; i < a.kernel.size(); ++i) a.kernel[i] += scale * b.kernel[i];
    for (std::size_t i = 0; i < a.bias.size(); ++i) a.bias[i] += scale * b.bias[i];
  }
}

template <typename T>
template <typename U>
Weights<U> Weights<T>::cast() const {
  Weights<U> out;
  for (const auto& c : convs) {
    ConvParams<U> p(c.out_channels, c.in_channels, c.kernel_size);
    std::transform(c.kernel.begin(), c.kernel.end(), p.kernel.begin(), [](T v) { return static_cast<U>(v); });
    std::transform(c.bias.begin(), c.bias.end(), p.bias.begin(), [](T v) { return static_cast<U>(v); });
    out.convs.push_back(std::move(p));
  }
  return out;
}

template <typename T>
Weights<T> zero_weights(const ArchSpec& arch) {
  arch.validate();
  Weights<T> w;
  for (const auto& l : arch.layers)
    if (l.kind == LayerKind::conv3d) w.convs.emplace_back(l.out_channels, l.in_channels, l.kernel_size);
  return w;
}

template <typename T>
Weights<T> init_weights(const ArchSpec& arch, std::uint64_t seed) {
  Weights<T> w = zero_weights<T>(arch);
  std::mt19937_64 rng(seed);
  for (auto& c : w.convs) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(c.fan_in())));
    for (auto& v : c.kernel) v = static_cast<T>(dist(rng));
  }
  return w;
}

// --- convolution kernels ---------------------------------------------------------
//
// Convolutions run on zero-padded volumes with a "wide" row stride: output voxel
// (x,y,z) of a plane lives at y*PX + x where PX = nx + 2p is the padded row
// length. For a fixed kernel offset the whole plane then reduces to a single
// contiguous multiply-accumulate over L = (ny-1)*PX + nx entries; the columns
// x >= nx in between are scratch.

namespace {

struct ConvGeometry {
  int nx, ny, nz, k, p;
  std::size_t px, pxy, pz, os, len;

  ConvGeometry(const GridDims& d, int kernel)
      : nx(d.nx), ny(d.ny), nz(d.nz), k(kernel), p((kernel - 1) / 2) {
    px = static_cast<std::size_t>(nx + 2 * p);
    pxy = px * static_cast<std::size_t>(ny + 2 * p);
    pz = static_cast<std::size_t>(nz + 2 * p);
    os = static_cast<std::size_t>(ny) * px;
    len = static_cast<std::size_t>(ny - 1) * px + static_cast<std::size_t>(nx);
  }
  std::size_t padded_volume() const { return pz * pxy; }
  std::size_t wide_volume() const { return static_cast<std::size_t>(nz) * os; }
};

// out[j] += sum_t w[t] * in[j + t]
template <typename T, int K>
void row_corr(T* __restrict out, const T* __restrict in, const T* __restrict w, std::size_t len) {
  T wk[K];
  for (int t = 0; t < K; ++t) wk[t] = w[t];
  for (std::size_t j = 0; j < len; ++j) {
    T acc = out[j];
    for (int t = 0; t < K; ++t) acc += wk[t] * in[j + t];
    out[j] = acc;
  }
}

template <typename T>
void row_corr_any(T* __restrict out, const T* __restrict in, const T* __restrict w, int k, std::size_t len) {
  for (std::size_t j = 0; j < len; ++j) {
    T acc = out[j];
    for (int t = 0; t < k; ++t) acc += w[t] * in[j + t];
    out[j] = acc;
  }
}

template <typename T>
void row_corr(T* out, const T* in, const T* w, int k, std::size_t len) {
  switch (k) {
    case 1: row_corr<T, 1>(out, in, w, len); break;
    case 3: row_corr<T, 3>(out, in, w, len); break;
    case 5: row_corr<T, 5>(out, in, w, len); break;
    case 7: row_corr<T, 7>(out, in, w, len); break;
    default: row_corr_any(out, in, w, k, len); break;
  }
}

// acc[t] += sum_j dz[j] * in[j + t]. Partial sums are kept in explicit
// 64-byte vectors; the compiler will not vectorize a float reduction on its own.
template <typename T, int K>
void row_dots(const T* __restrict dz, const T* __restrict in, std::size_t len, T* acc) {
  constexpr int lanes = 64 / sizeof(T);
  typedef T vec __attribute__((vector_size(64)));
  vec part[K];
  for (int t = 0; t < K; ++t) part[t] = vec{};
  std::size_t j = 0;
  for (; j + lanes <= len; j += lanes) {
    vec d;
    std::memcpy(&d, dz + j, sizeof d);
    for (int t = 0; t < K; ++t) {
      vec x;
      std::memcpy(&x, in + j + t, sizeof x);
      part[t] += d * x;
    }
  }
  T tail[K] = {};
  for (; j < len; ++j)
    for (int t = 0; t < K; ++t) tail[t] += dz[j] * in[j + t];
  for (int t = 0; t < K; ++t) {
    T s = 0;
    for (int l = 0; l < lanes; ++l) s += part[t][l];
    acc[t] += s + tail[t];
  }
}

template <typename T>
void row_dots_any(const T* dz, const T* in, std::size_t len, int k, T* acc) {
  for (int t = 0; t < k; ++t) {
    T s = 0;
    for (std::size_t j = 0; j < len; ++j) s += dz[j] * in[j + t];
    acc[t] += s;
  }
}

template <typename T>
void row_dots(const T* dz, const T* in, std::size_t len, int k, T* acc) {
  switch (k) {
    case 1: row_dots<T, 1>(dz, in, len, acc); break;
    case 3: row_dots<T, 3>(dz, in, len, acc); break;
    case 5: row_dots<T, 5>(dz, in, len, acc); break;
    case 7: row_dots<T, 7>(dz, in, len, acc); break;
    default: row_dots_any(dz, in, len, k, acc); break;
  }
}

template <typename T>
std::vector<T> pad_input(const Tensor<T>& in, const ConvGeometry& g) {
  std::vector<T> padded(static_cast<std::size_t>(in.channels) * g.padded_volume(), T{});
  for (int c = 0; c < in.channels; ++c) {
    const T* src = in.channel(c);
    T* dst = padded.data() + static_cast<std::size_t>(c) * g.padded_volume();
    for (int z = 0; z < g.nz; ++z)
      for (int y = 0; y < g.ny; ++y) {
        const T* row = src + (static_cast<std::size_t>(z) * g.ny + y) * g.nx;
        std::copy(row, row + g.nx, dst + (z + g.p) * g.pxy + (y + g.p) * g.px + g.p);
      }
  }
  return padded;
}

template <typename T>
T activate(T v, Activation act) {
  switch (act) {
    case Activation::relu: return v > T(0) ? v : T(0);
    case Activation::tanh: return std::tanh(v);
    case Activation::none: break;
  }
  return v;
}

// d(activation)/d(pre-activation), expressed through the activation output.
template <typename T>
T activation_slope(T y, Activation act) {
  switch (act) {
    case Activation::relu: return y > T(0) ? T(1) : T(0);
    case Activation::tanh: return T(1) - y * y;
    case Activation::none: break;
  }
  return T(1);
}

template <typename T>
void check_conv_shapes(const Tensor<T>& in, const ConvParams<T>& p) {
  if (in.channels != p.in_channels) {
    std::ostringstream msg;
    msg << "conv3d expects " << p.in_channels << " input channels, got " << in.channels;
    throw ShapeError(msg.str());
  }
  if (p.kernel_size < 1 || p.kernel_size % 2 == 0) throw ShapeError("conv3d kernel size must be odd");
}

template <typename T>
void conv_backward(const Tensor<T>& input, const Tensor<T>& output, const Tensor<T>& d_output,
                   const ConvParams<T>& params, Activation act, ConvParams<T>& grad,
                   Tensor<T>* d_input) {
  const ConvGeometry g(input.dims, params.kernel_size);
  const int k = g.k;
  const std::size_t k3 = static_cast<std::size_t>(k) * k * k;
  const std::size_t margin = static_cast<std::size_t>(k - 1);
  const int cin = params.in_channels;
  const int cout = params.out_channels;

  const std::vector<T> padded = pad_input(input, g);

  // dZ in wide layout with a leading zero margin of k-1 entries.
  const std::size_t wide_stride = margin + g.wide_volume();
  std::vector<T> dz_wide(static_cast<std::size_t>(cout) * wide_stride, T{});
  for (int co = 0; co < cout; ++co) {
    const T* y = output.channel(co);
    const T* dy = d_output.channel(co);
    T* dst = dz_wide.data() + co * wide_stride + margin;
    T bias_grad = 0;
    std::size_t idx = 0;
    for (int z = 0; z < g.nz; ++z)
      for (int yy = 0; yy < g.ny; ++yy)
        for (int x = 0; x < g.nx; ++x, ++idx) {
          const T d = dy[idx] * activation_slope(y[idx], act);
          dst[z * g.os + yy * g.px + x] = d;
          bias_grad += d;
        }
    grad.bias[co] += bias_grad;
  }

  for (int co = 0; co < cout; ++co) {
    const T* dz = dz_wide.data() + co * wide_stride + margin;
    for (int ci = 0; ci < cin; ++ci) {
      const T* pin = padded.data() + ci * g.padded_volume();
      T* gk = grad.kernel.data() + (static_cast<std::size_t>(co) * cin + ci) * k3;
      for (int kz = 0; kz < k; ++kz)
        for (int z = 0; z < g.nz; ++z)
          for (int ky = 0; ky < k; ++ky)
            row_dots(dz + z * g.os, pin + (z + kz) * g.pxy + ky * g.px, g.len, k,
                     gk + (static_cast<std::size_t>(kz) * k + ky) * k);
    }
  }

  if (!d_input) return;

  // Kernel rows reversed along x: the input gradient is a correlation of dZ
  // with the flipped kernel.
  std::vector<T> flipped(params.kernel.size());
  for (std::size_t r = 0; r < params.kernel.size() / k; ++r)
    for (int t = 0; t < k; ++t) flipped[r * k + t] = params.kernel[r * k + (k - 1 - t)];

  std::vector<T> dpad(g.padded_volume());
  *d_input = Tensor<T>(cin, input.dims);
  for (int ci = 0; ci < cin; ++ci) {
    std::fill(dpad.begin(), dpad.end(), T{});
    for (int co = 0; co < cout; ++co) {
      const T* dz = dz_wide.data() + co * wide_stride + margin;
      const T* w = flipped.data() + (static_cast<std::size_t>(co) * cin + ci) * k3;
      for (int kz = 0; kz < k; ++kz)
        for (int z = 0; z < g.nz; ++z)
          for (int ky = 0; ky < k; ++ky)
            row_corr(dpad.data() + (z + kz) * g.pxy + ky * g.px, dz + z * g.os - margin,
                     w + (static_cast<std::size_t>(kz) * k + ky) * k, k, g.os);
    }
    T* dx = d_input->channel(ci);
    std::size_t idx = 0;
    for (int z = 0; z < g.nz; ++z)
      for (int y = 0; y < g.ny; ++y)
        for (int x = 0; x < g.nx; ++x, ++idx) dx[idx] = dpad[(z + g.p) * g.pxy + (y + g.p) * g.px + x + g.p];
  }
}

template <typename T>
Tensor<T> maxpool_impl(const Tensor<T>& in, std::vector<std::uint32_t>* argmax) {
  const GridDims& d = in.dims;
  if (d.nx % 2 || d.ny % 2 || d.nz % 2) throw ShapeError("maxpool2 needs even spatial dims");
  const GridDims od{d.nx / 2, d.ny / 2, d.nz / 2};
  Tensor<T> out(in.channels, od);
  if (argmax) argmax->assign(out.values.size(), 0);
  const std::size_t ovol = out.volume();
  for (int c = 0; c < in.channels; ++c) {
    const T* src = in.channel(c);
    T* dst = out.channel(c);
    std::size_t o = 0;
    for (int k = 0; k < od.nz; ++k)
      for (int j = 0; j < od.ny; ++j)
        for (int i = 0; i < od.nx; ++i, ++o) {
          std::uint32_t best = static_cast<std::uint32_t>(((2 * k) * d.ny + 2 * j) * d.nx + 2 * i);
          T best_v = src[best];
          for (int dk = 0; dk < 2; ++dk)
            for (int dj = 0; dj < 2; ++dj)
              for (int di = 0; di < 2; ++di) {
                const auto idx = static_cast<std::uint32_t>(((2 * k + dk) * d.ny + 2 * j + dj) * d.nx + 2 * i + di);
                if (src[idx] > best_v) {
                  best_v = src[idx];
                  best = idx;
                }
              }
          dst[o] = best_v;
          if (argmax) (*argmax)[c * ovol + o] = best;
        }
  }
  return out;
}

template <typename T>
struct ForwardCache {
  std::vector<Tensor<T>> acts;  // acts[0] = input, acts[l+1] = output of layer l
  std::vector<std::vector<std::uint32_t>> argmax;  // per layer; only pools fill it
};

template <typename T>
ForwardCache<T> forward_cached(const ArchSpec& arch, const Weights<T>& weights, const Tensor<T>& input) {
  if (input.channels != 1) throw ShapeError("network input must have one channel");
  const int div = arch.spatial_divisor();
  if (input.dims.nx % div || input.dims.ny % div || input.dims.nz % div)
    throw ShapeError("input dims must be divisible by " + std::to_string(div));
  if (weights.convs.size() != arch.conv_count()) throw ShapeError("weights do not match architecture");

  ForwardCache<T> cache;
  cache.acts.reserve(arch.layers.size() + 1);
  cache.argmax.resize(arch.layers.size());
  cache.acts.push_back(input);
  std::size_t conv = 0;
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const LayerSpec& spec = arch.layers[l];
    const Tensor<T>& x = cache.acts.back();
    switch (spec.kind) {
      case LayerKind::conv3d:
        cache.acts.push_back(conv3d_forward(x, weights.convs[conv++], spec.activation));
        break;
      case LayerKind::maxpool2:
        cache.acts.push_back(maxpool_impl(x, &cache.argmax[l]));
        break;
      case LayerKind::upsample2:
        cache.acts.push_back(upsample2_forward(x));
        break;
    }
  }
  return cache;
}

}  // namespace

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const ConvParams<T>& params, Activation act) {
  check_conv_shapes(input, params);
  const ConvGeometry g(input.dims, params.kernel_size);
  const int k = g.k;
  const std::size_t k3 = static_cast<std::size_t>(k) * k * k;
  const std::vector<T> padded = pad_input(input, g);
  std::vector<T> wide(g.wide_volume());

  Tensor<T> out(params.out_channels, input.dims);
  for (int co = 0; co < params.out_channels; ++co) {
    std::fill(wide.begin(), wide.end(), T{});
    for (int ci = 0; ci < params.in_channels; ++ci) {
      const T* pin = padded.data() + ci * g.padded_volume();
      const T* w = params.kernel.data() + (static_cast<std::size_t>(co) * params.in_channels + ci) * k3;
      for (int kz = 0; kz < k; ++kz)
        for (int z = 0; z < g.nz; ++z)
          for (int ky = 0; ky < k; ++ky)
            row_corr(wide.data() + z * g.os, pin + (z + kz) * g.pxy + ky * g.px,
                     w + (static_cast<std::size_t>(kz) * k + ky) * k, k, g.len);
    }
    const T b = params.bias[co];
    T* dst = out.channel(co);
    std::size_t idx = 0;
    for (int z = 0; z < g.nz; ++z)
      for (int y = 0; y < g.ny; ++y)
        for (int x = 0; x < g.nx; ++x, ++idx) dst[idx] = activate(wide[z * g.os + y * g.px + x] + b, act);
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2_forward(const Tensor<T>& input) {
  return maxpool_impl(input, nullptr);
}

template <typename T>
Tensor<T> upsample2_forward(const Tensor<T>& input) {
  const GridDims& d = input.dims;
  Tensor<T> out(input.channels, GridDims{2 * d.nx, 2 * d.ny, 2 * d.nz});
  for (int c = 0; c < input.channels; ++c) {
    const T* src = input.channel(c);
    T* dst = out.channel(c);
    std::size_t o = 0;
    for (int k = 0; k < 2 * d.nz; ++k)
      for (int j = 0; j < 2 * d.ny; ++j)
        for (int i = 0; i < 2 * d.nx; ++i, ++o) dst[o] = src[((k / 2) * d.ny + j / 2) * d.nx + i / 2];
  }
  return out;
}

template <typename T>
Tensor<T> forward(const ArchSpec& arch, const Weights<T>& weights, const Tensor<T>& input) {
  // Not reusing forward_cached: inference should not hold every activation.
  if (input.channels != 1) throw ShapeError("network input must have one channel");
  const int div = arch.spatial_divisor();
  if (input.dims.nx % div || input.dims.ny % div || input.dims.nz % div)
    throw ShapeError("input dims must be divisible by " + std::to_string(div));
  if (weights.convs.size() != arch.conv_count()) throw ShapeError("weights do not match architecture");
  Tensor<T> x = input;
  std::size_t conv = 0;
  for (const auto& spec : arch.layers) {
    switch (spec.kind) {
      case LayerKind::conv3d: x = conv3d_forward(x, weights.convs[conv++], spec.activation); break;
      case LayerKind::maxpool2: x = maxpool2_forward(x); break;
      case LayerKind::upsample2: x = upsample2_forward(x); break;
    }
  }
  return x;
}

template <typename T>
double mse_loss(const Tensor<T>& output, const Tensor<T>& target) {
  if (output.values.size() != target.values.size()) throw ShapeError("loss operands differ in size");
  double s = 0.0;
  for (std::size_t i = 0; i < output.values.size(); ++i) {
    const double d = static_cast<double>(output.values[i]) - static_cast<double>(target.values[i]);
    s += d * d;
  }
  return output.values.empty() ? 0.0 : s / static_cast<double>(output.values.size());
}

template <typename T>
double accumulate_gradient(const ArchSpec& arch, const Weights<T>& weights, const Tensor<T>& input,
                           const Tensor<T>& target, double loss_scale, Weights<T>& grad) {
  ForwardCache<T> cache = forward_cached(arch, weights, input);
  const Tensor<T>& out = cache.acts.back();
  if (out.channels != target.channels || !(out.dims == target.dims))
    throw ShapeError("target shape does not match network output");
  const double loss = loss_scale * mse_loss(out, target);

  Tensor<T> d(out.channels, out.dims);
  const T coef = static_cast<T>(2.0 * loss_scale / static_cast<double>(out.values.size()));
  for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] = coef * (out.values[i] - target.values[i]);

  std::size_t conv = weights.convs.size();
  for (std::size_t li = arch.layers.size(); li-- > 0;) {
    const LayerSpec& spec = arch.layers[li];
    const Tensor<T>& x = cache.acts[li];
    const Tensor<T>& y = cache.acts[li + 1];
    switch (spec.kind) {
      case LayerKind::conv3d: {
        --conv;
        Tensor<T> dx;
        conv_backward(x, y, d, weights.convs[conv], spec.activation, grad.convs[conv], li == 0 ? nullptr : &dx);
        d = std::move(dx);
        break;
      }
      case LayerKind::maxpool2: {
        Tensor<T> dx(x.channels, x.dims);
        const auto& am = cache.argmax[li];
        const std::size_t ovol = y.volume();
        for (int c = 0; c < y.channels; ++c) {
          T* dst = dx.channel(c);
          for (std::size_t o = 0; o < ovol; ++o) dst[am[c * ovol + o]] += d.values[c * ovol + o];
        }
        d = std::move(dx);
        break;
      }
      case LayerKind::upsample2: {
        Tensor<T> dx(x.channels, x.dims);
        const GridDims& s = x.dims;
        for (int c = 0; c < y.channels; ++c) {
          const T* src = d.channel(c);
          T* dst = dx.channel(c);
          std::size_t o = 0;
          for (int k = 0; k < 2 * s.nz; ++k)
            for (int j = 0; j < 2 * s.ny; ++j)
              for (int i = 0; i < 2 * s.nx; ++i, ++o) dst[((k / 2) * s.ny + j / 2) * s.nx + i / 2] += src[o];
        }
        d = std::move(dx);
        break;
      }
    }
    if (li == 0) break;
  }
  return loss;
}

template <typename T>
LossAndGrad<T> backward(const ArchSpec& arch, const Weights<T>& weights, const Tensor<T>& input,
                        const Tensor<T>& target, double loss_scale) {
  LossAndGrad<T> r;
  r.grad = zero_weights<T>(arch);
  r.loss = accumulate_gradient(arch, weights, input, target, loss_scale, r.grad);
  return r;
}

// --- Adam ----------------------------------------------------------------------------

template <typename T>
AdamState<T> adam_init(const Weights<T>& like) {
  AdamState<T> s{like, like, 0};
  s.m.fill(T{});
  s.v.fill(T{});
  return s;
}

template <typename T>
void adam_step(Weights<T>& weights, const Weights<T>& grad, AdamState<T>& state, const AdamConfig& cfg) {
  const std::uint64_t t = ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.learning_rate), eps = static_cast<T>(cfg.epsilon);
  const T inv_c1 = static_cast<T>(1.0 / c1), inv_c2 = static_cast<T>(1.0 / c2);

  auto update = [&](std::vector<T>& w, const std::vector<T>& g, std::vector<T>& m, std::vector<T>& v) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T mhat = m[i] * inv_c1;
      const T vhat = v[i] * inv_c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  };
  for (std::size_t l = 0; l < weights.convs.size(); ++l) {
    update(weights.convs[l].kernel, grad.convs[l].kernel, state.m.convs[l].kernel, state.v.convs[l].kernel);
    update(weights.convs[l].bias, grad.convs[l].bias, state.m.convs[l].bias, state.v.convs[l].bias);
  }
}

Tensor<float> to_tensor(const ScalarField3D& field) {
  Tensor<float> t(1, field.dims());
  std::transform(field.data().begin(), field.data().end(), t.values.begin(),
                 [](double v) { return static_cast<float>(v); });
  return t;
}

ScalarField3D to_field(const Tensor<float>& tensor) {
  if (tensor.channels != 1) throw ShapeError("only single-channel tensors convert to a field");
  ScalarField3D f(tensor.dims);
  std::copy(tensor.values.begin(), tensor.values.end(), f.data().begin());
  return f;
}

// --- explicit instantiations -----------------------------------------------------------

#define PHASENET_INSTANTIATE(T)                                                                       \
  template struct Weights<T>;                                                                         \
  template Weights<T> zero_weights<T>(const ArchSpec&);                                               \
  template Weights<T> init_weights<T>(const ArchSpec&, std::uint64_t);                                \
  template Tensor<T> conv3d_forward<T>(const Tensor<T>&, const ConvParams<T>&, Activation);           \
  template Tensor<T> maxpool2_forward<T>(const Tensor<T>&);                                           \
  template Tensor<T> upsample2_forward<T>(const Tensor<T>&);                                          \
  template Tensor<T> forward<T>(const ArchSpec&, const Weights<T>&, const Tensor<T>&);                \
  template LossAndGrad<T> backward<T>(const ArchSpec&, const Weights<T>&, const Tensor<T>&,           \
                                      const Tensor<T>&, double);                                      \
  template double accumulate_gradient<T>(const ArchSpec&, const Weights<T>&, const Tensor<T>&,        \
                                         const Tensor<T>&, double, Weights<T>&);                      \
  template double mse_loss<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template AdamState<T> adam_init<T>(const Weights<T>&);                                              \
  template void adam_step<T>(Weights<T>&, const Weights<T>&, AdamState<T>&, const AdamConfig&);

PHASENET_INSTANTIATE(float)
PHASENET_INSTANTIATE(double)
#undef PHASENET_INSTANTIATE

template Weights<double> Weights<float>::cast<double>() const;
template Weights<float> Weights<double>::cast<float>() const;
template Weights<float> Weights<float>::cast<float>() const;
template Weights<double> Weights<double>::cast<double>() const;

}  // namespace phasenet
