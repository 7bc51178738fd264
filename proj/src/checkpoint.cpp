#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "binary_io.hpp"
#include "phasenet/config.hpp"
#include "phasenet/error.hpp"
#include "phasenet/model.hpp"

namespace phasenet {

namespace {

constexpr char kMagic[4] = {'P', 'P', 'N', 'W'};
constexpr std::uint32_t kVersion = 1;

void put_tensor(std::ostream& out, const std::string& name, const std::vector<std::uint32_t>& shape,
                const std::vector<float>& data) {
  detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(shape.size()));
  for (auto d : shape) detail::put<std::uint32_t>(out, d);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
}

std::string tensor_name(std::size_t conv, const char* part) {
  return "conv" + std::to_string(conv) + "." + part;
}

std::vector<std::uint32_t> kernel_shape(const ConvParams<float>& c) {
  const auto k = static_cast<std::uint32_t>(c.kernel_size);
  return {static_cast<std::uint32_t>(c.out_channels), static_cast<std::uint32_t>(c.in_channels), k, k, k};
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const std::string arch = nlohmann::json(ckpt.arch).dump();
  out.write(kMagic, 4);
  detail::put<std::uint32_t>(out, kVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(arch.size()));
  out.write(arch.data(), static_cast<std::streamsize>(arch.size()));
  detail::put<std::uint64_t>(out, ckpt.step);
  for (std::size_t l = 0; l < ckpt.weights.convs.size(); ++l) {
    const auto& c = ckpt.weights.convs[l];
    put_tensor(out, tensor_name(l, "kernel"), kernel_shape(c), c.kernel);
    put_tensor(out, tensor_name(l, "bias"), {static_cast<std::uint32_t>(c.out_channels)}, c.bias);
  }
  if (!out) throw IoError("failed writing checkpoint");
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  // Write-then-rename so a reader never sees a half-written checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    write_checkpoint(out, ckpt);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[4];
  detail::get_bytes(in, magic, 4, "PPNW magic");
  if (!std::equal(magic, magic + 4, kMagic)) throw IoError("not a PPNW checkpoint (bad magic)");
  const auto version = detail::get<std::uint32_t>(in, "PPNW version");
  if (version != kVersion) throw IoError("unsupported PPNW version " + std::to_string(version));
  const auto json_len = detail::get<std::uint32_t>(in, "PPNW arch length");
  std::string arch_text(json_len, '\0');
  detail::get_bytes(in, arch_text.data(), json_len, "PPNW arch JSON");

  Checkpoint ckpt;
  try {
    ckpt.arch = nlohmann::json::parse(arch_text).get<ArchSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed architecture in checkpoint: ") + e.what());
  }
  ckpt.arch.validate();
  ckpt.step = detail::get<std::uint64_t>(in, "PPNW step");
  ckpt.weights = zero_weights<float>(ckpt.arch);

  std::size_t loaded = 0;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto name_len = detail::get<std::uint16_t>(in, "tensor name length");
    std::string name(name_len, '\0');
    detail::get_bytes(in, name.data(), name_len, "tensor name");
    const auto rank = detail::get<std::uint8_t>(in, "tensor rank");
    std::vector<std::uint32_t> shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = detail::get<std::uint32_t>(in, "tensor dims");
      count *= d;
    }

    std::vector<float>* dst = nullptr;
    std::vector<std::uint32_t> expected;
    for (std::size_t l = 0; l < ckpt.weights.convs.size() && !dst; ++l) {
      auto& c = ckpt.weights.convs[l];
      if (name == tensor_name(l, "kernel")) {
        dst = &c.kernel;
        expected = kernel_shape(c);
      } else if (name == tensor_name(l, "bias")) {
        dst = &c.bias;
        expected = {static_cast<std::uint32_t>(c.out_channels)};
      }
    }
    if (!dst) throw IoError("checkpoint holds unknown tensor '" + name + "'");
    if (shape != expected) throw IoError("tensor '" + name + "' has the wrong shape for the architecture");
    detail::get_bytes(in, reinterpret_cast<char*>(dst->data()), count * sizeof(float), "tensor data");
    ++loaded;
  }
  if (loaded != 2 * ckpt.weights.convs.size()) throw IoError("checkpoint is missing tensors");
  return ckpt;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_checkpoint(in);
}

std::vector<TensorInfo> describe(const NetworkWeights& weights) {
  std::vector<TensorInfo> out;
  auto stats = [](std::string name, std::vector<std::uint32_t> shape, const std::vector<float>& v) {
    TensorInfo t{std::move(name), std::move(shape), v.size()};
    if (v.empty()) return t;
    double sum = 0.0, sq = 0.0;
    t.min = t.max = v.front();
    for (float x : v) {
      sum += x;
      sq += static_cast<double>(x) * x;
      t.min = std::min<double>(t.min, x);
      t.max = std::max<double>(t.max, x);
    }
    t.mean = sum / static_cast<double>(v.size());
    t.stddev = std::sqrt(std::max(0.0, sq / static_cast<double>(v.size()) - t.mean * t.mean));
    return t;
  };
  for (std::size_t l = 0; l < weights.convs.size(); ++l) {
    const auto& c = weights.convs[l];
    out.push_back(stats(tensor_name(l, "kernel"), kernel_shape(c), c.kernel));
    out.push_back(stats(tensor_name(l, "bias"), {static_cast<std::uint32_t>(c.out_channels)}, c.bias));
  }
  return out;
}

}  // namespace phasenet
