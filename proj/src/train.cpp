#include "phasenet/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "phasenet/error.hpp"

namespace phasenet {

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.train_set_size = 3000;
  c.val_set_size = 100;
  c.refresh_every_epochs = 3;
  return c;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.train_set_size = 200;
  c.val_set_size = 100;
  c.refresh_every_epochs = 3;
  c.epochs = 30;
  c.learning_rate = 3e-4;
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
    throw ConfigError("adam betas must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (minibatch_size < 1) throw ConfigError("minibatch_size must be >= 1");
  if (train_set_size < 1) throw ConfigError("train_set_size must be >= 1");
  if (val_set_size < 1) throw ConfigError("val_set_size must be >= 1");
  if (refresh_every_epochs < 1) throw ConfigError("refresh_every_epochs must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(loss_scale > 0.0)) throw ConfigError("loss_scale must be > 0");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

std::uint64_t TrainConfig::init_seed() const { return mix_seed(seed, 0); }
std::uint64_t TrainConfig::resolved_val_base() const { return val_seed_base.value_or(mix_seed(seed, 1)); }
std::uint64_t TrainConfig::resolved_train_base() const { return train_seed_base.value_or(mix_seed(seed, 2)); }

std::string receptive_field_warning(const ArchSpec& arch, const GridDims& dims) {
  const int rf = receptive_field(arch);
  const int extent = std::max({dims.nx, dims.ny, dims.nz});
  if (rf >= extent) return {};
  std::ostringstream msg;
  msg << "receptive field " << rf << " is smaller than the input extent " << extent
      << "; output voxels will not see the whole Patterson map";
  return msg.str();
}

ScalarField3D infer(const ArchSpec& arch, const NetworkWeights& weights, const ScalarField3D& input) {
  return to_field(forward(arch, weights, to_tensor(input)));
}

namespace {

template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

std::vector<ExampleTensors> build_example_set(const GenConfig& gen, std::uint64_t seed_base, int count,
                                              unsigned threads) {
  std::vector<ExampleTensors> set(static_cast<std::size_t>(std::max(0, count)));
  parallel_for(set.size(), threads, [&](std::size_t i) {
    const TrainingExample ex = make_example(gen, mix_seed(seed_base, i));
    set[i] = {to_tensor(ex.input), to_tensor(ex.target)};
  });
  return set;
}

double evaluate_loss(const ArchSpec& arch, const NetworkWeights& weights, const std::vector<ExampleTensors>& set,
                     double loss_scale) {
  if (set.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : set) total += mse_loss(forward(arch, weights, ex.input), ex.target);
  return loss_scale * total / static_cast<double>(set.size());
}

void write_log_tsv(const std::filesystem::path& path, const std::vector<LogRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "refresh_index\tepoch\ttrain_loss\tval_loss\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d\t%d\t%.17g\t%.17g\n", r.refresh_index, r.epoch, r.train_loss, r.val_loss);
    out << buf;
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<LogRow> read_log_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "refresh_index\tepoch\ttrain_loss\tval_loss") throw IoError("unexpected training log header");
  std::vector<LogRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream s(line);
    LogRow r;
    if (!(s >> r.refresh_index >> r.epoch >> r.train_loss >> r.val_loss)) throw IoError("malformed log row: " + line);
    rows.push_back(r);
  }
  return rows;
}

TrainResult train(const ArchSpec& arch, const GenConfig& gen, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& out_dir, const TrainHooks& hooks) {
  arch.validate();
  gen.validate();
  config.validate();
  const GridDims dims = gen.dims();
  const int div = arch.spatial_divisor();
  if (dims.nx % div) throw ConfigError("outer_dim must be divisible by " + std::to_string(div) + " for this arch");

  TrainResult result;
  if (auto w = receptive_field_warning(arch, dims); !w.empty()) result.warnings.push_back(w);
  if (gen.uniqueness_violated())
    result.warnings.push_back("inner box exceeds the half-edge uniqueness bound; Patterson maps are ambiguous");

  if (out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir->string() + ": " + ec.message());
  }

  NetworkWeights weights = init_weights<float>(arch, config.init_seed());
  AdamState<float> adam = adam_init(weights);
  const AdamConfig adam_cfg = config.adam();

  const unsigned gen_threads = config.threads;
  const auto val_set = build_example_set(gen, config.resolved_val_base(), config.val_set_size, gen_threads);
  const std::uint64_t train_base = config.resolved_train_base();
  auto train_set_for = [&](int refresh) {
    const std::uint64_t base =
        config.freeze_training_set ? train_base : mix_seed(train_base, static_cast<std::uint64_t>(refresh));
    return build_example_set(gen, base, config.train_set_size, gen_threads);
  };

  std::mt19937_64 order_rng(mix_seed(config.seed, 3));
  std::vector<ExampleTensors> train_set;
  int refresh = 0;

  auto log_row = [&](int epoch) {
    LogRow row{refresh, epoch, evaluate_loss(arch, weights, train_set, config.loss_scale),
               evaluate_loss(arch, weights, val_set, config.loss_scale)};
    if (!std::isfinite(row.train_loss) || !std::isfinite(row.val_loss))
      throw NumericError("training diverged: loss is not finite");
    result.log.push_back(row);
    if (out_dir) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_r%04d.ppnw", refresh);
      write_checkpoint(*out_dir / name, Checkpoint{arch, weights, adam.step});
      write_log_tsv(*out_dir / "log.tsv", result.log);
    }
    if (hooks.on_log) hooks.on_log(row);
  };

  train_set = train_set_for(refresh);
  log_row(0);

  std::vector<std::size_t> order(train_set.size());
  NetworkWeights grad = zero_weights<float>(arch);
  const unsigned workers = std::max(1u, std::min<unsigned>(config.threads, static_cast<unsigned>(config.minibatch_size)));
  std::vector<NetworkWeights> partial(workers, grad);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (epoch > 0 && epoch % config.refresh_every_epochs == 0) {
      ++refresh;
      train_set = train_set_for(refresh);
      log_row(epoch);
    }
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);

    for (std::size_t start = 0; start < order.size(); start += config.minibatch_size) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.minibatch_size));
      const std::size_t n = stop - start;
      double batch_loss = 0.0;
      grad.fill(0.0f);
      if (workers == 1) {
        for (std::size_t b = start; b < stop; ++b) {
          const auto& ex = train_set[order[b]];
          batch_loss += accumulate_gradient(arch, weights, ex.input, ex.target, config.loss_scale, grad);
        }
      } else {
        // Static chunking, reduced in worker order.
        std::vector<double> losses(workers, 0.0);
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w)
          pool.emplace_back([&, w] {
            partial[w].fill(0.0f);
            for (std::size_t b = start + w; b < stop; b += workers) {
              const auto& ex = train_set[order[b]];
              losses[w] += accumulate_gradient(arch, weights, ex.input, ex.target, config.loss_scale, partial[w]);
            }
          });
        for (auto& t : pool) t.join();
        for (unsigned w = 0; w < workers; ++w) {
          grad.add_scaled(partial[w], 1.0f);
          batch_loss += losses[w];
        }
      }
      if (!std::isfinite(batch_loss)) throw NumericError("training diverged: minibatch loss is not finite");
      const float inv = 1.0f / static_cast<float>(n);
      for (auto& c : grad.convs) {
        for (auto& v : c.kernel) v *= inv;
        for (auto& v : c.bias) v *= inv;
      }
      adam_step(weights, grad, adam, adam_cfg);
    }
  }

  if (config.epochs > 0) {
    ++refresh;
    train_set = train_set_for(refresh);
    log_row(config.epochs);
  }

  result.weights = std::move(weights);
  result.steps = adam.step;
  if (out_dir) write_checkpoint(*out_dir / "final.ppnw", Checkpoint{arch, result.weights, result.steps});
  return result;
}

}  // namespace phasenet
