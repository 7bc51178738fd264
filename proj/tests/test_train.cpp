#include <doctest.h>

#include <filesystem>

#include "phasenet/error.hpp"
#include "phasenet/train.hpp"

using namespace phasenet;

namespace {

ArchSpec tiny_arch() {
  return ArchSpec{"tiny",
                  {LayerSpec::conv(1, 2, 3, Activation::relu), LayerSpec::maxpool(),
                   LayerSpec::conv(2, 2, 3, Activation::relu), LayerSpec::upsample(),
                   LayerSpec::conv(2, 1, 3, Activation::tanh)}};
}

TrainConfig tiny_train() {
  TrainConfig c;
  c.train_set_size = 6;
  c.val_set_size = 4;
  c.minibatch_size = 3;
  c.refresh_every_epochs = 2;
  c.epochs = 5;
  c.learning_rate = 1e-3;
  c.seed = 17;
  return c;
}

}  // namespace

TEST_CASE("epochs=0 evaluates the initialization only") {
  TrainConfig c = tiny_train();
  c.epochs = 0;
  const auto r = train(tiny_arch(), GenConfig::desk(), c);
  REQUIRE(r.log.size() == 1);
  CHECK(r.log[0].epoch == 0);
  CHECK(r.steps == 0);
  const auto init = init_weights<float>(tiny_arch(), c.init_seed());
  for (std::size_t l = 0; l < init.convs.size(); ++l) CHECK(r.weights.convs[l].kernel == init.convs[l].kernel);
}

TEST_CASE("log rows follow the refresh schedule") {
  const auto dir = std::filesystem::temp_directory_path() / "phasenet_test_train";
  std::filesystem::remove_all(dir);
  std::vector<LogRow> seen;
  TrainHooks hooks;
  hooks.on_log = [&](const LogRow& r) { seen.push_back(r); };
  const TrainConfig c = tiny_train();
  const auto r = train(tiny_arch(), GenConfig::desk(), c, dir, hooks);

  // Refreshes at epochs 2 and 4, then the closing row at epoch 5.
  REQUIRE(r.log.size() == 4);
  const std::vector<int> epochs{0, 2, 4, 5};
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    CHECK(r.log[i].refresh_index == static_cast<int>(i));
    CHECK(r.log[i].epoch == epochs[i]);
  }
  CHECK(seen.size() == 4);
  CHECK(r.steps == 5 * 2);

  CHECK(std::filesystem::exists(dir / "final.ppnw"));
  CHECK(std::filesystem::exists(dir / "checkpoint_r0003.ppnw"));
  const auto logged = read_log_tsv(dir / "log.tsv");
  REQUIRE(logged.size() == 4);
  CHECK(logged[3].val_loss == r.log[3].val_loss);
  const Checkpoint final = read_checkpoint(dir / "final.ppnw");
  CHECK(final.step == r.steps);
  CHECK(final.weights.convs[0].kernel == r.weights.convs[0].kernel);
  std::filesystem::remove_all(dir);
}

TEST_CASE("identical streams give identical losses") {
  TrainConfig c = tiny_train();
  c.refresh_every_epochs = 1;
  c.train_set_size = c.val_set_size = 4;
  c.train_seed_base = c.val_seed_base = 99;
  c.freeze_training_set = true;
  c.epochs = 3;
  const auto r = train(tiny_arch(), GenConfig::desk(), c);
  REQUIRE(r.log.size() == 4);
  for (const auto& row : r.log) CHECK(std::abs(row.train_loss - row.val_loss) <= 1e-9 * row.val_loss);
}

TEST_CASE("single-threaded training is bit reproducible") {
  const auto a = train(tiny_arch(), GenConfig::desk(), tiny_train());
  const auto b = train(tiny_arch(), GenConfig::desk(), tiny_train());
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].train_loss == b.log[i].train_loss);
    CHECK(a.log[i].val_loss == b.log[i].val_loss);
  }
  for (std::size_t l = 0; l < a.weights.convs.size(); ++l) CHECK(a.weights.convs[l].kernel == b.weights.convs[l].kernel);

  TrainConfig threaded = tiny_train();
  threaded.threads = 3;
  const auto t = train(tiny_arch(), GenConfig::desk(), threaded);
  CHECK(t.log.back().val_loss == doctest::Approx(a.log.back().val_loss).epsilon(1e-3));
}

TEST_CASE("training warnings and validation") {
  TrainConfig c = tiny_train();
  c.epochs = 0;
  const auto r = train(tiny_arch(), GenConfig::desk(), c);
  REQUIRE_FALSE(r.warnings.empty());
  CHECK(r.warnings[0].find("receptive field") != std::string::npos);
  CHECK(receptive_field_warning(ArchSpec::desk(), GridDims::cube(20)).empty());
  CHECK_FALSE(receptive_field_warning(ArchSpec::desk(), GridDims::cube(40)).empty());

  c.refresh_every_epochs = 0;
  CHECK_THROWS_AS(train(tiny_arch(), GenConfig::desk(), c), ConfigError);
  GenConfig odd = GenConfig::desk();
  odd.outer_dim = 21;
  CHECK_THROWS_AS(train(tiny_arch(), odd, tiny_train()), ConfigError);
}

TEST_CASE("inference is deterministic and zero weights give a zero map") {
  const auto ex = make_example(GenConfig::desk(), 2);
  const auto w = init_weights<float>(ArchSpec::desk(), 1);
  CHECK(infer(ArchSpec::desk(), w, ex.input) == infer(ArchSpec::desk(), w, ex.input));
  const auto zero = infer(ArchSpec::desk(), zero_weights<float>(ArchSpec::desk()), ex.input);
  CHECK(max_value(zero) == 0.0);
}
