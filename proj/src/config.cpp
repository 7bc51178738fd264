#include "phasenet/config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "phasenet/error.hpp"

namespace phasenet {

using nlohmann::json;

void to_json(json& j, const Box3& b) {
  j = json::array({json::array({b.lo.x, b.lo.y, b.lo.z}), json::array({b.hi.x, b.hi.y, b.hi.z})});
}

// Accepts [[lo], [hi]] or {"lo": [...], "hi": [...]}.
void from_json(const json& j, Box3& b) {
  const bool named = j.is_object();
  const auto& lo = named ? j.at("lo") : j.at(0);
  const auto& hi = named ? j.at("hi") : j.at(1);
  b.lo = {lo.at(0).get<double>(), lo.at(1).get<double>(), lo.at(2).get<double>()};
  b.hi = {hi.at(0).get<double>(), hi.at(1).get<double>(), hi.at(2).get<double>()};
}

void to_json(json& j, const GenConfig& c) {
  j = json{{"outer_dim", c.outer_dim},
           {"inner_dim", c.inner_dim},
           {"n_atoms", c.n_atoms},
           {"atom_radius", c.atom_radius},
           {"min_separation", c.min_separation},
           {"per_atom_scale", c.per_atom_scale},
           {"supersample", c.supersample},
           {"exclusion_region", c.exclusion_region ? json(*c.exclusion_region) : json(nullptr)},
           {"normalize_input", c.normalize_input},
           {"centro_target", c.centro_target}};
}

void from_json(const json& j, GenConfig& c) {
  GenConfig d;
  c.outer_dim = j.value("outer_dim", d.outer_dim);
  c.inner_dim = j.value("inner_dim", d.inner_dim);
  c.n_atoms = j.value("n_atoms", d.n_atoms);
  c.atom_radius = j.value("atom_radius", d.atom_radius);
  c.min_separation = j.value("min_separation", d.min_separation);
  c.per_atom_scale = j.value("per_atom_scale", d.per_atom_scale);
  c.supersample = j.value("supersample", d.supersample);
  c.exclusion_region.reset();
  if (auto it = j.find("exclusion_region"); it != j.end() && !it->is_null()) c.exclusion_region = it->get<Box3>();
  c.normalize_input = j.value("normalize_input", d.normalize_input);
  c.centro_target = j.value("centro_target", d.centro_target);
}

namespace {

const std::map<std::string, LayerKind> kKinds{
    {"conv3d", LayerKind::conv3d}, {"maxpool2", LayerKind::maxpool2}, {"upsample2", LayerKind::upsample2}};
const std::map<std::string, Activation> kActs{
    {"none", Activation::none}, {"relu", Activation::relu}, {"tanh", Activation::tanh}};

template <typename E>
std::string name_of(const std::map<std::string, E>& table, E v) {
  for (const auto& [k, e] : table)
    if (e == v) return k;
  return "?";
}

template <typename E>
E lookup(const std::map<std::string, E>& table, const std::string& name, const char* what) {
  auto it = table.find(name);
  if (it == table.end()) throw ConfigError(std::string("unknown ") + what + " '" + name + "'");
  return it->second;
}

}  // namespace

void to_json(json& j, const LayerSpec& l) {
  j = json{{"kind", name_of(kKinds, l.kind)}};
  if (l.kind == LayerKind::conv3d) {
    j["in_channels"] = l.in_channels;
    j["out_channels"] = l.out_channels;
    j["kernel_size"] = l.kernel_size;
    j["activation"] = name_of(kActs, l.activation);
  }
}

void from_json(const json& j, LayerSpec& l) {
  l = LayerSpec{};
  l.kind = lookup(kKinds, j.at("kind").get<std::string>(), "layer kind");
  if (l.kind == LayerKind::conv3d) {
    l.in_channels = j.at("in_channels").get<int>();
    l.out_channels = j.at("out_channels").get<int>();
    l.kernel_size = j.at("kernel_size").get<int>();
    l.activation = lookup(kActs, j.value("activation", std::string("none")), "activation");
  }
}

void to_json(json& j, const ArchSpec& a) { j = json{{"name", a.name}, {"layers", a.layers}}; }

void from_json(const json& j, ArchSpec& a) {
  a.name = j.value("name", std::string());
  a.layers = j.at("layers").get<std::vector<LayerSpec>>();
}

// --- RunConfig -------------------------------------------------------------------

namespace {

struct Field {
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

template <typename Member>
Field field(Member member) {
  return {[member](RunConfig& rc, const json& v) { member(rc) = v.get<std::decay_t<decltype(member(rc))>>(); },
          [member](const RunConfig& rc) { return json(member(const_cast<RunConfig&>(rc))); }};
}

#define PHASENET_FIELD(expr) field([](RunConfig& rc) -> auto& { return rc.expr; })

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    t.emplace_back("seed", PHASENET_FIELD(seed));
    t.emplace_back("outer_dim", PHASENET_FIELD(gen.outer_dim));
    t.emplace_back("inner_dim", PHASENET_FIELD(gen.inner_dim));
    t.emplace_back("n_atoms", PHASENET_FIELD(gen.n_atoms));
    t.emplace_back("atom_radius", PHASENET_FIELD(gen.atom_radius));
    t.emplace_back("min_separation", PHASENET_FIELD(gen.min_separation));
    t.emplace_back("per_atom_scale", PHASENET_FIELD(gen.per_atom_scale));
    t.emplace_back("supersample", PHASENET_FIELD(gen.supersample));
    t.emplace_back("exclusion_region",
                   Field{[](RunConfig& rc, const json& v) {
                           if (v.is_null()) rc.gen.exclusion_region.reset();
                           else rc.gen.exclusion_region = v.get<Box3>();
                         },
                         [](const RunConfig& rc) {
                           return rc.gen.exclusion_region ? json(*rc.gen.exclusion_region) : json(nullptr);
                         }});
    t.emplace_back("normalize_input", PHASENET_FIELD(gen.normalize_input));
    t.emplace_back("centro_target", PHASENET_FIELD(gen.centro_target));
    t.emplace_back("learning_rate", PHASENET_FIELD(train.learning_rate));
    t.emplace_back("beta1", PHASENET_FIELD(train.beta1));
    t.emplace_back("beta2", PHASENET_FIELD(train.beta2));
    t.emplace_back("epsilon", PHASENET_FIELD(train.epsilon));
    t.emplace_back("minibatch_size", PHASENET_FIELD(train.minibatch_size));
    t.emplace_back("train_set_size", PHASENET_FIELD(train.train_set_size));
    t.emplace_back("val_set_size", PHASENET_FIELD(train.val_set_size));
    t.emplace_back("refresh_every_epochs", PHASENET_FIELD(train.refresh_every_epochs));
    t.emplace_back("epochs", PHASENET_FIELD(train.epochs));
    t.emplace_back("loss_scale", PHASENET_FIELD(train.loss_scale));
    t.emplace_back("freeze_training_set", PHASENET_FIELD(train.freeze_training_set));
    t.emplace_back("threshold_fraction", PHASENET_FIELD(peaks.threshold_fraction));
    t.emplace_back("max_peaks", PHASENET_FIELD(peaks.max_peaks));
    t.emplace_back("subset_size", PHASENET_FIELD(separation.subset_size));
    t.emplace_back("iterations", PHASENET_FIELD(separation.iterations));
    t.emplace_back("mode",
                   Field{[](RunConfig& rc, const json& v) {
                           const auto s = v.get<std::string>();
                           if (s == "greedy") rc.separation.mode = SearchMode::greedy;
                           else if (s == "anneal") rc.separation.mode = SearchMode::anneal;
                           else throw ConfigError("mode must be greedy or anneal");
                         },
                         [](const RunConfig& rc) {
                           return json(rc.separation.mode == SearchMode::greedy ? "greedy" : "anneal");
                         }});
    t.emplace_back("initial_temperature",
                   Field{[](RunConfig& rc, const json& v) {
                           if (v.is_null()) rc.separation.initial_temperature.reset();
                           else rc.separation.initial_temperature = v.get<double>();
                         },
                         [](const RunConfig& rc) {
                           return rc.separation.initial_temperature ? json(*rc.separation.initial_temperature)
                                                                    : json(nullptr);
                         }});
    t.emplace_back("cooling", PHASENET_FIELD(separation.cooling));
    return t;
  }();
  return table;
}

#undef PHASENET_FIELD

}  // namespace

RunConfig RunConfig::from_preset(const std::string& name) {
  RunConfig rc;
  rc.preset = name;
  rc.arch = ArchSpec::preset(name);
  if (name == "paper") {
    rc.gen = GenConfig::paper();
    rc.train = TrainConfig::paper();
  } else {
    rc.gen = GenConfig::desk();
    rc.train = TrainConfig::desk();
  }
  rc.separation.subset_size = rc.gen.n_atoms;
  return rc;
}

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

void RunConfig::set(const std::string& key, const json& value) {
  for (const auto& [name, f] : fields()) {
    if (name != key) continue;
    try {
      f.set(*this, value);
      if (key == "subset_size") subset_size_explicit = true;
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + key + "': " + e.what());
    }
    return;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::apply(const json& flat) {
  if (!flat.is_object()) throw ConfigError("config file must hold a JSON object");
  for (const auto& [key, value] : flat.items()) {
    if (key == "preset") continue;  // handled by the caller before applying
    set(key, value);
  }
}

json RunConfig::to_flat_json() const {
  json j{{"preset", preset}};
  for (const auto& [name, f] : fields()) j[name] = f.get(*this);
  return j;
}

void RunConfig::finalize() {
  train.seed = seed;
  separation.seed = seed;
  separation.normalize_patterson = gen.normalize_input;
  if (!subset_size_explicit) separation.subset_size = gen.n_atoms;
  gen.validate();
  arch.validate();
  train.validate();
  peaks.validate();
  separation.validate();
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace phasenet
