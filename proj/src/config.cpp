#include "fedauto/config.hpp"

#include <fstream>
#include <sstream>

#include "fedauto/errors.hpp"

namespace fedauto {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 4> kFailureNames{"none", "transient", "intermittent",
                                                        "mixed"};
constexpr std::array<std::string_view, 12> kStrategyNames{
    "centralized", "fedavg",       "fedavg-ideal",  "fedprox",
    "scaffold",    "tf-aggregation", "fedawe",      "fedauto",
    "fedauto-nom1", "fedauto-nom2", "resourceopt1", "resourceopt2"};

template <typename Enum, std::size_t N>
Enum enum_from(std::string_view name, const std::array<std::string_view, N>& names,
               const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == name) return static_cast<Enum>(i);
  }
  throw ParameterError(std::string("unknown ") + what + " '" + std::string(name) + "'");
}

std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

// Typed access that reports the dotted path of a bad value.
class Reader {
 public:
  Reader(const json& node, std::string path) : node_(node), path_(std::move(path)) {}

  template <typename T>
  T get(std::string_view key) const {
    const auto it = node_.find(std::string(key));
    if (it == node_.end()) throw ConfigError(join(path_, key), "missing key");
    try {
      return it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(join(path_, key), "value has the wrong type: " + it->dump());
    }
  }

  Reader child(std::string_view key) const {
    const auto it = node_.find(std::string(key));
    if (it == node_.end() || !it->is_object()) {
      throw ConfigError(join(path_, key), "expected an object");
    }
    return Reader(*it, join(path_, key));
  }

  const json& raw(std::string_view key) const {
    const auto it = node_.find(std::string(key));
    if (it == node_.end()) throw ConfigError(join(path_, key), "missing key");
    return *it;
  }

  const std::string& path() const noexcept { return path_; }

 private:
  const json& node_;
  std::string path_;
};

void overlay(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string here = join(path, key);
    const auto it = base.find(key);
    if (it == base.end()) throw ConfigError(here, "unknown key");
    if (it->is_object()) {
      overlay(*it, value, here);
    } else {
      *it = value;
    }
  }
}

void reject_unknown(const json& element, std::initializer_list<std::string_view> allowed,
                    const std::string& path) {
  if (!element.is_object()) throw ConfigError(path, "expected an object");
  for (const auto& [key, value] : element.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) throw ConfigError(join(path, key), "unknown key");
  }
}

template <typename Fn>
auto wrap(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const ParameterError& e) {
    throw ConfigError(path, e.what());
  }
}

json link_table_json(const std::array<StandardProfile, kNumStandards>& table) {
  json rows = json::array();
  for (const auto& row : table) {
    rows.push_back({{"standard", std::string(to_string(row.standard))},
                    {"power_dbm", row.tx_power_dBm},
                    {"bandwidth_mhz", row.bandwidth_Hz / 1e6},
                    {"carrier_mhz", row.carrier_MHz}});
  }
  return rows;
}

}  // namespace

std::string_view to_string(FailureMode m) noexcept {
  return kFailureNames[static_cast<std::size_t>(m)];
}

std::string_view to_string(Strategy s) noexcept {
  return kStrategyNames[static_cast<std::size_t>(s)];
}

std::string_view to_string(Participation p) noexcept {
  return p == Participation::Full ? "full" : "partial";
}

FailureMode failure_mode_from_string(std::string_view name) {
  return enum_from<FailureMode>(name, kFailureNames, "failure mode");
}

Strategy strategy_from_string(std::string_view name) {
  return enum_from<Strategy>(name, kStrategyNames, "strategy");
}

Participation participation_from_string(std::string_view name) {
  if (name == "full") return Participation::Full;
  if (name == "partial") return Participation::Partial;
  throw ParameterError("unknown participation mode '" + std::string(name) + "'");
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.rounds < 1) throw ConfigError("rounds", "must be at least 1");
  if (cfg.seeds < 1) throw ConfigError("seeds", "must be at least 1");
  if (cfg.num_clients < 1) throw ConfigError("clients", "must be at least 1");
  if (cfg.selected_per_round < 1 || cfg.selected_per_round > cfg.num_clients) {
    throw ConfigError("selected_per_round", "must lie in [1, clients]");
  }
  if (cfg.participation == Participation::Full && cfg.selected_per_round != cfg.num_clients) {
    throw ConfigError("selected_per_round", "full participation selects every client");
  }
  if (cfg.strategies.empty()) throw ConfigError("strategies", "at least one strategy is required");
  const auto& d = cfg.dataset;
  if (d.kind != "synthetic" && d.kind != "idx") {
    throw ConfigError("dataset.kind", "must be 'synthetic' or 'idx'");
  }
  if (d.kind == "synthetic") {
    if (d.num_classes < 2) throw ConfigError("dataset.classes", "must be at least 2");
    if (d.dim < 1) throw ConfigError("dataset.dim", "must be at least 1");
    if (d.train_per_class < 1) throw ConfigError("dataset.train_per_class", "must be at least 1");
    if (d.test_per_class < 1) throw ConfigError("dataset.test_per_class", "must be at least 1");
    if (!(d.separation > 0.0)) throw ConfigError("dataset.separation", "must be positive");
  }
  if (cfg.partition.scheme != "iid" && cfg.partition.scheme != "shard") {
    throw ConfigError("partition.scheme", "must be 'iid' or 'shard'");
  }
  if (!(cfg.partition.public_fraction > 0.0 && cfg.partition.public_fraction < 1.0)) {
    throw ConfigError("partition.public_fraction", "must lie in (0, 1)");
  }
  if (cfg.partition.classes_per_client < 1) {
    throw ConfigError("partition.classes_per_client", "must be at least 1");
  }
  if (cfg.model.arch != "linear" && cfg.model.arch != "mlp") {
    throw ConfigError("model.arch", "must be 'linear' or 'mlp'");
  }
  if (cfg.model.arch == "mlp" && cfg.model.hidden < 1) {
    throw ConfigError("model.hidden", "must be at least 1");
  }
  if (!(cfg.train.learning_rate > 0.0)) throw ConfigError("train.learning_rate", "must be positive");
  if (cfg.train.local_steps < 1) throw ConfigError("train.local_steps", "must be at least 1");
  if (cfg.train.batch_size < 1) throw ConfigError("train.batch_size", "must be at least 1");
  if (cfg.pretrain_epochs < 0) throw ConfigError("train.pretrain_epochs", "must be non-negative");
  if (cfg.lr_drop_round < 0) throw ConfigError("train.lr_drop_round", "must be non-negative");
  if (!(cfg.lr_drop_factor > 0.0)) throw ConfigError("train.lr_drop_factor", "must be positive");
  if (!(cfg.strategy.prox_mu >= 0.0)) throw ConfigError("strategy_params.prox_mu", "must be non-negative");
  if (!(cfg.strategy.tf_eps_threshold > 0.0 && cfg.strategy.tf_eps_threshold < 1.0)) {
    throw ConfigError("strategy_params.tf_eps_threshold", "must lie in (0, 1)");
  }
  const auto& n = cfg.network;
  if (!(n.model_size_bits > 0.0)) throw ConfigError("network.model_size_bits", "must be positive");
  if (!(n.tx_delay_s > 0.0)) throw ConfigError("network.tx_delay_s", "must be positive");
  if (!(n.intermittent_alpha > 0.0)) throw ConfigError("network.intermittent_alpha", "must be positive");
  if (!n.intermittent_rates.empty() &&
      n.intermittent_rates.size() != static_cast<std::size_t>(cfg.num_clients)) {
    throw ConfigError("network.intermittent_rates", "needs one rate per client or none");
  }
  for (double r : n.intermittent_rates) {
    if (!(r >= 0.0)) throw ConfigError("network.intermittent_rates", "rates must be non-negative");
  }
  for (const auto& o : n.overrides) {
    if (o.client < 1 || o.client > cfg.num_clients) {
      throw ConfigError("network.client_overrides.client", "client id out of range");
    }
    if (o.distance_m && !(*o.distance_m > 0.0)) {
      throw ConfigError("network.client_overrides.distance_m", "must be positive");
    }
    if (o.walls && *o.walls < 0) throw ConfigError("network.client_overrides.walls", "must be non-negative");
  }
  for (const auto& row : n.link_table) {
    if (!(row.bandwidth_Hz > 0.0)) throw ConfigError("network.link_table.bandwidth_mhz", "must be positive");
    if (row.standard != Standard::Wired && !(row.carrier_MHz > 0.0)) {
      throw ConfigError("network.link_table.carrier_mhz", "must be positive for wireless rows");
    }
  }
  const auto& ro = n.resource_opt;
  if (!(ro.epsilon_threshold > 0.0 && ro.epsilon_threshold < 1.0)) {
    throw ConfigError("network.resource_opt.eps_threshold", "must lie in (0, 1)");
  }
  if (!(ro.step_size > 0.0)) throw ConfigError("network.resource_opt.step_size", "must be positive");
  if (ro.iterations < 0) throw ConfigError("network.resource_opt.iterations", "must be non-negative");
  if (cfg.diagnostic_stride < 1) throw ConfigError("diagnostics.stride", "must be at least 1");
}

json to_json(const ExperimentConfig& cfg) {
  json strategies = json::array();
  for (auto s : cfg.strategies) strategies.push_back(std::string(to_string(s)));
  json overrides = json::array();
  for (const auto& o : cfg.network.overrides) {
    json e{{"client", o.client}};
    if (o.distance_m) e["distance_m"] = *o.distance_m;
    if (o.walls) e["walls"] = *o.walls;
    overrides.push_back(e);
  }
  const auto& d = cfg.dataset;
  const auto& p = cfg.network.placement;
  const auto& ro = cfg.network.resource_opt;
  return json{
      {"name", cfg.name},
      {"seed", cfg.seed},
      {"seeds", cfg.seeds},
      {"rounds", cfg.rounds},
      {"clients", cfg.num_clients},
      {"selected_per_round", cfg.selected_per_round},
      {"participation", std::string(to_string(cfg.participation))},
      {"failure_mode", std::string(to_string(cfg.failure_mode))},
      {"strategies", strategies},
      {"dataset",
       {{"kind", d.kind},
        {"classes", d.num_classes},
        {"dim", d.dim},
        {"train_per_class", d.train_per_class},
        {"test_per_class", d.test_per_class},
        {"separation", d.separation},
        {"train_images", d.train_images},
        {"train_labels", d.train_labels},
        {"test_images", d.test_images},
        {"test_labels", d.test_labels}}},
      {"partition",
       {{"scheme", cfg.partition.scheme},
        {"classes_per_client", cfg.partition.classes_per_client},
        {"public_fraction", cfg.partition.public_fraction}}},
      {"model", {{"arch", cfg.model.arch}, {"hidden", cfg.model.hidden}}},
      {"train",
       {{"learning_rate", cfg.train.learning_rate},
        {"local_steps", cfg.train.local_steps},
        {"batch_size", cfg.train.batch_size},
        {"pretrain_epochs", cfg.pretrain_epochs},
        {"lr_drop_round", cfg.lr_drop_round},
        {"lr_drop_factor", cfg.lr_drop_factor}}},
      {"strategy_params",
       {{"prox_mu", cfg.strategy.prox_mu},
        {"fedawe_gamma", cfg.strategy.fedawe_gamma},
        {"scaffold_gamma", cfg.strategy.scaffold_gamma},
        {"tf_eps_threshold", cfg.strategy.tf_eps_threshold},
        {"relax_zero_connected", cfg.strategy.relax_zero_connected}}},
      {"network",
       {{"model_size_bits", cfg.network.model_size_bits},
        {"tx_delay_s", cfg.network.tx_delay_s},
        {"intermittent_alpha", cfg.network.intermittent_alpha},
        {"intermittent_rates", cfg.network.intermittent_rates},
        {"link_table", link_table_json(cfg.network.link_table)},
        {"placement",
         {{"room_side_m", p.room_side_m},
          {"ap_height_m", p.ap_height_m},
          {"cell_radius_m", p.cell_radius_m},
          {"bs_height_m", p.bs_height_m},
          {"client_height_m", p.client_height_m},
          {"max_indoor_walls", p.max_indoor_walls},
          {"max_outdoor_walls", p.max_outdoor_walls}}},
        {"client_overrides", overrides},
        {"resource_opt",
         {{"eps_threshold", ro.epsilon_threshold},
          {"step_size", ro.step_size},
          {"iterations", ro.iterations}}}}},
      {"diagnostics", {{"stride", cfg.diagnostic_stride}}},
      {"output", {{"dir", cfg.output_dir}}},
  };
}

json default_config_json() { return to_json(ExperimentConfig{}); }

ExperimentConfig parse_config(const json& doc) {
  json merged = default_config_json();
  overlay(merged, doc, "");
  const Reader root(merged, "");
  ExperimentConfig cfg;
  cfg.name = root.get<std::string>("name");
  cfg.seed = root.get<std::uint64_t>("seed");
  cfg.seeds = root.get<int>("seeds");
  cfg.rounds = root.get<int>("rounds");
  cfg.num_clients = root.get<int>("clients");
  cfg.selected_per_round = root.get<int>("selected_per_round");
  cfg.participation = wrap("participation", [&] {
    return participation_from_string(root.get<std::string>("participation"));
  });
  cfg.failure_mode = wrap("failure_mode", [&] {
    return failure_mode_from_string(root.get<std::string>("failure_mode"));
  });
  cfg.strategies.clear();
  for (const auto& name : root.get<std::vector<std::string>>("strategies")) {
    cfg.strategies.push_back(wrap("strategies", [&] { return strategy_from_string(name); }));
  }

  const auto d = root.child("dataset");
  cfg.dataset.kind = d.get<std::string>("kind");
  cfg.dataset.num_classes = d.get<int>("classes");
  cfg.dataset.dim = d.get<std::size_t>("dim");
  cfg.dataset.train_per_class = d.get<std::size_t>("train_per_class");
  cfg.dataset.test_per_class = d.get<std::size_t>("test_per_class");
  cfg.dataset.separation = d.get<double>("separation");
  cfg.dataset.train_images = d.get<std::string>("train_images");
  cfg.dataset.train_labels = d.get<std::string>("train_labels");
  cfg.dataset.test_images = d.get<std::string>("test_images");
  cfg.dataset.test_labels = d.get<std::string>("test_labels");

  const auto part = root.child("partition");
  cfg.partition.scheme = part.get<std::string>("scheme");
  cfg.partition.classes_per_client = part.get<int>("classes_per_client");
  cfg.partition.public_fraction = part.get<double>("public_fraction");

  const auto m = root.child("model");
  cfg.model.arch = m.get<std::string>("arch");
  cfg.model.hidden = m.get<std::size_t>("hidden");

  const auto t = root.child("train");
  cfg.train.learning_rate = t.get<double>("learning_rate");
  cfg.train.local_steps = t.get<int>("local_steps");
  cfg.train.batch_size = t.get<std::size_t>("batch_size");
  cfg.pretrain_epochs = t.get<int>("pretrain_epochs");
  cfg.lr_drop_round = t.get<int>("lr_drop_round");
  cfg.lr_drop_factor = t.get<double>("lr_drop_factor");

  const auto sp = root.child("strategy_params");
  cfg.strategy.prox_mu = sp.get<double>("prox_mu");
  cfg.strategy.fedawe_gamma = sp.get<double>("fedawe_gamma");
  cfg.strategy.scaffold_gamma = sp.get<double>("scaffold_gamma");
  cfg.strategy.tf_eps_threshold = sp.get<double>("tf_eps_threshold");
  cfg.strategy.relax_zero_connected = sp.get<bool>("relax_zero_connected");

  const auto n = root.child("network");
  cfg.network.model_size_bits = n.get<double>("model_size_bits");
  cfg.network.tx_delay_s = n.get<double>("tx_delay_s");
  cfg.network.intermittent_alpha = n.get<double>("intermittent_alpha");
  cfg.network.intermittent_rates = n.get<std::vector<double>>("intermittent_rates");

  const json& table = n.raw("link_table");
  const std::string table_path = "network.link_table";
  if (!table.is_array() || table.size() != kNumStandards) {
    throw ConfigError(table_path, "needs exactly one row per standard");
  }
  std::array<bool, kNumStandards> seen{};
  for (const auto& row : table) {
    reject_unknown(row, {"standard", "power_dbm", "bandwidth_mhz", "carrier_mhz"}, table_path);
    const Reader r(row, table_path);
    const Standard s =
        wrap(table_path + ".standard", [&] { return standard_from_string(r.get<std::string>("standard")); });
    const auto k = static_cast<std::size_t>(s);
    if (seen[k]) throw ConfigError(table_path + ".standard", "duplicate standard");
    seen[k] = true;
    cfg.network.link_table[k] = {s, r.get<double>("power_dbm"), r.get<double>("bandwidth_mhz") * 1e6,
                                 r.get<double>("carrier_mhz")};
  }

  const auto pl = n.child("placement");
  auto& p = cfg.network.placement;
  p.room_side_m = pl.get<double>("room_side_m");
  p.ap_height_m = pl.get<double>("ap_height_m");
  p.cell_radius_m = pl.get<double>("cell_radius_m");
  p.bs_height_m = pl.get<double>("bs_height_m");
  p.client_height_m = pl.get<double>("client_height_m");
  p.max_indoor_walls = pl.get<int>("max_indoor_walls");
  p.max_outdoor_walls = pl.get<int>("max_outdoor_walls");

  const json& overrides = n.raw("client_overrides");
  const std::string ov_path = "network.client_overrides";
  if (!overrides.is_array()) throw ConfigError(ov_path, "expected an array");
  for (const auto& e : overrides) {
    reject_unknown(e, {"client", "distance_m", "walls"}, ov_path);
    const Reader r(e, ov_path);
    LinkOverride o;
    o.client = r.get<int>("client");
    if (e.contains("distance_m")) o.distance_m = r.get<double>("distance_m");
    if (e.contains("walls")) o.walls = r.get<int>("walls");
    cfg.network.overrides.push_back(o);
  }

  const auto ro = n.child("resource_opt");
  cfg.network.resource_opt.epsilon_threshold = ro.get<double>("eps_threshold");
  cfg.network.resource_opt.step_size = ro.get<double>("step_size");
  cfg.network.resource_opt.iterations = ro.get<int>("iterations");

  cfg.diagnostic_stride = root.child("diagnostics").get<int>("stride");
  cfg.output_dir = root.child("output").get<std::string>("dir");
  validate(cfg);
  return cfg;
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError(std::string(assignment), "override must look like key.path=value");
  }
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));

  const json schema = default_config_json();
  const json* probe = &schema;
  json* target = &doc;
  std::string key;
  std::istringstream parts(path);
  std::vector<std::string> keys;
  while (std::getline(parts, key, '.')) keys.push_back(key);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (!probe->is_object() || !probe->contains(keys[i])) throw ConfigError(path, "unknown key");
    probe = &(*probe)[keys[i]];
    if (!target->is_object()) *target = json::object();
    if (i + 1 < keys.size()) target = &(*target)[keys[i]];
  }
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  (*target)[keys.back()] = value;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             std::span<const std::string> overrides) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config file " + path.string());
  json doc = json::parse(in, nullptr, false, true);
  if (doc.is_discarded()) throw FormatError("config file " + path.string() + " is not valid JSON");
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_config(doc);
}

}  // namespace fedauto
