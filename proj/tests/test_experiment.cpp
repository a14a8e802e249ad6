#include <doctest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "fedauto/config.hpp"
#include "fedauto/errors.hpp"
#include "fedauto/experiment.hpp"
#include "fedauto/training.hpp"

using namespace fedauto;
using nlohmann::json;

namespace {

json tiny_doc() {
  return json{{"rounds", 6},
              {"clients", 8},
              {"selected_per_round", 8},
              {"failure_mode", "mixed"},
              {"dataset", {{"classes", 4}, {"dim", 6}, {"train_per_class", 40}, {"test_per_class", 20}}},
              {"model", {{"arch", "mlp"}, {"hidden", 8}}},
              {"train", {{"local_steps", 3}, {"batch_size", 8}, {"pretrain_epochs", 1}}},
              {"network",
               {{"client_overrides",
                 json::array({{{"client", 5}, {"distance_m", 40}, {"walls", 2}},
                              {{"client", 6}, {"distance_m", 21}, {"walls", 2}}})}}}};
}

ExperimentConfig tiny(const std::vector<std::string>& strategies, const std::string& failures = "mixed") {
  json doc = tiny_doc();
  doc["strategies"] = strategies;
  doc["failure_mode"] = failures;
  return parse_config(doc);
}

std::string csv_of(const RunLog& log) {
  std::ostringstream out;
  write_csv(log, out);
  return out.str();
}

}  // namespace

TEST_CASE("full participation selects every client in order") {
  Rng rng(1);
  const std::vector<double> p{0.2, 0.2, 0.2, 0.2};
  CHECK(select_clients(4, 4, p, 0.2, Participation::Full, rng) == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("partial selection frequencies follow p_i / (1 - p_s)") {
  const std::vector<double> p{0.1, 0.3, 0.0, 0.2, 0.2};
  const double p_s = 0.2;
  Rng rng(5);
  const int draws = 100000;
  std::vector<int> hits(p.size(), 0);
  for (int t = 0; t < draws / 10; ++t) {
    const auto sel = select_clients(5, 10, p, p_s, Participation::Partial, rng);
    REQUIRE(sel.size() == 10);
    for (int i : sel) ++hits[static_cast<std::size_t>(i)];
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = p[i] / (1.0 - p_s);
    const double se = std::sqrt(q * (1.0 - q) / draws);
    const double freq = static_cast<double>(hits[i]) / draws;
    CHECK(std::abs(freq - q) <= 3.0 * se + 1e-12);
  }
  CHECK(hits[2] == 0);

  // All mass on one client.
  const std::vector<double> single{0.0, 0.8, 0.0};
  for (int i : select_clients(3, 6, single, 0.2, Participation::Partial, rng)) CHECK(i == 1);
}

TEST_CASE("no failures: every record connects everyone and FedAvg weights equal p") {
  const auto cfg = tiny({"fedavg", "fedavg-ideal"}, "none");
  const auto env = build_environment(cfg, cfg.seed);
  FederatedRun run(env, cfg, Strategy::FedAvg, cfg.seed);
  for (int r = 1; r <= 3; ++r) {
    const auto rec = run.run_round(r);
    CHECK(rec.connected_count == 8);
    CHECK(rec.weights.beta_s == env.plan.p_server);
    for (std::size_t i = 0; i < 8; ++i) CHECK(rec.weights.beta_clients[i] == env.plan.p_clients[i]);
    CHECK(rec.chi2_p_beta == 0.0);
  }

  const auto log = run_experiment(cfg, cfg.seed);
  REQUIRE(log.runs.size() == 2);
  CHECK(log.runs[0].final_model == log.runs[1].final_model);
  for (std::size_t k = 0; k < log.runs[0].records.size(); ++k) {
    CHECK(log.runs[0].records[k].test_accuracy == log.runs[1].records[k].test_accuracy);
    CHECK(log.runs[0].records[k].train_loss == log.runs[1].records[k].train_loss);
  }
}

TEST_CASE("availability without failures is always up") {
  const std::vector<double> eps{0.5, 0.9};
  const std::vector<double> rates{0.1, 0.1};
  for (const auto& row : realize_availability(FailureMode::None, eps, rates, 10.0, 20, 3)) {
    CHECK(row == std::vector<bool>{true, true});
  }
  CHECK_THROWS_AS(realize_availability(FailureMode::Mixed, eps, std::vector<double>{0.1}, 10.0, 2, 3),
                  ParameterError);
}

TEST_CASE("centralized training is repeated server updates") {
  const auto cfg = tiny({"centralized"});
  const auto env = build_environment(cfg, cfg.seed);
  FederatedRun run(env, cfg, Strategy::Centralized, cfg.seed);
  ModelParams w = env.initial;
  for (int r = 1; r <= cfg.rounds; ++r) {
    const auto rec = run.run_round(r);
    Rng rng = make_rng(cfg.seed, Stream::Train, static_cast<std::uint64_t>(r), 0);
    w = server_update(w, env.server_data, cfg.train, rng);
    CHECK(rec.weights.beta_s == 1.0);
    CHECK(rec.connected_count == 0);
  }
  CHECK(run.global() == w);
  CHECK_THROWS_AS(run.run_round(cfg.rounds + 5), ContractError);
}

TEST_CASE("round count bounds") {
  json doc = tiny_doc();
  doc["rounds"] = 0;
  CHECK_THROWS_AS(parse_config(doc), ConfigError);
  doc["rounds"] = 1;
  doc["strategies"] = {"fedauto"};
  const auto log = run_experiment(parse_config(doc), 1);
  REQUIRE(log.runs.size() == 1);
  CHECK(log.runs[0].records.size() == 1);
  CHECK(log.runs[0].records[0].round == 1);
}

TEST_CASE("runs are deterministic in the seed") {
  const auto cfg = tiny({"fedavg", "fedauto", "scaffold", "tf-aggregation", "fedawe", "fedprox"});
  const auto a = csv_of(run_experiment(cfg, 3));
  CHECK(a == csv_of(run_experiment(cfg, 3)));
  CHECK(a != csv_of(run_experiment(cfg, 4)));
}

TEST_CASE("disconnected clients get zero weight and masks are paired") {
  const auto cfg = tiny({"fedavg", "fedauto", "fedauto-nom1", "fedauto-nom2", "fedawe"});
  const auto log = run_experiment(cfg, 2);
  bool saw_failure = false;
  for (const auto& run : log.runs) {
    for (std::size_t k = 0; k < run.records.size(); ++k) {
      const auto& rec = run.records[k];
      const auto& ref = log.runs[0].records[k];
      CHECK(rec.mask.selected == ref.mask.selected);
      CHECK(rec.mask.connected == ref.mask.connected);
      for (std::size_t slot = 0; slot < rec.mask.selected.size(); ++slot) {
        const auto i = static_cast<std::size_t>(rec.mask.selected[slot]);
        if (!rec.mask.connected[slot]) {
          saw_failure = true;
          CHECK(rec.weights.beta_clients[i] == 0.0);
        }
      }
      CHECK(std::abs(rec.weights.sum() - 1.0) <= 1e-12);
    }
  }
  CHECK(saw_failure);
}

TEST_CASE("csv layout and sweep summary") {
  CHECK(csv_header() ==
        "round,strategy,connected_count,chi2_p_beta,chi2_ag_tilde,train_loss,test_loss,test_acc,"
        "grad_norm_sq,flags");
  auto cfg = tiny({"fedavg", "fedauto"});
  cfg.rounds = 3;
  const auto logs = run_sweep(cfg, 2);
  REQUIRE(logs.size() == 2);
  CHECK(logs[0].seed == cfg.seed);
  CHECK(logs[1].seed == cfg.seed + 1);

  const auto text = csv_of(logs[0]);
  std::istringstream lines(text);
  std::string line;
  std::getline(lines, line);
  CHECK(line == csv_header());
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 9);
  }
  CHECK(rows == 6);

  const auto summary = summarize(logs);
  CHECK(summary["seeds"] == json::array({cfg.seed, cfg.seed + 1}));
  for (const char* name : {"fedavg", "fedauto"}) {
    const auto& s = summary["strategies"][name]["final_accuracy"];
    const auto per_seed = s["per_seed"].get<std::vector<double>>();
    REQUIRE(per_seed.size() == 2);
    CHECK(s["mean"].get<double>() == doctest::Approx((per_seed[0] + per_seed[1]) / 2.0));
    CHECK(s["std"].get<double>() ==
          doctest::Approx(std::abs(per_seed[0] - per_seed[1]) / std::sqrt(2.0)));
  }
  CHECK_THROWS_AS(run_sweep(cfg, 0), ParameterError);
  CHECK_THROWS_AS(summarize(std::span<const RunLog>{}), ParameterError);
}

TEST_CASE("config parsing rejects bad input and applies overrides") {
  json doc = tiny_doc();
  doc["dataset"]["colour"] = 3;
  try {
    parse_config(doc);
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("dataset.colour") != std::string::npos);
  }

  doc = tiny_doc();
  doc["participation"] = "partial";
  doc["selected_per_round"] = 9;
  CHECK_THROWS_AS(parse_config(doc), ConfigError);
  doc["selected_per_round"] = 4;
  CHECK(parse_config(doc).selected_per_round == 4);
  doc["participation"] = "full";
  CHECK_THROWS_AS(parse_config(doc), ConfigError);

  doc = tiny_doc();
  doc["strategies"] = {"fedavg", "fedmagic"};
  CHECK_THROWS_AS(parse_config(doc), ConfigError);

  json o = tiny_doc();
  apply_override(o, "train.learning_rate=0.2");
  apply_override(o, "name=sweep-a");
  apply_override(o, "strategies=[\"fedprox\"]");
  const auto cfg = parse_config(o);
  CHECK(cfg.train.learning_rate == 0.2);
  CHECK(cfg.name == "sweep-a");
  CHECK(cfg.strategies == std::vector<Strategy>{Strategy::FedProx});
  CHECK_THROWS_AS(apply_override(o, "train.nope=1"), ConfigError);

  // The schema round-trips through to_json.
  CHECK(to_json(parse_config(to_json(cfg))) == to_json(cfg));
}

TEST_CASE("every preset validates") {
  for (const char* name : {"ablation-suite", "iid-mixed", "noniid-intermittent", "noniid-mixed",
                           "noniid-transient", "partial-k10", "resource-opt"}) {
    CAPTURE(name);
    const auto cfg = load_config(std::string(FEDAUTO_SOURCE_DIR) + "/configs/" + name + ".json");
    CHECK(cfg.name == name);
  }
}
