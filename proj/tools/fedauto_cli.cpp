#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedauto/config.hpp"
#include "fedauto/errors.hpp"
#include "fedauto/experiment.hpp"

namespace fs = std::filesystem;
using namespace fedauto;

namespace {

fs::path output_dir(const ExperimentConfig& cfg, const std::string& flag) {
  fs::path dir = flag.empty() ? fs::path(cfg.output_dir) : fs::path(flag);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_log(const RunLog& log, const fs::path& dir, const std::string& name) {
  std::ofstream out(dir / (name + "_seed" + std::to_string(log.seed) + ".csv"), std::ios::binary);
  if (!out) throw std::runtime_error("cannot write the CSV log in " + dir.string());
  write_csv(log, out);
  if (!out) throw std::runtime_error("CSV write failed in " + dir.string());
}

void print_summary(const nlohmann::json& summary) {
  for (const auto& [name, s] : summary["strategies"].items()) {
    std::printf("%-16s final_acc %.4f +- %.4f  tail10_acc %.4f +- %.4f\n", name.c_str(),
                s["final_accuracy"]["mean"].get<double>(), s["final_accuracy"]["std"].get<double>(),
                s["tail10_accuracy"]["mean"].get<double>(), s["tail10_accuracy"]["std"].get<double>());
  }
}

int epsilon_table(const ExperimentConfig& cfg) {
  const auto links = build_links(cfg, cfg.seed);
  std::printf("client,standard,distance_m,walls,los,power_dbm,bandwidth_mhz,epsilon,intermittent_rate\n");
  for (std::size_t i = 0; i < links.size(); ++i) {
    const auto& l = links[i];
    const double rate = cfg.network.intermittent_rates.empty()
                            ? default_intermittent_rate(static_cast<int>(i))
                            : cfg.network.intermittent_rates[i];
    std::printf("%zu,%s,%.3f,%d,%d,%.2f,%.3f,%.6g,%.0e\n", i + 1,
                std::string(to_string(l.standard)).c_str(), l.distance_km * 1000.0, l.wall_count,
                l.line_of_sight ? 1 : 0, l.tx_power_dBm, l.bandwidth_Hz / 1e6,
                make_transient_model(l).epsilon, rate);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated fine-tuning simulator over unreliable networks"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_flag;
  int seeds = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("config", config_path, "Experiment config (JSON)")->required();
    cmd->add_option("--set", overrides, "Override a config key: dotted.path=value");
  };
  auto* run = app.add_subcommand("run", "Run every configured strategy for the config's seed");
  add_common(run);
  run->add_option("--out", out_flag, "Output directory (default: output.dir)");
  auto* sweep = app.add_subcommand("sweep", "Run consecutive seeds and summarize accuracy");
  add_common(sweep);
  sweep->add_option("--seeds", seeds, "Number of seeds (default: config 'seeds')");
  sweep->add_option("--out", out_flag, "Output directory (default: output.dir)");
  auto* eps = app.add_subcommand("epsilon-table", "Print per-client transient failure probabilities");
  add_common(eps);
  auto* val = app.add_subcommand("validate", "Check a config file");
  add_common(val);

  CLI11_PARSE(app, argc, argv);

  try {
    const ExperimentConfig cfg = load_config(config_path, overrides);
    if (*val) {
      std::printf("ok: %s\n", cfg.name.c_str());
      return 0;
    }
    if (*eps) return epsilon_table(cfg);
    if (*run) {
      const auto dir = output_dir(cfg, out_flag);
      const std::vector<RunLog> logs{run_experiment(cfg, cfg.seed)};
      write_log(logs.front(), dir, cfg.name);
      const auto summary = summarize(logs);
      write_file(dir / (cfg.name + "_seed" + std::to_string(cfg.seed) + "_summary.json"),
                 summary.dump(2) + "\n");
      print_summary(summary);
      return 0;
    }
    const auto dir = output_dir(cfg, out_flag);
    const auto logs = run_sweep(cfg, seeds > 0 ? seeds : cfg.seeds);
    for (const auto& log : logs) write_log(log, dir, cfg.name);
    const auto summary = summarize(logs);
    write_file(dir / (cfg.name + "_summary.json"), summary.dump(2) + "\n");
    print_summary(summary);
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
