#include "fedauto/experiment.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "fedauto/errors.hpp"
#include "fedauto/training.hpp"

namespace fedauto {

using nlohmann::json;

Arch make_arch(const ExperimentConfig& cfg, std::size_t input_dim, int num_classes) {
  if (cfg.model.arch == "linear") return Arch::linear(input_dim, num_classes);
  return Arch::mlp(input_dim, cfg.model.hidden, num_classes);
}

std::vector<LinkConfig> build_links(const ExperimentConfig& cfg, std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::Placement);
  const auto& net = cfg.network;
  auto links = place_clients(cfg.num_clients, net.link_table, net.placement, net.model_size_bits,
                             net.tx_delay_s, rng);
  for (const auto& o : net.overrides) {
    auto& link = links.at(static_cast<std::size_t>(o.client - 1));
    if (o.distance_m) link.distance_km = *o.distance_m / 1000.0;
    if (o.walls) {
      link.wall_count = *o.walls;
      link.line_of_sight = *o.walls == 0;
    }
  }
  return links;
}

namespace {

LabeledDataset all_of(const LabeledDataset& d, const IndexList& idx) { return d.subset(idx); }

std::pair<LabeledDataset, LabeledDataset> load_data(const ExperimentConfig& cfg,
                                                    std::uint64_t seed) {
  const auto& d = cfg.dataset;
  if (d.kind == "idx") {
    return {load_idx(d.train_images, d.train_labels), load_idx(d.test_images, d.test_labels)};
  }
  const auto full = synth_gaussian_mixture(d.num_classes, d.dim, d.train_per_class + d.test_per_class,
                                           d.separation, derive_seed(seed, Stream::Data));
  return split_per_class(full, d.train_per_class);
}

}  // namespace

Environment build_environment(const ExperimentConfig& cfg, std::uint64_t seed) {
  Environment env;
  std::tie(env.train, env.test) = load_data(cfg, seed);
  const std::uint64_t part_seed = derive_seed(seed, Stream::Partition);
  env.plan = cfg.partition.scheme == "iid"
                 ? partition_iid(env.train, cfg.num_clients, cfg.partition.public_fraction, part_seed)
                 : partition_shard_noniid(env.train, cfg.num_clients,
                                          cfg.partition.classes_per_client,
                                          cfg.partition.public_fraction, part_seed);
  env.server_data = all_of(env.train, env.plan.server);
  env.alpha_s = class_distribution(env.train, env.plan.server);
  std::vector<ClassDistribution> locals{env.alpha_s};
  IndexList pooled = env.plan.server;
  for (const auto& idx : env.plan.clients) {
    env.client_data.push_back(all_of(env.train, idx));
    env.client_alphas.push_back(class_distribution(env.train, idx));
    env.client_sizes.push_back(idx.size());
    locals.push_back(env.client_alphas.back());
    pooled.insert(pooled.end(), idx.begin(), idx.end());
  }
  std::sort(pooled.begin(), pooled.end());
  env.pooled = env.train.subset(pooled);
  env.alpha_g = global_distribution(env.plan, locals);

  env.links = build_links(cfg, seed);
  for (const auto& link : env.links) env.epsilon0.push_back(make_transient_model(link).epsilon);
  env.intermittent_rates = cfg.network.intermittent_rates;
  if (env.intermittent_rates.empty()) {
    for (int i = 0; i < cfg.num_clients; ++i) {
      env.intermittent_rates.push_back(default_intermittent_rate(i));
    }
  }

  const Arch arch = make_arch(cfg, env.train.num_features(), env.train.num_classes());
  env.initial = init_model(arch, derive_seed(seed, Stream::Init));
  if (cfg.pretrain_epochs > 0) {
    TrainConfig pre = cfg.train;
    pre.variant = Variant::Plain;
    const std::size_t n = env.server_data.size();
    const std::size_t batch = std::min(pre.batch_size, n);
    pre.local_steps = cfg.pretrain_epochs * static_cast<int>((n + batch - 1) / batch);
    Rng rng = make_rng(seed, Stream::Pretrain);
    env.initial = server_update(env.initial, env.server_data, pre, rng);
  }
  return env;
}

std::vector<int> sample_with_replacement(std::span<const double> probs, int k, Rng& rng) {
  std::vector<double> cumulative(probs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0)) throw ParameterError("selection probabilities must be non-negative");
    total += probs[i];
    cumulative[i] = total;
  }
  if (!(total > 0.0)) throw ParameterError("selection probabilities sum to zero");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    const double u = uniform01(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    // Never land on a zero-probability tail entry.
    if (it == cumulative.end()) --it;
    auto idx = static_cast<std::size_t>(it - cumulative.begin());
    while (probs[idx] == 0.0) --idx;
    out.push_back(static_cast<int>(idx));
  }
  return out;
}

std::vector<int> select_clients(int num_clients, int k, std::span<const double> p_clients,
                                double p_s, Participation mode, Rng& rng) {
  if (mode == Participation::Full) {
    std::vector<int> all(static_cast<std::size_t>(num_clients));
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  if (p_clients.size() != static_cast<std::size_t>(num_clients)) {
    throw ParameterError("one dataset weight per client is required");
  }
  if (!(p_s < 1.0)) throw ParameterError("p_s must be below 1 for client sampling");
  std::vector<double> q(p_clients.begin(), p_clients.end());
  for (auto& v : q) v /= (1.0 - p_s);
  return sample_with_replacement(q, k, rng);
}

std::vector<std::vector<bool>> realize_availability(FailureMode mode,
                                                    std::span<const double> epsilon,
                                                    std::span<const double> rates,
                                                    double duration_alpha, int rounds,
                                                    std::uint64_t seed) {
  const std::size_t n = epsilon.size();
  if (rates.size() != n) throw ParameterError("one intermittent rate per client is required");
  std::vector<std::vector<bool>> up(static_cast<std::size_t>(rounds), std::vector<bool>(n, true));
  const bool transient = mode == FailureMode::Transient || mode == FailureMode::Mixed;
  const bool intermittent = mode == FailureMode::Intermittent || mode == FailureMode::Mixed;
  std::vector<IntermittentState> states;
  for (std::size_t i = 0; i < n; ++i) {
    states.push_back(make_intermittent_state(rates[i], duration_alpha, 0));
  }
  for (int r = 1; r <= rounds; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      bool ok = true;
      if (transient) {
        Rng rng = make_rng(seed, Stream::Transient, static_cast<std::uint64_t>(r), i);
        ok = sample_transient(epsilon[i], rng) && ok;
      }
      if (intermittent) {
        Rng rng = make_rng(seed, Stream::Intermittent, static_cast<std::uint64_t>(r), i);
        ok = intermittent_step(states[i], r, rng) && ok;
      }
      up[static_cast<std::size_t>(r - 1)][i] = ok;
    }
  }
  return up;
}

FederatedRun::FederatedRun(const Environment& env, const ExperimentConfig& cfg, Strategy strategy,
                           std::uint64_t seed)
    : env_(env), cfg_(cfg), strategy_(strategy), seed_(seed), global_(env.initial),
      epsilon_(env.epsilon0) {
  const auto n = static_cast<std::size_t>(cfg.num_clients);
  FailureMode mode = cfg.failure_mode;
  std::vector<bool> excluded(n, false);
  if (strategy == Strategy::FedAvgIdeal || strategy == Strategy::Centralized) {
    mode = FailureMode::None;
  }
  if (strategy == Strategy::ResourceOpt1 || strategy == Strategy::ResourceOpt2) {
    const auto result = strategy == Strategy::ResourceOpt1
                            ? resource_opt_joint(env.links, ChannelParams{}, cfg.network.resource_opt)
                            : resource_opt_per_standard(env.links, ChannelParams{},
                                                        cfg.network.resource_opt);
    epsilon_ = result.epsilon;
    for (std::size_t i = 0; i < n; ++i) excluded[i] = !result.eligible[i];
  }
  availability_ = realize_availability(mode, epsilon_, env.intermittent_rates,
                                       cfg.network.intermittent_alpha, cfg.rounds, seed);
  for (auto& row : availability_) {
    for (std::size_t i = 0; i < n; ++i) {
      if (excluded[i]) row[i] = false;
    }
  }
  if (strategy == Strategy::TFAggregation) {
    tf_selection_ = tf_selection_probabilities(env.plan.p_clients, env.epsilon0,
                                               cfg.strategy.tf_eps_threshold);
  }
  if (strategy == Strategy::Scaffold) {
    server_cv_.assign(global_.theta.size(), 0.0);
    client_cvs_.assign(n, server_cv_);
  }
  last_success_.assign(n, 0);
}

TrainConfig FederatedRun::round_config(int round) const {
  TrainConfig t = cfg_.train;
  if (cfg_.lr_drop_round > 0 && round >= cfg_.lr_drop_round) t.learning_rate *= cfg_.lr_drop_factor;
  if (strategy_ == Strategy::FedProx) {
    t.variant = Variant::Prox;
    t.mu = cfg_.strategy.prox_mu;
  } else if (strategy_ == Strategy::Scaffold) {
    t.variant = Variant::Scaffold;
  }
  return t;
}

ConnectivityMask FederatedRun::draw_mask(int round) {
  ConnectivityMask mask;
  Rng rng = make_rng(seed_, Stream::Selection, static_cast<std::uint64_t>(round));
  if (strategy_ == Strategy::TFAggregation) {
    if (std::any_of(tf_selection_.begin(), tf_selection_.end(), [](double s) { return s > 0.0; })) {
      mask.selected = sample_with_replacement(tf_selection_, cfg_.selected_per_round, rng);
    }
  } else {
    mask.selected = select_clients(cfg_.num_clients, cfg_.selected_per_round, env_.plan.p_clients,
                                   env_.plan.p_server, cfg_.participation, rng);
  }
  const auto& up = availability_.at(static_cast<std::size_t>(round - 1));
  for (int i : mask.selected) mask.connected.push_back(up[static_cast<std::size_t>(i)]);
  return mask;
}

namespace {

bool uses_server_model(Strategy s) {
  return s != Strategy::Scaffold && s != Strategy::TFAggregation;
}

bool is_fedauto_family(Strategy s) {
  return s == Strategy::FedAuto || s == Strategy::FedAutoNoM1 || s == Strategy::FedAutoNoM2;
}

}  // namespace

RoundRecord FederatedRun::run_round(int round) {
  if (round != next_round_) throw ContractError("rounds must run in order");
  ++next_round_;
  const auto n = static_cast<std::size_t>(cfg_.num_clients);
  const TrainConfig tcfg = round_config(round);
  const auto r64 = static_cast<std::uint64_t>(round);

  RoundRecord rec;
  rec.round = round;
  rec.strategy = std::string(to_string(strategy_));
  if (cfg_.lr_drop_round > 0 && round == cfg_.lr_drop_round) rec.flags.push_back("lr_drop");

  const ModelParams previous = global_;
  const ClassDistribution* alpha_miss = nullptr;
  ClassDistribution miss_dist;
  ModelParams compensatory;
  bool have_compensatory = false;

  if (strategy_ == Strategy::Centralized) {
    Rng rng = make_rng(seed_, Stream::Train, r64, 0);
    global_ = server_update(previous, env_.server_data, tcfg, rng);
    rec.weights.beta_s = 1.0;
    rec.weights.beta_clients.assign(n, 0.0);
  } else {
    rec.mask = draw_mask(round);
    const auto connected = rec.mask.connected_clients();

    ModelParams server_model;
    if (uses_server_model(strategy_)) {
      Rng rng = make_rng(seed_, Stream::Train, r64, 0);
      server_model = server_update(previous, env_.server_data, tcfg, rng);
    }

    std::vector<ModelParams> client_models(n);
    std::vector<std::vector<double>> new_cvs;
    if (strategy_ == Strategy::Scaffold) new_cvs = client_cvs_;
    for (int i : connected) {
      const auto k = static_cast<std::size_t>(i);
      Rng rng = make_rng(seed_, Stream::Train, r64, k + 1);
      const auto& data = env_.client_data[k];
      switch (strategy_) {
        case Strategy::FedProx:
          client_models[k] = prox_local_update(previous, data, tcfg, previous, rng);
          break;
        case Strategy::Scaffold: {
          auto res = scaffold_local_update(previous, data, tcfg, server_cv_, client_cvs_[k],
                                           tcfg.local_steps, rng);
          client_models[k] = std::move(res.model);
          new_cvs[k] = std::move(res.client_cv);
          break;
        }
        case Strategy::FedAWE:
          client_models[k] = fedawe_correct(local_update(previous, data, tcfg, rng), previous, round,
                                            last_success_[k], cfg_.strategy.fedawe_gamma);
          break;
        default:
          client_models[k] = local_update(previous, data, tcfg, rng);
      }
      last_success_[k] = round;
    }

    if (is_fedauto_family(strategy_)) {
      std::vector<ClassDistribution> seen;
      for (int i : connected) seen.push_back(env_.client_alphas[static_cast<std::size_t>(i)]);
      const auto missing = detect_missing_classes(seen, env_.train.num_classes());
      if (!missing.empty() && strategy_ != Strategy::FedAutoNoM1) {
        try {
          Rng rng = make_rng(seed_, Stream::Compensatory, r64);
          auto comp = compensatory_update(previous, env_.server_data, missing, tcfg, rng);
          compensatory = std::move(comp.model);
          miss_dist = std::move(comp.alpha_miss);
          alpha_miss = &miss_dist;
          have_compensatory = true;
          if (!comp.uncovered.empty()) rec.flags.push_back("partial_coverage");
        } catch (const CoverageGap&) {
          rec.flags.push_back("coverage_gap");
        }
      }
      FedAutoOptions opts;
      opts.relax_zero_connected = cfg_.strategy.relax_zero_connected;
      const auto variant = strategy_ == Strategy::FedAuto       ? AblationVariant::Full
                           : strategy_ == Strategy::FedAutoNoM1 ? AblationVariant::NoModule1
                                                                : AblationVariant::NoModule2;
      rec.weights = ablation_weights(variant, rec.mask, env_.alpha_g, env_.alpha_s, alpha_miss,
                                     env_.client_alphas, opts);
      global_ = aggregate(rec.weights, server_model, have_compensatory ? &compensatory : nullptr,
                          client_models);
    } else if (strategy_ == Strategy::TFAggregation) {
      rec.weights.beta_clients.assign(n, 0.0);
      rec.weights.normalized = false;
      if (rec.mask.selected.empty()) {
        rec.weights.degenerate = true;
      } else {
        rec.weights = tf_aggregation_weights(rec.mask, env_.plan.p_clients, env_.epsilon0,
                                             tf_selection_);
      }
      // No connected slot: the printed sum is empty, so the global model is kept.
      if (!rec.weights.degenerate) global_ = aggregate(rec.weights, previous, nullptr, client_models);
    } else if (strategy_ == Strategy::Scaffold) {
      auto res = scaffold_global_update(previous, client_models, server_cv_, client_cvs_, new_cvs,
                                        rec.mask, cfg_.strategy.scaffold_gamma, cfg_.num_clients);
      global_ = std::move(res.model);
      server_cv_ = std::move(res.server_cv);
      for (int i : connected) {
        const auto k = static_cast<std::size_t>(i);
        client_cvs_[k] = std::move(new_cvs[k]);
      }
      rec.weights.beta_clients.assign(n, 0.0);
      rec.weights.degenerate = res.degenerate;
      for (int i : connected) {
        rec.weights.beta_clients[static_cast<std::size_t>(i)] =
            cfg_.strategy.scaffold_gamma / static_cast<double>(connected.size());
      }
      if (res.degenerate) rec.weights.beta_s = 1.0;
    } else {
      rec.weights = fedavg_weights(rec.mask, env_.plan.server_size(), env_.client_sizes,
                                   cfg_.participation);
      global_ = aggregate(rec.weights, server_model, nullptr, client_models);
    }
    rec.connected_count = connected.size();
  }
  if (rec.weights.degenerate) rec.flags.push_back("degenerate");

  const auto chi_pb = chi_square_p_beta(rec.weights, env_.plan.p_server, env_.plan.p_clients);
  const auto tilde = effective_distribution(rec.weights, env_.alpha_s, alpha_miss, env_.client_alphas);
  const auto chi_ag = chi_square(tilde.alpha, env_.alpha_g.alpha);
  rec.chi2_p_beta = chi_pb.value;
  rec.chi2_alpha_g_tilde = chi_ag.value;
  if (chi_pb.infinite) rec.flags.push_back("chi2_p_beta_inf");
  if (chi_ag.infinite) rec.flags.push_back("chi2_ag_tilde_inf");

  const auto train_eval = evaluate(global_, env_.pooled);
  const auto test_eval = evaluate(global_, env_.test);
  rec.train_loss = train_eval.loss;
  rec.test_loss = test_eval.loss;
  rec.test_accuracy = test_eval.accuracy;
  if (round % cfg_.diagnostic_stride == 0) {
    const auto g = loss_and_gradient(global_, env_.pooled).gradient;
    double s = 0.0;
    for (double v : g) s += v * v;
    rec.global_grad_norm_sq = s;
  }
  return rec;
}

RunLog run_experiment(const ExperimentConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  const Environment env = build_environment(cfg, seed);
  RunLog log;
  log.config = to_json(cfg);
  log.seed = seed;
  for (Strategy s : cfg.strategies) {
    FederatedRun run(env, cfg, s, seed);
    StrategyRun out;
    out.strategy = s;
    for (int r = 1; r <= cfg.rounds; ++r) {
      try {
        out.records.push_back(run.run_round(r));
      } catch (const std::exception& e) {
        throw std::runtime_error(std::string(to_string(s)) + " round " + std::to_string(r) + ": " +
                                 e.what());
      }
    }
    out.final_model = run.global();
    log.runs.push_back(std::move(out));
  }
  return log;
}

std::vector<RunLog> run_sweep(const ExperimentConfig& cfg, int num_seeds) {
  if (num_seeds < 1) throw ParameterError("a sweep needs at least one seed");
  std::vector<RunLog> logs;
  for (int k = 0; k < num_seeds; ++k) {
    logs.push_back(run_experiment(cfg, cfg.seed + static_cast<std::uint64_t>(k)));
  }
  return logs;
}

std::string csv_header() {
  return "round,strategy,connected_count,chi2_p_beta,chi2_ag_tilde,train_loss,test_loss,test_acc,"
         "grad_norm_sq,flags";
}

namespace {

std::string number(double v) {
  if (std::isinf(v)) v = v > 0 ? DBL_MAX : -DBL_MAX;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_csv(const RunLog& log, std::ostream& out) {
  out << csv_header() << '\n';
  for (const auto& run : log.runs) {
    for (const auto& r : run.records) {
      std::string flags;
      for (const auto& f : r.flags) flags += (flags.empty() ? "" : ";") + f;
      out << r.round << ',' << r.strategy << ',' << r.connected_count << ','
          << number(r.chi2_p_beta) << ',' << number(r.chi2_alpha_g_tilde) << ','
          << number(r.train_loss) << ',' << number(r.test_loss) << ',' << number(r.test_accuracy)
          << ',' << (r.global_grad_norm_sq ? number(*r.global_grad_norm_sq) : std::string()) << ','
          << flags << '\n';
    }
  }
}

double tail_accuracy(const StrategyRun& run, int window) {
  if (run.records.empty()) throw ParameterError("run has no records");
  const std::size_t w = std::min(run.records.size(), static_cast<std::size_t>(std::max(window, 1)));
  double s = 0.0;
  for (std::size_t k = run.records.size() - w; k < run.records.size(); ++k) {
    s += run.records[k].test_accuracy;
  }
  return s / static_cast<double>(w);
}

namespace {

json mean_std(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return {{"mean", mean}, {"std", sd}, {"per_seed", v}};
}

}  // namespace

json summarize(std::span<const RunLog> logs) {
  if (logs.empty()) throw ParameterError("nothing to summarize");
  json out{{"seeds", json::array()}, {"strategies", json::object()}};
  for (const auto& log : logs) out["seeds"].push_back(log.seed);
  for (std::size_t s = 0; s < logs.front().runs.size(); ++s) {
    std::vector<double> final_acc, tail_acc;
    for (const auto& log : logs) {
      const auto& run = log.runs.at(s);
      final_acc.push_back(run.records.back().test_accuracy);
      tail_acc.push_back(tail_accuracy(run, 10));
    }
    out["strategies"][std::string(to_string(logs.front().runs[s].strategy))] = {
        {"final_accuracy", mean_std(final_acc)}, {"tail10_accuracy", mean_std(tail_acc)}};
  }
  return out;
}

}  // namespace fedauto
