#include "fedauto/network.hpp"

#include <algorithm>
#include <limits>
#include <numbers>

#include "fedauto/errors.hpp"
#include "fedauto/simplex.hpp"

namespace fedauto {

std::string_view to_string(Standard s) noexcept {
  switch (s) {
    case Standard::Wired: return "wired";
    case Standard::WiFi24: return "wifi24";
    case Standard::WiFi5: return "wifi5";
    case Standard::Cell4G: return "4g";
    case Standard::Cell5G: return "5g";
  }
  return "unknown";
}

Standard standard_from_string(std::string_view name) {
  for (std::size_t s = 0; s < kNumStandards; ++s) {
    if (to_string(static_cast<Standard>(s)) == name) return static_cast<Standard>(s);
  }
  throw ParameterError("unknown network standard '" + std::string(name) + "'");
}

TransientModel make_transient_model(const LinkConfig& link, const ChannelParams& params) {
  TransientModel model;
  model.path_loss_exponent = params.path_loss_exponent;
  model.noise_psd_dBm_per_Hz = params.noise_psd_dBm_per_Hz;
  model.reference_distance_m = params.reference_distance_m;
  model.shadow_sigma_dB =
      link.line_of_sight ? params.los_shadow_sigma_dB : params.nlos_shadow_sigma_dB;
  model.wall_loss_dB = params.wall_loss_dB[static_cast<std::size_t>(link.standard)];
  model.epsilon = transient_failure_prob(link, model);
  return model;
}

double channel_capacity(const LinkConfig& link, double h2_linear,
                        double noise_psd_dBm_per_Hz) {
  if (!(h2_linear > 0.0)) throw ParameterError("channel gain must be positive");
  if (!(link.bandwidth_Hz > 0.0)) throw ParameterError("bandwidth must be positive");
  const double snr = dbm_to_mw(link.tx_power_dBm) * h2_linear /
                     (link.bandwidth_Hz * dbm_to_mw(noise_psd_dBm_per_Hz));
  return link.bandwidth_Hz * std::log2(1.0 + snr);
}

double mean_channel_gain_dB(const LinkConfig& link, const TransientModel& model) {
  if (!(link.distance_km > 0.0)) throw ParameterError("wireless distance must be positive");
  if (!(link.carrier_MHz > 0.0)) throw ParameterError("wireless carrier must be positive");
  const double free_space_dB =
      20.0 * std::log10(link.distance_km) + 20.0 * std::log10(link.carrier_MHz) + 32.44;
  const double distance_dB =
      10.0 * std::log10(link.distance_km * 1000.0 / model.reference_distance_m);
  return -free_space_dB - model.path_loss_exponent * distance_dB -
         static_cast<double>(link.wall_count) * model.wall_loss_dB;
}

double sample_channel_gain(const LinkConfig& link, const TransientModel& model, Rng& rng) {
  if (!link.wireless()) throw ContractError("wired links have no fading channel");
  std::normal_distribution<double> shadow(0.0, model.shadow_sigma_dB);
  const double gain_dB = mean_channel_gain_dB(link, model) + shadow(rng);
  return std::pow(10.0, gain_dB / 10.0);
}

double transient_failure_prob(const LinkConfig& link, const TransientModel& model) {
  if (!link.wireless()) return 0.0;
  const double rate = link.required_rate_bps();
  if (!(rate > 0.0)) throw ParameterError("required rate L / tau must be positive");
  if (!(link.bandwidth_Hz > 0.0)) throw ParameterError("bandwidth must be positive");
  // Smallest gain whose capacity reaches the rate: W log2(1 + P g / (W N0)) = R.
  const double snr_needed = std::expm1(rate / link.bandwidth_Hz * std::numbers::ln2);
  const double threshold_gain = snr_needed * link.bandwidth_Hz *
                                dbm_to_mw(model.noise_psd_dBm_per_Hz) /
                                dbm_to_mw(link.tx_power_dBm);
  const double threshold_dB = 10.0 * std::log10(threshold_gain);
  const double mean_dB = mean_channel_gain_dB(link, model);
  if (model.shadow_sigma_dB <= 0.0) return threshold_dB >= mean_dB ? 1.0 : 0.0;
  const double z = (threshold_dB - mean_dB) / model.shadow_sigma_dB;
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

bool sample_transient(double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ParameterError("epsilon outside [0, 1]");
  return !(uniform01(rng) < epsilon);
}

int IntermittentState::max_duration() const noexcept {
  return std::max(1, static_cast<int>(std::floor(100.0 / duration_alpha)));
}

IntermittentState make_intermittent_state(double rate_lambda, double duration_alpha,
                                          int start_round) {
  if (rate_lambda < 0.0) throw ParameterError("intermittent rate must be non-negative");
  if (!(duration_alpha > 0.0)) throw ParameterError("duration alpha must be positive");
  IntermittentState s;
  s.rate_lambda = rate_lambda;
  s.duration_alpha = duration_alpha;
  s.last_recovery_round = start_round;
  s.last_checked_round = start_round;
  return s;
}

bool intermittent_step(IntermittentState& state, int round, Rng& rng) {
  if (state.outage_rounds_remaining > 0) {
    if (--state.outage_rounds_remaining == 0) {
      state.last_recovery_round = round;
      state.last_checked_round = round;
    }
    return false;
  }
  const int since = std::max(state.last_recovery_round, state.last_checked_round);
  if (round <= since) return true;
  state.last_checked_round = round;
  // Conditional trigger probability over (since, round]; chaining these steps
  // reproduces the exponential CDF measured from the last recovery.
  const double p_trigger = -std::expm1(-state.rate_lambda * (round - since));
  if (!(uniform01(rng) < p_trigger)) return true;

  std::uniform_int_distribution<int> duration(1, state.max_duration());
  const int d = duration(rng);
  state.outage_rounds_remaining = d - 1;
  if (state.outage_rounds_remaining == 0) state.last_recovery_round = round;
  return false;
}

bool mixed_step(double epsilon, IntermittentState& state, int round, Rng& rng) {
  const bool transient_ok = sample_transient(epsilon, rng);
  const bool intermittent_ok = intermittent_step(state, round, rng);
  return transient_ok && intermittent_ok;
}

std::array<StandardProfile, kNumStandards> default_link_table() {
  return {{
      {Standard::Wired, -20.0, 10e6, 0.0},
      {Standard::WiFi24, 20.0, 10e6, 2400.0},
      {Standard::WiFi5, 23.0, 10e6, 5000.0},
      {Standard::Cell4G, 23.0, 1.8e6, 1800.0},
      {Standard::Cell5G, 23.0, 2.88e6, 3500.0},
  }};
}

Standard standard_for_client(int client) noexcept {
  if (client < 4) return Standard::Wired;
  return static_cast<Standard>(1 + (client - 4) % 4);
}

double default_intermittent_rate(int client) noexcept {
  static constexpr std::array<double, 5> kRates{1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
  return kRates[static_cast<std::size_t>((client / 4) % 5)];
}

std::vector<LinkConfig> place_clients(int num_clients,
                                      std::span<const StandardProfile> table,
                                      const PlacementParams& placement,
                                      double model_size_bits, double tx_delay_s,
                                      Rng& rng) {
  if (table.size() != kNumStandards) throw ParameterError("link table needs one row per standard");
  std::vector<LinkConfig> links;
  links.reserve(static_cast<std::size_t>(num_clients));
  for (int i = 0; i < num_clients; ++i) {
    const Standard s = standard_for_client(i);
    const auto& row = table[static_cast<std::size_t>(s)];
    LinkConfig link;
    link.standard = s;
    link.tx_power_dBm = row.tx_power_dBm;
    link.bandwidth_Hz = row.bandwidth_Hz;
    link.carrier_MHz = row.carrier_MHz;
    link.model_size_bits = model_size_bits;
    link.tx_delay_s = tx_delay_s;
    // Draws happen for every client so each client's position depends only on
    // its index.
    const double a = uniform01(rng);
    const double b = uniform01(rng);
    const double w = uniform01(rng);
    if (s == Standard::WiFi24 || s == Standard::WiFi5) {
      const double dx = (a - 0.5) * placement.room_side_m;
      const double dy = (b - 0.5) * placement.room_side_m;
      const double dz = placement.ap_height_m - placement.client_height_m;
      link.distance_km = std::sqrt(dx * dx + dy * dy + dz * dz) / 1000.0;
      link.wall_count = std::min(placement.max_indoor_walls,
                                 static_cast<int>(w * (placement.max_indoor_walls + 1)));
    } else {
      const double r = placement.cell_radius_m * std::sqrt(a);
      const double dz = placement.bs_height_m - placement.client_height_m;
      link.distance_km = std::sqrt(r * r + dz * dz) / 1000.0;
      link.wall_count = s == Standard::Wired
                            ? 0
                            : std::min(placement.max_outdoor_walls,
                                       static_cast<int>(w * (placement.max_outdoor_walls + 1)));
    }
    link.line_of_sight = link.wall_count == 0;
    links.push_back(link);
  }
  return links;
}

double masked_variance(std::span<const double> values, const std::vector<bool>& mask) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (mask[i]) {
      sum += values[i];
      ++n;
    }
  }
  if (n == 0) return 0.0;
  const double mean = sum / static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (mask[i]) acc += (values[i] - mean) * (values[i] - mean);
  }
  return acc / static_cast<double>(n);
}

namespace {

// Projected gradient over normalized variables: power u = P / P_cap in
// [u_min, 1] and bandwidth v = W / B with per-standard sum(v) <= 1, where B is
// the bandwidth the standard's eligible clients start with.
class ResourceAllocator {
 public:
  ResourceAllocator(std::span<const LinkConfig> links, const ChannelParams& params,
                    const ResourceOptOptions& options)
      : links_(links.begin(), links.end()), params_(params), options_(options) {
    if (!(options.epsilon_threshold > 0.0 && options.epsilon_threshold < 1.0)) {
      throw ParameterError("epsilon threshold must lie in (0, 1)");
    }
    if (!(options.step_size > 0.0) || options.iterations < 0) {
      throw ParameterError("resource optimizer needs a positive step and iterations >= 0");
    }
    result_.power_cap_dBm.fill(-std::numeric_limits<double>::infinity());
    result_.bandwidth_budget_Hz.fill(0.0);
    for (const auto& l : links_) {
      const auto s = static_cast<std::size_t>(l.standard);
      result_.power_cap_dBm[s] = std::max(result_.power_cap_dBm[s], l.tx_power_dBm);
      result_.bandwidth_budget_Hz[s] += l.bandwidth_Hz;
    }
    initial_epsilon_.reserve(links_.size());
    for (const auto& l : links_) initial_epsilon_.push_back(make_transient_model(l, params_).epsilon);
    eligible_.resize(links_.size());
    for (std::size_t i = 0; i < links_.size(); ++i) {
      eligible_[i] = initial_epsilon_[i] <= options.epsilon_threshold;
      if (eligible_[i] && links_[i].wireless()) variables_.push_back(i);
    }
    // Ineligible clients keep their bandwidth; the eligible ones share the rest
    // of the standard's budget.
    free_band_Hz_.fill(0.0);
    for (std::size_t i : variables_) {
      free_band_Hz_[static_cast<std::size_t>(links_[i].standard)] += links_[i].bandwidth_Hz;
    }
    for (std::size_t i : variables_) {
      const auto s = static_cast<std::size_t>(links_[i].standard);
      power_.push_back(dbm_to_mw(links_[i].tx_power_dBm) / dbm_to_mw(result_.power_cap_dBm[s]));
      band_.push_back(links_[i].bandwidth_Hz / free_band_Hz_[s]);
    }
  }

  // Each objective group contributes 0.5 * sum (eps_i - mean_group)^2.
  void set_groups(std::vector<std::vector<std::size_t>> groups) { groups_ = std::move(groups); }

  const std::vector<std::size_t>& variables() const noexcept { return variables_; }
  const std::vector<bool>& eligible() const noexcept { return eligible_; }
  const std::vector<double>& initial_epsilon() const noexcept { return initial_epsilon_; }

  ResourceOptResult run() {
    std::vector<double> eps = epsilons(power_, band_);
    double objective = evaluate(eps);
    result_.objective_trace.push_back(objective);
    if (options_.record_iterates) result_.iterates.push_back(materialize(power_, band_));
    double step = options_.step_size;
    for (int it = 0; it < options_.iterations; ++it) {
      const auto [grad_p, grad_w] = gradient(eps);
      bool accepted = false;
      for (int halvings = 0; halvings < 60; ++halvings, step *= 0.5) {
        auto p = power_;
        auto w = band_;
        for (std::size_t k = 0; k < p.size(); ++k) {
          p[k] -= step * grad_p[k];
          w[k] -= step * grad_w[k];
        }
        project(p, w);
        auto trial_eps = epsilons(p, w);
        const double trial = evaluate(trial_eps);
        if (trial < objective) {
          power_ = std::move(p);
          band_ = std::move(w);
          eps = std::move(trial_eps);
          objective = trial;
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
      result_.objective_trace.push_back(objective);
      if (options_.record_iterates) result_.iterates.push_back(materialize(power_, band_));
      step = std::min(step * 2.0, options_.step_size);
    }
    write_back();
    return result_;
  }

  std::vector<double> epsilons(const std::vector<double>& p, const std::vector<double>& w) const {
    std::vector<double> eps(variables_.size());
    for (std::size_t k = 0; k < variables_.size(); ++k) eps[k] = epsilon_at(k, p[k], w[k]);
    return eps;
  }

  ResourceOptResult& result() { return result_; }

 private:
  double epsilon_at(std::size_t k, double p, double w) const {
    LinkConfig link = links_[variables_[k]];
    const auto s = static_cast<std::size_t>(link.standard);
    link.tx_power_dBm = result_.power_cap_dBm[s] + 10.0 * std::log10(p);
    link.bandwidth_Hz = w * free_band_Hz_[s];
    return transient_failure_prob(link, make_transient_model(link, params_));
  }

  std::size_t slot_of(std::size_t client) const {
    return static_cast<std::size_t>(
        std::find(variables_.begin(), variables_.end(), client) - variables_.begin());
  }

  double evaluate(const std::vector<double>& eps) const {
    double total = 0.0;
    for (const auto& group : groups_) {
      if (group.empty()) continue;
      double mean = 0.0;
      for (std::size_t i : group) mean += eps[slot_of(i)];
      mean /= static_cast<double>(group.size());
      for (std::size_t i : group) total += 0.5 * (eps[slot_of(i)] - mean) * (eps[slot_of(i)] - mean);
    }
    return total;
  }

  // d/dx 0.5 sum (eps_j - mean)^2 = (eps_i - mean) d eps_i / dx, because the
  // deviations from the mean sum to zero.
  std::pair<std::vector<double>, std::vector<double>> gradient(const std::vector<double>& eps) const {
    std::vector<double> gp(variables_.size(), 0.0), gw(variables_.size(), 0.0);
    for (const auto& group : groups_) {
      if (group.empty()) continue;
      double mean = 0.0;
      for (std::size_t i : group) mean += eps[slot_of(i)];
      mean /= static_cast<double>(group.size());
      for (std::size_t i : group) {
        const std::size_t k = slot_of(i);
        const double dev = eps[k] - mean;
        const double hp = options_.fd_relative_step * power_[k];
        const double hw = options_.fd_relative_step * band_[k];
        const double dp = (epsilon_at(k, power_[k] + hp, band_[k]) -
                           epsilon_at(k, power_[k] - hp, band_[k])) / (2.0 * hp);
        const double dw = (epsilon_at(k, power_[k], band_[k] + hw) -
                           epsilon_at(k, power_[k], band_[k] - hw)) / (2.0 * hw);
        // Per-client Gauss-Newton scaling: a positive multiple of the
        // gradient, so still a descent direction, but it does not stall where
        // epsilon sits deep in the fading tail and its slope is tiny.
        // The per-client move is capped at the unit box width so that
        // backtracking can still reach small steps.
        const double curvature = dp * dp + dw * dw;
        if (curvature <= 0.0) continue;
        gp[k] = dev * dp / curvature;
        gw[k] = dev * dw / curvature;
        const double length = std::hypot(gp[k], gw[k]);
        if (length > 1.0) {
          gp[k] /= length;
          gw[k] /= length;
        }
      }
    }
    return {gp, gw};
  }

  void project(std::vector<double>& p, std::vector<double>& w) const {
    for (auto& v : p) v = std::clamp(v, options_.min_power_fraction, 1.0);
    for (std::size_t s = 0; s < kNumStandards; ++s) {
      std::vector<std::size_t> slots;
      for (std::size_t k = 0; k < variables_.size(); ++k) {
        if (static_cast<std::size_t>(links_[variables_[k]].standard) == s) slots.push_back(k);
      }
      if (slots.empty()) continue;
      std::vector<double> sub;
      for (std::size_t k : slots) sub.push_back(w[k]);
      project_onto_capped_box(sub, options_.min_bandwidth_fraction, 1.0);
      for (std::size_t j = 0; j < slots.size(); ++j) w[slots[j]] = sub[j];
    }
  }

  std::vector<LinkConfig> materialize(const std::vector<double>& p,
                                      const std::vector<double>& w) const {
    std::vector<LinkConfig> out = links_;
    for (std::size_t k = 0; k < variables_.size(); ++k) {
      auto& link = out[variables_[k]];
      const auto s = static_cast<std::size_t>(link.standard);
      link.tx_power_dBm = result_.power_cap_dBm[s] + 10.0 * std::log10(p[k]);
      link.bandwidth_Hz = w[k] * free_band_Hz_[s];
    }
    return out;
  }

  void write_back() {
    result_.links = materialize(power_, band_);
    result_.eligible = eligible_;
    result_.epsilon = initial_epsilon_;
    for (std::size_t i : variables_) {
      result_.epsilon[i] = make_transient_model(result_.links[i], params_).epsilon;
    }
  }

  std::vector<LinkConfig> links_;
  ChannelParams params_;
  ResourceOptOptions options_;
  std::vector<double> initial_epsilon_;
  std::vector<bool> eligible_;
  std::vector<std::size_t> variables_;
  std::vector<double> power_;
  std::vector<double> band_;
  std::array<double, kNumStandards> free_band_Hz_{};
  std::vector<std::vector<std::size_t>> groups_;
  ResourceOptResult result_;
};

}  // namespace

ResourceOptResult resource_opt_joint(std::span<const LinkConfig> links,
                                     const ChannelParams& params,
                                     const ResourceOptOptions& options) {
  ResourceAllocator allocator(links, params, options);
  if (allocator.variables().empty()) {
    throw ParameterError("no eligible wireless client under the epsilon threshold");
  }
  allocator.set_groups({allocator.variables()});
  ResourceOptResult result = allocator.run();

  // Wired models are dropped at the server with the eligible wireless mean,
  // which is then also the mean over every eligible client.
  double mean = 0.0;
  for (std::size_t i : allocator.variables()) mean += result.epsilon[i];
  mean /= static_cast<double>(allocator.variables().size());
  result.wired_drop_probability = mean;
  for (std::size_t i = 0; i < result.links.size(); ++i) {
    if (!result.links[i].wireless()) result.epsilon[i] = mean;
  }
  return result;
}

ResourceOptResult resource_opt_per_standard(std::span<const LinkConfig> links,
                                            const ChannelParams& params,
                                            const ResourceOptOptions& options) {
  ResourceAllocator allocator(links, params, options);
  const auto& eligible = allocator.eligible();
  if (std::none_of(eligible.begin(), eligible.end(), [](bool e) { return e; })) {
    throw ParameterError("no client under the epsilon threshold");
  }
  std::vector<std::vector<std::size_t>> groups(kNumStandards);
  for (std::size_t i : allocator.variables()) {
    groups[static_cast<std::size_t>(links[i].standard)].push_back(i);
  }
  allocator.set_groups(std::move(groups));
  return allocator.run();
}

}  // namespace fedauto
