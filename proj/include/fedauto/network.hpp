#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedauto/rng.hpp"

namespace fedauto {

enum class Standard { Wired = 0, WiFi24 = 1, WiFi5 = 2, Cell4G = 3, Cell5G = 4 };

inline constexpr std::size_t kNumStandards = 5;

std::string_view to_string(Standard s) noexcept;
Standard standard_from_string(std::string_view name);

/// One client's uplink. Power is in dBm, bandwidth in Hz, carrier in MHz,
/// distance in km, model size in bits and the per-round delay budget in s.
struct LinkConfig {
  Standard standard = Standard::Wired;
  double tx_power_dBm = 0.0;
  double bandwidth_Hz = 1.0;
  double carrier_MHz = 0.0;
  double distance_km = 1e-3;
  int wall_count = 0;
  bool line_of_sight = true;
  double model_size_bits = 0.0;
  double tx_delay_s = 1.0;

  bool wireless() const noexcept { return standard != Standard::Wired; }
  /// Rate R = L / tau the upload must sustain within one round.
  double required_rate_bps() const noexcept { return model_size_bits / tx_delay_s; }

  bool operator==(const LinkConfig&) const = default;
};

/// Constants shared by every wireless link of an experiment.
struct ChannelParams {
  double path_loss_exponent = 3.0;
  double noise_psd_dBm_per_Hz = -174.0;
  double los_shadow_sigma_dB = 4.0;
  double nlos_shadow_sigma_dB = 8.0;
  /// Per-wall penetration loss indexed by Standard (wired unused).
  std::array<double, kNumStandards> wall_loss_dB{0.0, 12.0, 18.0, 10.0, 15.0};
  /// d_0 for the distance term of the log-distance model.
  double reference_distance_m = 1.0;
};

/// Per-client outage model. `epsilon` is the per-round failure probability.
struct TransientModel {
  double epsilon = 0.0;
  double path_loss_exponent = 3.0;
  double shadow_sigma_dB = 8.0;
  double wall_loss_dB = 0.0;
  double noise_psd_dBm_per_Hz = -174.0;
  double reference_distance_m = 1.0;
};

/// Unit convention: powers in dBm convert to milliwatts (10^(dBm/10)), the
/// noise PSD in dBm/Hz to mW/Hz. SNR = P_mW * h2 / (W * N0_mW).
inline double dbm_to_mw(double dbm) noexcept { return std::pow(10.0, dbm / 10.0); }

/// Fills sigma (LoS/NLoS), the standard's wall loss and epsilon for `link`.
TransientModel make_transient_model(const LinkConfig& link,
                                    const ChannelParams& params = {});

/// Shannon capacity W log2(1 + P h2 / (W N0)) in bits per second.
double channel_capacity(const LinkConfig& link, double h2_linear,
                        double noise_psd_dBm_per_Hz = -174.0);

/// Deterministic part of the gain in dB: free-space reference loss, the
/// distance term with exponent lambda, and per-wall losses (subtracted).
double mean_channel_gain_dB(const LinkConfig& link, const TransientModel& model);

/// Draws |h|^2 (linear) with log-normal shadowing. Wired links throw
/// ContractError.
double sample_channel_gain(const LinkConfig& link, const TransientModel& model, Rng& rng);

/// Pr(capacity <= L / tau), computed in closed form by inverting the capacity
/// at the rate threshold and evaluating the shadowing CDF. Wired links: 0.
double transient_failure_prob(const LinkConfig& link, const TransientModel& model);

/// Bernoulli realization: false (disconnected) with probability epsilon.
bool sample_transient(double epsilon, Rng& rng);

/// Multi-round disconnection process. The time from the last recovery r0 to
/// the next trigger is exponential with rate lambda per round, so a failure
/// has occurred by round r with probability 1 - exp(-lambda (r - r0)).
struct IntermittentState {
  double rate_lambda = 0.0;
  int last_recovery_round = 0;
  int outage_rounds_remaining = 0;
  /// Outage length is uniform over {1, ..., floor(100 / alpha)} rounds.
  double duration_alpha = 10.0;
  /// Last round the trigger was tested; steps may skip rounds.
  int last_checked_round = 0;

  bool disconnected() const noexcept { return outage_rounds_remaining > 0; }
  int max_duration() const noexcept;
};

IntermittentState make_intermittent_state(double rate_lambda, double duration_alpha,
                                          int start_round = 0);

/// Advances the process to round `round`; returns true when connected.
bool intermittent_step(IntermittentState& state, int round, Rng& rng);

/// Connected iff the transient draw succeeds and the intermittent process is
/// up. Both sub-processes always advance.
bool mixed_step(double epsilon, IntermittentState& state, int round, Rng& rng);

// ---------------------------------------------------------------------------
// Link table and client placement.

struct StandardProfile {
  Standard standard = Standard::Wired;
  double tx_power_dBm = 0.0;
  double bandwidth_Hz = 0.0;
  double carrier_MHz = 0.0;
};

/// Per-standard resources: wired -20 dBm / 10 MHz / baseband, Wi-Fi 2.4 GHz
/// 20 dBm / 10 MHz, Wi-Fi 5 GHz, 4G and 5G at 23 dBm with 10, 1.8 and
/// 2.88 MHz respectively.
std::array<StandardProfile, kNumStandards> default_link_table();

/// Clients 0-3 are wired; later clients cycle Wi-Fi 2.4, Wi-Fi 5, 4G, 5G.
Standard standard_for_client(int client) noexcept;

/// lambda_i by client group of four: 1e-5, 1e-4, 1e-3, 1e-2, 1e-1 (repeating).
double default_intermittent_rate(int client) noexcept;

struct PlacementParams {
  double room_side_m = 20.0;
  double ap_height_m = 3.0;
  double cell_radius_m = 200.0;
  double bs_height_m = 20.0;
  double client_height_m = 1.5;
  int max_indoor_walls = 2;
  int max_outdoor_walls = 1;
};

/// Draws positions: Wi-Fi clients uniformly in the room around the AP,
/// cellular clients uniformly over the cell disk. Wall counts are uniform in
/// [0, max]; a link is line-of-sight iff it crosses no wall.
std::vector<LinkConfig> place_clients(int num_clients,
                                      std::span<const StandardProfile> table,
                                      const PlacementParams& placement,
                                      double model_size_bits, double tx_delay_s,
                                      Rng& rng);

// ---------------------------------------------------------------------------
// Resource allocation baselines.

struct ResourceOptOptions {
  double epsilon_threshold = 0.9;
  double step_size = 1.0;
  int iterations = 200;
  /// Central finite differences on epsilon(P, W) use this relative step.
  double fd_relative_step = 1e-4;
  double min_power_fraction = 1e-6;
  double min_bandwidth_fraction = 1e-3;
  /// Keep the links of every accepted iterate in ResourceOptResult::iterates.
  bool record_iterates = false;
};

struct ResourceOptResult {
  std::vector<LinkConfig> links;
  /// Realized per-client epsilon. Under the joint variant wired clients carry
  /// the server-side drop probability; ineligible clients keep epsilon^0.
  std::vector<double> epsilon;
  std::vector<bool> eligible;
  double wired_drop_probability = 0.0;
  /// Objective after each accepted iterate, starting with the initial value.
  std::vector<double> objective_trace;
  std::array<double, kNumStandards> power_cap_dBm{};
  std::array<double, kNumStandards> bandwidth_budget_Hz{};
  /// Links at the initial point and after each accepted step, when recorded.
  std::vector<std::vector<LinkConfig>> iterates;
};

/// Joint power/bandwidth allocation equalizing wireless outage probabilities
/// around their eligible mean; wired models are then dropped at the server
/// with that mean probability.
ResourceOptResult resource_opt_joint(std::span<const LinkConfig> links,
                                     const ChannelParams& params,
                                     const ResourceOptOptions& options);

/// Same allocation solved independently inside each standard.
ResourceOptResult resource_opt_per_standard(std::span<const LinkConfig> links,
                                            const ChannelParams& params,
                                            const ResourceOptOptions& options);

/// Population variance of `values` restricted to `mask`.
double masked_variance(std::span<const double> values, const std::vector<bool>& mask);

}  // namespace fedauto
