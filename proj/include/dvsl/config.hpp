#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dvsl {

constexpr double kmh_to_ms(double kmh) { return kmh / 3.6; }
constexpr double ms_to_kmh(double ms) { return ms * 3.6; }

/// Per-area geometry. Lane index 0 is the rightmost lane of the area.
struct AreaConfig {
  int lane_count = 0;
  double length_m = 200.0;
  /// Optional override of the base speed limit, m/s.
  std::optional<double> speed_limit;
};

/// Demand rates are peak values in veh/h; the profile scales them over time.
struct DemandConfig {
  double mainline_through = 5600.0;  // enters MI, exits MO
  double mainline_off = 700.0;       // enters MI, exits RO
  double ramp_on = 2100.0;           // enters RI, exits MO
  double scale = 1.0;
  /// Piecewise-linear multiplier (time s, fraction of peak). Clamped at ends.
  std::vector<std::pair<double, double>> profile = {
      {0.0, 0.35}, {1500.0, 0.7}, {2800.0, 1.0}, {5400.0, 1.0},
      {7200.0, 0.6}, {18000.0, 0.25}};

  double rate_at(double t, double peak) const;
};

struct EpisodeConfig {
  double warmup_end_s = 3000.0;
  double episode_end_s = 5400.0;
  double control_horizon_s = 30.0;  // one action is held this long
};

struct VslConfig {
  double v_min = kmh_to_ms(40.0);
  double v_max = kmh_to_ms(100.0);
};

struct SafetyConfig {
  double ttc_threshold_s = 3.0;
  double v_congested = kmh_to_ms(15.0);  // below this the speed term is zero
};

struct CarFollowConfig {
  double accel = 2.6;            // m/s^2
  double decel = 4.5;            // comfortable braking, m/s^2
  double emergency_decel = 9.0;  // hard floor for model accelerations
  double reaction_time = 1.0;    // Krauss tau, s
  double min_gap = 2.0;          // standstill spacing, m
  double headway = 1.5;          // IDM time headway, s
  double krauss_sigma = 0.0;     // driver imperfection, 0 = deterministic
};

struct LaneChangeConfig {
  double speed_gain_threshold = 0.5;  // m/s advantage needed for a move
};

struct EncoderConfig {
  int width = 2;        // output features per node
  bool learned = true;  // false keeps the seeded random weights fixed
  std::uint64_t seed = 7;
};

struct TrainerConfig {
  int iterations = 100;
  int episodes_per_iteration = 2;  // parallel rollout workers
  int horizon_steps = 0;           // 0 = run each episode to termination
  int policy_epochs = 10;
  int value_epochs = 10;
  double gamma = 0.99;
  double lambda_init = 0.2;   // KL penalty coefficient
  double alpha = 1.5;         // multiplicative KL coefficient step
  double beta_high = 1.5;     // raise lambda above beta_high * kl_target
  double beta_low = 0.5;      // lower lambda below beta_low * kl_target
  double kl_target = 0.01;
  double lr_policy = 3e-4;
  double lr_value = 1e-3;
  double init_std = 0.25;  // initial action noise
  std::vector<int> hidden = {64, 64};
  std::uint64_t seed = 1;
  /// Reuse the same scenario draws every iteration (common random numbers),
  /// so the reward trail compares policies instead of traffic luck. Action
  /// sampling still varies per iteration.
  bool fixed_episode_seeds = false;
};

struct ControllerConfig {
  /// Occupancy breakpoints -> speed limit (m/s), evaluated bottom-up.
  std::vector<std::pair<double, double>> rule_table = {
      {0.0, kmh_to_ms(100.0)}, {0.25, kmh_to_ms(80.0)}, {0.45, kmh_to_ms(60.0)}};
};

/// Complete description of one scenario: geometry, demand, timing, control
/// and training parameters. Everything downstream reads from this.
struct ScenarioConfig {
  /// Area name -> geometry. Recognised names: MI, DSA, AA, RI, MA, MO, RO.
  /// Three outflow lanes make the merge area the binding bottleneck: its
  /// measured throughput saturates in the high 6000s veh/h under the default
  /// demand profile.
  std::map<std::string, AreaConfig> areas = {
      {"MI", {5, 200.0, {}}},  {"DSA", {5, 200.0, {}}},
      {"AA", {5, 200.0, {}}},  {"RI", {1, 200.0, kmh_to_ms(60.0)}},
      {"MA", {6, 200.0, {}}},  {"MO", {3, 200.0, {}}},
      {"RO", {1, 200.0, kmh_to_ms(60.0)}}};
  double base_speed_limit = kmh_to_ms(100.0);  // m/s
  double sim_step_s = 1.0;
  double control_update_s = 5.0;    // limit/reward sampling period
  double detector_window_s = 30.0;  // detector aggregation period
  bool transitive_adjacency = false;

  DemandConfig demand;
  EpisodeConfig episode;
  VslConfig vsl;
  SafetyConfig safety;
  CarFollowConfig carfollow;
  LaneChangeConfig lane_change;
  EncoderConfig encoder;
  TrainerConfig trainer;
  ControllerConfig controller;

  static ScenarioConfig defaults() { return {}; }
  /// Parses a JSON document. Keys `areas`, `base_speed_limit_kmh`,
  /// `sim_step_s`, `control_update_s` and `adjacency.transitive` are
  /// required; everything else falls back to defaults.
  static ScenarioConfig from_json_text(const std::string& text);
  static ScenarioConfig from_file(const std::string& path);
  std::string to_json_text() const;
  /// FNV-1a over the canonical JSON dump; stable across runs and platforms.
  std::uint64_t hash() const;
};

}  // namespace dvsl
