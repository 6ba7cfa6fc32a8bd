#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dvsl/graphstate.hpp"
#include "dvsl/net.hpp"
#include "dvsl/sim.hpp"

namespace dvsl::mdp {

/// Maps normalised actions in [0,1] to per-lane limits in [v_min, v_max].
/// Inputs outside [0,1] are clamped first; the endpoints map exactly.
Eigen::VectorXd decode_action(const Eigen::VectorXd& u, const VslConfig& vsl);

/// Zero when any lane crawls below v_congested, otherwise the mean lane
/// speed rescaled to [0,1] between v_congested and v_ref. Empty lanes enter
/// at v_ref through the caller-provided fallback.
double speed_term(std::span<const double> lane_speeds, double v_congested, double v_ref);

/// Count of vehicles whose time-to-collision against their own-lane leader
/// is below the threshold.
int count_ttc_conflicts(const sim::Simulator& s, double ttc_threshold);

/// (M - conflicts)/M over the active vehicles; 1 when the road is empty.
double safety_term(int conflicts, long active);

struct RewardComponents {
  double speed = 0.0;   // mean of the sampled speed terms
  double safety = 0.0;  // mean of the sampled safety terms
  double reward = 0.0;  // (speed + safety)/2
};

/// Averages per-sample terms over one control horizon. Throws when a sample
/// list is empty or sizes differ.
RewardComponents horizon_reward(std::span<const double> speed_samples,
                                std::span<const double> safety_samples);

struct StepResult {
  Eigen::VectorXd state;
  double reward = 0.0;
  bool done = false;
  RewardComponents components;
  long active = 0;
  int conflicts = 0;  // summed over the horizon's samples
};

/// Rollout interface the trainer works against.
class EnvBase {
 public:
  virtual ~EnvBase() = default;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual Eigen::VectorXd reset(std::uint64_t seed) = 0;
  virtual StepResult step(const Eigen::VectorXd& u) = 0;
  /// Per-node feature matrix behind the last returned state; empty when the
  /// environment has no graph structure.
  virtual const Eigen::MatrixXd* last_features() const { return nullptr; }
  virtual const net::AdjacencyMatrix* adjacency() const { return nullptr; }
};

/// Per-sample safety observation, recorded every control update.
struct SafetySample {
  double t = 0.0;
  int conflicts = 0;
  long active = 0;
};

struct EnvLogs {
  std::vector<sim::Event> events;
  std::vector<SafetySample> safety;
  /// Detector snapshots: (time, readings for every lane).
  std::vector<std::pair<double, std::vector<sim::DetectorReading>>> detectors;
  void clear() { events.clear(); safety.clear(); detectors.clear(); }
};

/// The control problem: reset() runs the uncontrolled warmup, each step()
/// posts one limit per DSA lane, holds it for the control horizon and
/// returns the encoded detector state plus the averaged reward.
class Env : public EnvBase {
 public:
  Env(const ScenarioConfig& cfg, graphstate::Mode mode,
      const graphstate::EncoderWeights* weights);

  int state_dim() const override;
  int action_dim() const override;
  Eigen::VectorXd reset(std::uint64_t seed) override;
  StepResult step(const Eigen::VectorXd& u) override;
  /// Same dynamics with explicit limits in m/s, one per DSA lane.
  StepResult step_limits(const Eigen::VectorXd& limits);

  const Eigen::MatrixXd* last_features() const override { return &features_; }
  const net::AdjacencyMatrix* adjacency() const override { return &adjacency_; }

  const net::Network& network() const { return net_; }
  const ScenarioConfig& config() const { return cfg_; }
  const std::vector<sim::DetectorReading>& last_readings() const { return latest_; }
  const sim::Simulator& simulator() const;
  double clock() const;
  bool done() const { return done_; }
  /// When set, events, safety samples and detector snapshots are appended
  /// here from the next reset() on.
  void set_logs(EnvLogs* logs) { logs_ = logs; }

 private:
  void run_sim_steps(double until);
  Eigen::VectorXd encode_latest();

  ScenarioConfig cfg_;
  net::Network net_;
  net::AdjacencyMatrix adjacency_;
  graphstate::Mode mode_;
  const graphstate::EncoderWeights* weights_;
  std::unique_ptr<sim::Simulator> sim_;
  std::vector<sim::DetectorReading> latest_;
  Eigen::MatrixXd features_;
  std::vector<int> ma_lanes_;
  std::vector<int> dsa_lanes_;
  bool done_ = true;
  double next_detector_read_ = 0.0;
  double next_sample_ = 0.0;
  std::vector<double> speed_samples_, safety_samples_;
  long horizon_conflicts_ = 0;
  EnvLogs* logs_ = nullptr;
};

}  // namespace dvsl::mdp
