#include "dvsl/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dvsl::mdp {

Eigen::VectorXd decode_action(const Eigen::VectorXd& u, const VslConfig& vsl) {
  if (vsl.v_min <= 0.0 || vsl.v_max < vsl.v_min)
    throw std::invalid_argument("mdp: need 0 < v_min <= v_max");
  Eigen::VectorXd out(u.size());
  for (int i = 0; i < u.size(); ++i) {
    const double ui = std::clamp(u(i), 0.0, 1.0);
    out(i) = vsl.v_min * (1.0 - ui) + vsl.v_max * ui;
  }
  return out;
}

double speed_term(std::span<const double> lane_speeds, double v_congested, double v_ref) {
  if (lane_speeds.empty()) throw std::invalid_argument("mdp: speed_term needs lane speeds");
  if (v_ref <= v_congested) throw std::invalid_argument("mdp: v_ref must exceed v_congested");
  double sum = 0.0;
  for (double v : lane_speeds) {
    if (v < v_congested) return 0.0;
    sum += v;
  }
  const double mean = sum / static_cast<double>(lane_speeds.size());
  return std::clamp((mean - v_congested) / (v_ref - v_congested), 0.0, 1.0);
}

int count_ttc_conflicts(const sim::Simulator& s, double ttc_threshold) {
  int conflicts = 0;
  const auto& net = s.network();
  for (int lane = 0; lane < static_cast<int>(net.lanes.size()); ++lane) {
    const auto& order = s.lane_vehicles(lane);
    for (std::size_t i = 1; i < order.size(); ++i) {
      const auto ttc = sim::time_to_collision(s.vehicle(order[i]), s.vehicle(order[i - 1]));
      if (ttc && *ttc < ttc_threshold) ++conflicts;
    }
  }
  return conflicts;
}

double safety_term(int conflicts, long active) {
  if (conflicts < 0 || active < 0) throw std::invalid_argument("mdp: negative counts");
  if (active == 0) return 1.0;
  return static_cast<double>(active - std::min<long>(conflicts, active)) /
         static_cast<double>(active);
}

RewardComponents horizon_reward(std::span<const double> speed_samples,
                                std::span<const double> safety_samples) {
  if (speed_samples.empty() || speed_samples.size() != safety_samples.size())
    throw std::invalid_argument("mdp: horizon_reward needs matching non-empty samples");
  RewardComponents out;
  for (double v : speed_samples) out.speed += v;
  for (double v : safety_samples) out.safety += v;
  out.speed /= static_cast<double>(speed_samples.size());
  out.safety /= static_cast<double>(safety_samples.size());
  out.reward = 0.5 * (out.speed + out.safety);
  return out;
}

Env::Env(const ScenarioConfig& cfg, graphstate::Mode mode,
         const graphstate::EncoderWeights* weights)
    : cfg_(cfg),
      net_(net::build_network(cfg)),
      adjacency_(net::build_adjacency(net_)),
      mode_(mode),
      weights_(weights) {
  if (mode_ == graphstate::Mode::Graph && weights_ == nullptr)
    throw std::invalid_argument("mdp: graph mode needs encoder weights");
  ma_lanes_ = net_.lanes_in(net::AreaKind::MA);
  dsa_lanes_ = net_.lanes_in(net::AreaKind::DSA);
  if (dsa_lanes_.empty()) throw std::invalid_argument("mdp: scenario has no DSA lanes");
  if (ma_lanes_.empty()) throw std::invalid_argument("mdp: scenario has no MA lanes");
  const auto& ep = cfg_.episode;
  if (ep.warmup_end_s < 0.0 || ep.episode_end_s <= ep.warmup_end_s)
    throw std::invalid_argument("mdp: episode must end after the warmup");
  if (ep.control_horizon_s < cfg_.control_update_s ||
      std::fmod(ep.control_horizon_s, cfg_.control_update_s) != 0.0)
    throw std::invalid_argument("mdp: control horizon must be a multiple of the update period");
}

int Env::state_dim() const {
  return net_.node_count * (mode_ == graphstate::Mode::Raw ? 2 : weights_->width());
}

int Env::action_dim() const { return static_cast<int>(dsa_lanes_.size()); }

const sim::Simulator& Env::simulator() const {
  if (!sim_) throw std::runtime_error("mdp: reset() has not been called");
  return *sim_;
}

double Env::clock() const { return simulator().clock(); }

Eigen::VectorXd Env::encode_latest() {
  features_ = graphstate::node_features(latest_, net_);
  static const graphstate::EncoderWeights none;
  return graphstate::encode_features(features_, adjacency_,
                                     weights_ ? *weights_ : none, mode_);
}

void Env::run_sim_steps(double until) {
  const double dt = cfg_.sim_step_s;
  const double eps = dt * 1e-9;
  while (sim_->clock() + dt <= until + eps) {
    sim_->step();
    const double t = sim_->clock();
    if (t + eps >= next_sample_) {
      const int conflicts = count_ttc_conflicts(*sim_, cfg_.safety.ttc_threshold_s);
      const long active = sim_->active_count();
      std::vector<double> lane_speeds;
      lane_speeds.reserve(ma_lanes_.size());
      for (int lane : ma_lanes_)
        lane_speeds.push_back(sim_->lane_mean_speed(lane, cfg_.base_speed_limit));
      speed_samples_.push_back(
          speed_term(lane_speeds, cfg_.safety.v_congested, cfg_.base_speed_limit));
      safety_samples_.push_back(safety_term(conflicts, active));
      horizon_conflicts_ += conflicts;
      if (logs_) logs_->safety.push_back({t, conflicts, active});
      next_sample_ += cfg_.control_update_s;
    }
    if (t + eps >= next_detector_read_) {
      latest_ = sim_->read_detectors();
      if (logs_) logs_->detectors.emplace_back(t, latest_);
      next_detector_read_ += cfg_.detector_window_s;
    }
  }
}

Eigen::VectorXd Env::reset(std::uint64_t seed) {
  sim_ = std::make_unique<sim::Simulator>(net_, cfg_, seed);
  if (logs_) {
    logs_->clear();
    sim_->set_event_sink([this](const sim::Event& e) { logs_->events.push_back(e); });
  }
  latest_.clear();
  speed_samples_.clear();
  safety_samples_.clear();
  horizon_conflicts_ = 0;
  next_detector_read_ = cfg_.detector_window_s;
  next_sample_ = cfg_.control_update_s;
  done_ = false;
  run_sim_steps(cfg_.episode.warmup_end_s);
  speed_samples_.clear();
  safety_samples_.clear();
  horizon_conflicts_ = 0;
  if (latest_.empty())
    throw std::runtime_error("mdp: warmup shorter than one detector window");
  return encode_latest();
}

StepResult Env::step(const Eigen::VectorXd& u) {
  if (u.size() != action_dim())
    throw std::invalid_argument("mdp: action size must match the DSA lane count");
  return step_limits(decode_action(u, cfg_.vsl));
}

StepResult Env::step_limits(const Eigen::VectorXd& limits) {
  if (!sim_) throw std::runtime_error("mdp: reset() has not been called");
  if (done_) throw std::runtime_error("mdp: episode is over, call reset()");
  if (limits.size() != static_cast<int>(dsa_lanes_.size()))
    throw std::invalid_argument("mdp: need one limit per DSA lane");
  std::vector<double> ms(limits.data(), limits.data() + limits.size());
  sim_->apply_speed_limits(ms);

  speed_samples_.clear();
  safety_samples_.clear();
  horizon_conflicts_ = 0;
  run_sim_steps(sim_->clock() + cfg_.episode.control_horizon_s);

  StepResult out;
  out.components = horizon_reward(speed_samples_, safety_samples_);
  out.reward = out.components.reward;
  out.active = sim_->active_count();
  out.conflicts = static_cast<int>(horizon_conflicts_);
  done_ = sim_->clock() >= cfg_.episode.episode_end_s - cfg_.sim_step_s * 1e-9;
  out.done = done_;
  out.state = encode_latest();
  return out;
}

}  // namespace dvsl::mdp
