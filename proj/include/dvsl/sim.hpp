#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dvsl/config.hpp"
#include "dvsl/net.hpp"

namespace dvsl::sim {

enum class CarFollowModel { Krauss, Idm };

enum class Route {
  MainThrough,  // MI -> MO
  MainOff,      // MI -> RO
  RampOn,       // RI -> MO
};

const char* to_string(Route r);

/// Fleet composition: two lengths, two car-following models. Speed factors
/// are drawn per vehicle from a truncated normal around 1.
struct VehicleType {
  std::string name;
  double length;  // m
  CarFollowModel model;
  double speed_factor_mean = 1.0;
  double speed_factor_std = 0.1;
  double lc_speed_gain = 1.0;  // eagerness weight for discretionary moves
};

/// Equal-share mix of long and short vehicles under both models.
const std::vector<VehicleType>& default_vehicle_types();

struct Vehicle {
  long id = -1;
  int type = 0;
  Route route = Route::MainThrough;
  int lane = -1;
  double position = 0.0;  // front bumper, m from lane start
  double speed = 0.0;     // m/s
  double length = 0.0;
  double speed_factor = 1.0;
  double lc_speed_gain = 1.0;
  CarFollowModel model = CarFollowModel::Krauss;
  double spawn_time = 0.0;
  bool standing = false;  // speed below the standing threshold

  double rear() const { return position - length; }
};

/// Mid-lane point detector aggregate over one sampling window.
struct DetectorReading {
  int lane = -1;
  double window_s = 0.0;
  long count = 0;         // front-bumper crossings
  double occupancy = 0.0; // fraction of the window the detector was covered
  double mean_speed = 0.0;  // mean speed of crossing vehicles, 0 if none
};

/// A simulation event. Kind selects which fields are meaningful.
struct Event {
  enum class Kind { Spawn, LaneChange, Arrive, Stop, Go };
  Kind kind;
  double t = 0.0;
  long vehicle = -1;
  Route route = Route::MainThrough;
  int lane = -1;
  int from_lane = -1;  // LaneChange only
  double position = 0.0;
  double speed = 0.0;
};

const char* to_string(Event::Kind k);

/// Krauss safe speed: the fastest speed that still allows stopping behind
/// the leader assuming the leader brakes at max_decel and the follower
/// reacts after reaction_time.
double krauss_safe_speed(double gap, double leader_speed, double follower_speed,
                         double max_decel, double reaction_time);

/// IDM acceleration, clamped to [-emergency_decel, accel].
double idm_accel(double gap, double speed, double closing_speed,
                 double desired_speed, const CarFollowConfig& cf);

/// Time for the follower's front to reach the leader's rear at current
/// speeds; empty unless the follower is strictly closing in.
std::optional<double> time_to_collision(const Vehicle& follower, const Vehicle& leader);

struct RouteRates {
  double main_through = 0.0;  // veh/h
  double main_off = 0.0;
  double ramp_on = 0.0;
};

/// Speed below which a vehicle counts as standing, m/s.
constexpr double kStandingSpeed = 0.1;

/// Discrete-time lane-level traffic simulator. One step advances the clock
/// by sim_step_s: demand is drawn, queued vehicles are inserted, lane
/// changes execute, then positions and speeds update front-to-back in
/// downstream-first lane order. A follower is never placed past its
/// leader's rear, so gaps stay non-negative by construction.
class Simulator {
 public:
  Simulator(const net::Network& net, const ScenarioConfig& cfg, std::uint64_t seed);

  void step();

  /// Draws Poisson arrivals for each route over dt and queues the new
  /// vehicles for insertion. Returns the vehicles created. Called by step()
  /// with the profile rates; tests may call it directly with fixed rates.
  std::vector<Vehicle> spawn_poisson(const RouteRates& rates, double dt);

  /// Posts per-lane limits (m/s) on the DSA lanes, index order. Takes
  /// effect from the next step. Throws if the count does not match.
  void apply_speed_limits(std::span<const double> dsa_limits);

  /// Snapshot of every lane's detector over the window since the last call,
  /// then restarts the windows. One reading per lane, lane id order.
  std::vector<DetectorReading> read_detectors();

  /// Inserts a vehicle directly, bypassing the demand process. Counts as
  /// spawned. Throws if the placement overlaps another vehicle.
  long place_vehicle(int lane, double position, double speed, Route route,
                     int type_index, double speed_factor = 1.0);

  double clock() const { return clock_; }
  long spawned_total() const { return spawned_; }
  long arrived_total() const { return arrived_; }
  long active_count() const { return static_cast<long>(vehicles_.size()); }
  long pending_count() const;

  const net::Network& network() const { return net_; }
  const Vehicle& vehicle(long id) const;
  /// Vehicle ids on a lane, front (most downstream) first.
  const std::vector<long>& lane_vehicles(int lane) const { return lane_order_[lane]; }
  /// The vehicle ahead of `id` on its own lane, if any.
  std::optional<long> leader_of(long id) const;
  double effective_limit(int lane) const { return limits_[lane]; }

  /// Mean speed of vehicles on `lane`; `fallback` when the lane is empty.
  double lane_mean_speed(int lane, double fallback) const;
  /// Smallest front-to-rear gap over all follower/leader pairs on the same
  /// lane; +inf when no lane has two vehicles.
  double min_gap() const;

  void set_event_sink(std::function<void(const Event&)> sink) { sink_ = std::move(sink); }

 private:
  struct Detector {
    double accum_covered = 0.0;  // seconds the detector was occupied
    long crossings = 0;
    double speed_sum = 0.0;
  };

  RouteRates rates_at(double t) const;
  void insert_pending();
  void do_lane_changes();
  void move_vehicles();
  /// Inserts `id` into the lane's order list keeping front-first position
  /// order. Plain push_back breaks the invariant when two feeder lanes hand
  /// vehicles to the same lane in one step.
  void insert_ordered(int lane, long id);
  int spawn_area_lane_count(Route r) const;
  bool try_insert(Vehicle& v);
  std::optional<int> route_successor(const Vehicle& v, int lane) const;
  std::optional<int> mandatory_target(const Vehicle& v) const;
  bool change_is_safe(const Vehicle& v, int target_lane) const;
  double anticipated_speed(const Vehicle& v, int lane) const;
  double commanded_speed(const Vehicle& v, double gap, double leader_speed) const;
  /// Nearest vehicle ahead of `pos` on `lane` or along the route successor
  /// chain; returns gap from `front_pos` and the leader's speed.
  struct Ahead {
    double gap;
    double speed;
    long id;  // -1 for the virtual wall at a taper end
  };
  std::optional<Ahead> ahead_of(int lane, double front_pos, const Vehicle& v,
                                double lookahead) const;
  void emit(const Event& e) { if (sink_) sink_(e); }
  void accumulate_detector(int lane, double from, double to, double speed,
                           double dt_part, double vehicle_length);
  void update_standing(Vehicle& v, double t);

  net::Network net_;
  ScenarioConfig cfg_;
  std::mt19937_64 rng_;
  double clock_ = 0.0;
  double window_start_ = 0.0;
  long next_id_ = 0;
  long spawned_ = 0;
  long arrived_ = 0;
  std::unordered_map<long, Vehicle> vehicles_;
  std::vector<std::vector<long>> lane_order_;  // per lane, front first
  std::vector<double> limits_;                 // effective, m/s
  std::vector<Detector> detectors_;
  std::vector<std::deque<Vehicle>> pending_;   // per route FIFO
  std::vector<int> move_order_;                // downstream lanes first
  std::function<void(const Event&)> sink_;
};

}  // namespace dvsl::sim
