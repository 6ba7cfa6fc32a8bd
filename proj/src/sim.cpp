#include "dvsl/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dvsl::sim {

const char* to_string(Route r) {
  switch (r) {
    case Route::MainThrough: return "main_through";
    case Route::MainOff: return "main_off";
    case Route::RampOn: return "ramp_on";
  }
  return "?";
}

const char* to_string(Event::Kind k) {
  switch (k) {
    case Event::Kind::Spawn: return "spawn";
    case Event::Kind::LaneChange: return "lane_change";
    case Event::Kind::Arrive: return "arrive";
    case Event::Kind::Stop: return "stop";
    case Event::Kind::Go: return "go";
  }
  return "?";
}

const std::vector<VehicleType>& default_vehicle_types() {
  static const std::vector<VehicleType> types = {
      {"long_krauss", 8.0, CarFollowModel::Krauss, 1.0, 0.1, 1.0},
      {"long_idm", 8.0, CarFollowModel::Idm, 1.0, 0.1, 0.8},
      {"short_krauss", 3.5, CarFollowModel::Krauss, 1.0, 0.1, 1.0},
      {"short_idm", 3.5, CarFollowModel::Idm, 1.0, 0.1, 0.8},
  };
  return types;
}

double krauss_safe_speed(double gap, double leader_speed, double follower_speed,
                         double max_decel, double reaction_time) {
  if (max_decel <= 0.0 || reaction_time < 0.0)
    throw std::invalid_argument("sim: krauss_safe_speed needs max_decel > 0, reaction_time >= 0");
  const double denom = (leader_speed + follower_speed) / (2.0 * max_decel) + reaction_time;
  if (denom <= 0.0) return std::max(0.0, gap > 0.0 ? leader_speed : 0.0);
  const double v = leader_speed + (gap - leader_speed * reaction_time) / denom;
  return std::max(0.0, v);
}

double idm_accel(double gap, double speed, double closing_speed,
                 double desired_speed, const CarFollowConfig& cf) {
  if (gap <= 0.0) return -cf.emergency_decel;
  if (desired_speed <= 0.0) return -cf.emergency_decel;
  const double s_star =
      cf.min_gap + std::max(0.0, speed * cf.headway +
                                     speed * closing_speed /
                                         (2.0 * std::sqrt(cf.accel * cf.decel)));
  const double a = cf.accel * (1.0 - std::pow(speed / desired_speed, 4.0) -
                               (s_star / gap) * (s_star / gap));
  return std::clamp(a, -cf.emergency_decel, cf.accel);
}

std::optional<double> time_to_collision(const Vehicle& follower, const Vehicle& leader) {
  const double closing = follower.speed - leader.speed;
  if (closing <= 0.0) return std::nullopt;
  const double gap = leader.rear() - follower.position;
  if (gap <= 0.0) return 0.0;
  return gap / closing;
}

namespace {

constexpr double kLcMinPhysicalGap = 0.1;  // m, hard floor when changing lanes

int route_index(Route r) { return static_cast<int>(r); }

}  // namespace

Simulator::Simulator(const net::Network& net, const ScenarioConfig& cfg, std::uint64_t seed)
    : net_(net), cfg_(cfg), rng_(seed) {
  const std::size_t n = net_.lanes.size();
  lane_order_.resize(n);
  detectors_.resize(n);
  limits_.resize(n);
  for (std::size_t i = 0; i < n; ++i) limits_[i] = net_.lanes[i].base_limit;
  pending_.resize(3);

  const double scale = cfg_.demand.scale;
  if (scale * (cfg_.demand.mainline_through + cfg_.demand.mainline_off) > 0.0 &&
      !net_.has_area(net::AreaKind::MI))
    throw std::invalid_argument("sim: mainline demand needs an MI area");
  if (scale * cfg_.demand.ramp_on > 0.0 && !net_.has_area(net::AreaKind::RI))
    throw std::invalid_argument("sim: ramp demand needs an RI area");

  auto rank = [](net::AreaKind a) {
    switch (a) {
      case net::AreaKind::MO:
      case net::AreaKind::RO: return 0;
      case net::AreaKind::MA: return 1;
      case net::AreaKind::AA:
      case net::AreaKind::RI: return 2;
      case net::AreaKind::DSA: return 3;
      case net::AreaKind::MI: return 4;
    }
    return 5;
  };
  move_order_.resize(n);
  for (std::size_t i = 0; i < n; ++i) move_order_[i] = static_cast<int>(i);
  std::stable_sort(move_order_.begin(), move_order_.end(), [&](int a, int b) {
    return rank(net_.lanes[a].area) < rank(net_.lanes[b].area);
  });
}

const Vehicle& Simulator::vehicle(long id) const {
  auto it = vehicles_.find(id);
  if (it == vehicles_.end()) throw std::out_of_range("sim: unknown vehicle id");
  return it->second;
}

long Simulator::pending_count() const {
  long n = 0;
  for (const auto& q : pending_) n += static_cast<long>(q.size());
  return n;
}

std::optional<long> Simulator::leader_of(long id) const {
  const Vehicle& v = vehicle(id);
  const auto& order = lane_order_[v.lane];
  for (std::size_t i = 0; i < order.size(); ++i)
    if (order[i] == id) return i > 0 ? std::optional<long>(order[i - 1]) : std::nullopt;
  return std::nullopt;
}

double Simulator::lane_mean_speed(int lane, double fallback) const {
  const auto& order = lane_order_.at(lane);
  if (order.empty()) return fallback;
  double sum = 0.0;
  for (long id : order) sum += vehicles_.at(id).speed;
  return sum / static_cast<double>(order.size());
}

double Simulator::min_gap() const {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& order : lane_order_) {
    for (std::size_t i = 1; i < order.size(); ++i) {
      const Vehicle& lead = vehicles_.at(order[i - 1]);
      const Vehicle& fol = vehicles_.at(order[i]);
      best = std::min(best, lead.rear() - fol.position);
    }
  }
  // Front vehicles against the rearmost vehicle of their route successor.
  for (const auto& order : lane_order_) {
    if (order.empty()) continue;
    const Vehicle& front = vehicles_.at(order.front());
    const auto succ = route_successor(front, front.lane);
    if (!succ || lane_order_[*succ].empty()) continue;
    const Vehicle& blocker = vehicles_.at(lane_order_[*succ].back());
    const double world_gap =
        (net_.lanes[front.lane].length - front.position) + blocker.rear();
    best = std::min(best, world_gap);
  }
  return best;
}

RouteRates Simulator::rates_at(double t) const {
  RouteRates r;
  r.main_through = cfg_.demand.rate_at(t, cfg_.demand.mainline_through);
  r.main_off = cfg_.demand.rate_at(t, cfg_.demand.mainline_off);
  r.ramp_on = cfg_.demand.rate_at(t, cfg_.demand.ramp_on);
  return r;
}

std::vector<Vehicle> Simulator::spawn_poisson(const RouteRates& rates, double dt) {
  if (dt <= 0.0) throw std::invalid_argument("sim: spawn_poisson needs dt > 0");
  std::vector<Vehicle> out;
  const std::array<std::pair<Route, double>, 3> demands = {
      std::make_pair(Route::MainThrough, rates.main_through),
      std::make_pair(Route::MainOff, rates.main_off),
      std::make_pair(Route::RampOn, rates.ramp_on)};
  const auto& types = default_vehicle_types();
  for (const auto& [route, veh_per_h] : demands) {
    if (veh_per_h < 0.0) throw std::invalid_argument("sim: negative demand rate");
    if (veh_per_h == 0.0) continue;
    std::poisson_distribution<int> draw(veh_per_h / 3600.0 * dt);
    const int n = draw(rng_);
    for (int k = 0; k < n; ++k) {
      std::uniform_int_distribution<int> pick(0, static_cast<int>(types.size()) - 1);
      const int ti = pick(rng_);
      const VehicleType& vt = types[ti];
      double factor = vt.speed_factor_mean;
      if (vt.speed_factor_std > 0.0) {
        std::normal_distribution<double> nd(vt.speed_factor_mean, vt.speed_factor_std);
        do { factor = nd(rng_); } while (factor <= 0.0);
      }
      Vehicle v;
      v.id = next_id_++;
      v.type = ti;
      v.route = route;
      v.length = vt.length;
      v.speed_factor = factor;
      v.lc_speed_gain = vt.lc_speed_gain;
      v.model = vt.model;
      pending_[route_index(route)].push_back(v);
      out.push_back(v);
    }
  }
  return out;
}

void Simulator::apply_speed_limits(std::span<const double> dsa_limits) {
  const auto dsa = net_.lanes_in(net::AreaKind::DSA);
  if (dsa_limits.size() != dsa.size())
    throw std::invalid_argument("sim: expected one limit per DSA lane");
  for (double v : dsa_limits)
    if (!(v > 0.0)) throw std::invalid_argument("sim: speed limits must be positive");
  for (std::size_t i = 0; i < dsa.size(); ++i) limits_[dsa[i]] = dsa_limits[i];
}

long Simulator::place_vehicle(int lane, double position, double speed, Route route,
                              int type_index, double speed_factor) {
  const auto& types = default_vehicle_types();
  if (lane < 0 || lane >= static_cast<int>(net_.lanes.size()))
    throw std::out_of_range("sim: place_vehicle lane out of range");
  if (type_index < 0 || type_index >= static_cast<int>(types.size()))
    throw std::out_of_range("sim: place_vehicle type out of range");
  const VehicleType& vt = types[type_index];
  if (position < 0.0 || position > net_.lanes[lane].length)
    throw std::invalid_argument("sim: place_vehicle position outside lane");
  if (speed < 0.0 || speed_factor <= 0.0)
    throw std::invalid_argument("sim: place_vehicle needs speed >= 0, factor > 0");
  for (long id : lane_order_[lane]) {
    const Vehicle& o = vehicles_.at(id);
    if (position > o.rear() && position - vt.length < o.position)
      throw std::invalid_argument("sim: place_vehicle overlaps vehicle " + std::to_string(o.id));
  }
  Vehicle v;
  v.id = next_id_++;
  v.type = type_index;
  v.route = route;
  v.lane = lane;
  v.position = position;
  v.speed = speed;
  v.length = vt.length;
  v.speed_factor = speed_factor;
  v.lc_speed_gain = vt.lc_speed_gain;
  v.model = vt.model;
  v.spawn_time = clock_;
  v.standing = speed < kStandingSpeed;
  auto& order = lane_order_[lane];
  auto it = std::find_if(order.begin(), order.end(), [&](long id) {
    return vehicles_.at(id).position < position;
  });
  order.insert(it, v.id);
  vehicles_.emplace(v.id, v);
  ++spawned_;
  emit({Event::Kind::Spawn, clock_, v.id, route, lane, -1, position, speed});
  if (v.standing)
    emit({Event::Kind::Stop, clock_, v.id, route, lane, -1, position, speed});
  return v.id;
}

int Simulator::spawn_area_lane_count(Route r) const {
  return net_.lane_count(r == Route::RampOn ? net::AreaKind::RI : net::AreaKind::MI);
}

bool Simulator::try_insert(Vehicle& v) {
  const net::AreaKind area = v.route == Route::RampOn ? net::AreaKind::RI : net::AreaKind::MI;
  const auto lanes = net_.lanes_in(area);
  std::vector<int> eligible;
  for (int lane : lanes) {
    const auto& order = lane_order_[lane];
    if (order.empty()) {
      eligible.push_back(lane);
      continue;
    }
    const Vehicle& last = vehicles_.at(order.back());
    if (last.rear() - v.length >= cfg_.carfollow.min_gap) eligible.push_back(lane);
  }
  if (eligible.empty()) return false;

  int lane;
  if (v.route == Route::MainOff) {
    lane = eligible.front();  // exiting traffic keeps right
  } else if (eligible.size() == 1) {
    lane = eligible.front();
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
    lane = eligible[pick(rng_)];
  }

  const double cap = v.speed_factor * limits_[lane];
  double speed = cap;
  const auto& order = lane_order_[lane];
  if (!order.empty()) {
    const Vehicle& last = vehicles_.at(order.back());
    const double gap = last.rear() - v.length;
    speed = std::min(cap, krauss_safe_speed(gap - cfg_.carfollow.min_gap, last.speed, cap,
                                            cfg_.carfollow.decel, cfg_.carfollow.reaction_time));
  }
  v.lane = lane;
  v.position = v.length;
  v.speed = std::max(0.0, speed);
  v.spawn_time = clock_;
  v.standing = v.speed < kStandingSpeed;
  lane_order_[lane].push_back(v.id);
  vehicles_.emplace(v.id, v);
  ++spawned_;
  emit({Event::Kind::Spawn, clock_, v.id, v.route, lane, -1, v.position, v.speed});
  if (v.standing)
    emit({Event::Kind::Stop, clock_, v.id, v.route, lane, -1, v.position, v.speed});
  return true;
}

void Simulator::insert_pending() {
  for (auto& queue : pending_) {
    while (!queue.empty()) {
      if (!try_insert(queue.front())) break;
      queue.pop_front();
    }
  }
}

std::optional<int> Simulator::route_successor(const Vehicle& v, int lane) const {
  const net::Lane& l = net_.lanes[lane];
  if (l.successors.empty()) return std::nullopt;
  if (l.successors.size() == 1) return l.successors.front();
  // Forks pick by destination: off-route takes the ramp, everyone else stays
  // on the mainline.
  for (int s : l.successors) {
    const bool ramp = net_.lanes[s].area == net::AreaKind::RO;
    if ((v.route == Route::MainOff) == ramp) return s;
  }
  return l.successors.front();
}

std::optional<int> Simulator::mandatory_target(const Vehicle& v) const {
  const net::Lane& l = net_.lanes[v.lane];
  if (l.area != net::AreaKind::MA) return std::nullopt;
  // Merging traffic must leave a tapering lane before it ends.
  if (l.successors.empty() && l.index > 0) return net_.lane_id(l.area, l.index - 1);
  // Exiting traffic works its way to the rightmost lane where the ramp forks.
  if (v.route == Route::MainOff && l.index > 0) return net_.lane_id(l.area, l.index - 1);
  return std::nullopt;
}

double Simulator::anticipated_speed(const Vehicle& v, int lane) const {
  const double cap = v.speed_factor * limits_[lane];
  const auto ahead = ahead_of(lane, v.position, v, 2.0 * net_.lanes[lane].length);
  const double gap = ahead ? ahead->gap : std::numeric_limits<double>::infinity();
  const double lead_speed = ahead ? ahead->speed : 0.0;
  const double dt = cfg_.sim_step_s;
  if (v.model == CarFollowModel::Krauss) {
    double out = std::min(cap, v.speed + cfg_.carfollow.accel * dt);
    if (ahead)
      out = std::min(out, krauss_safe_speed(gap - cfg_.carfollow.min_gap, lead_speed, v.speed,
                                            cfg_.carfollow.decel, cfg_.carfollow.reaction_time));
    return std::max(0.0, out);
  }
  const double a = ahead ? idm_accel(gap, v.speed, v.speed - lead_speed, cap, cfg_.carfollow)
                         : idm_accel(1e9, v.speed, 0.0, cap, cfg_.carfollow);
  return std::clamp(v.speed + a * dt, 0.0, cap);
}

bool Simulator::change_is_safe(const Vehicle& v, int target_lane) const {
  const double dt = cfg_.sim_step_s;
  const double b = cfg_.carfollow.decel;
  const net::Lane& tl = net_.lanes[target_lane];
  // Leader side via the route walk so a vehicle nosing back past the target
  // lane's downstream boundary blocks the change like any same-lane leader.
  if (auto lead = ahead_of(target_lane, v.position, v, 2.0 * tl.length)) {
    if (lead->gap < kLcMinPhysicalGap) return false;
    const double safe = krauss_safe_speed(lead->gap - cfg_.carfollow.min_gap, lead->speed,
                                          v.speed, b, cfg_.carfollow.reaction_time);
    if (safe < std::max(0.0, v.speed - b * dt)) return false;
  }
  const Vehicle* lag = nullptr;
  for (long id : lane_order_[target_lane]) {
    const Vehicle& o = vehicles_.at(id);
    if (o.position < v.position) {
      lag = &o;  // list is front-first, the first such entry is nearest
      break;
    }
  }
  if (lag != nullptr) {
    const double gap = v.rear() - lag->position;
    if (gap < kLcMinPhysicalGap) return false;
    const double safe = krauss_safe_speed(gap - cfg_.carfollow.min_gap, v.speed, lag->speed,
                                          b, cfg_.carfollow.reaction_time);
    if (safe < std::max(0.0, lag->speed - b * dt)) return false;
  } else {
    // No follower on the target lane itself: the front vehicle of a feeder
    // lane may still be about to cross into the spot.
    for (int p : tl.predecessors) {
      const auto& order = lane_order_[p];
      if (order.empty()) continue;
      const Vehicle& o = vehicles_.at(order.front());
      const double gap = (net_.lanes[p].length - o.position) + v.rear();
      if (gap < kLcMinPhysicalGap) return false;
      const double safe = krauss_safe_speed(gap - cfg_.carfollow.min_gap, v.speed, o.speed,
                                            b, cfg_.carfollow.reaction_time);
      if (safe < std::max(0.0, o.speed - b * dt)) return false;
    }
  }
  return true;
}

void Simulator::insert_ordered(int lane, long id) {
  auto& order = lane_order_[lane];
  const double position = vehicles_.at(id).position;
  auto pos_it = std::find_if(order.begin(), order.end(), [&](long oid) {
    return vehicles_.at(oid).position < position;
  });
  order.insert(pos_it, id);
}

void Simulator::do_lane_changes() {
  for (std::size_t lane = 0; lane < lane_order_.size(); ++lane) {
    const std::vector<long> snapshot = lane_order_[lane];
    for (long id : snapshot) {
      auto it = vehicles_.find(id);
      if (it == vehicles_.end() || it->second.lane != static_cast<int>(lane)) continue;
      Vehicle& v = it->second;

      int target = -1;
      if (auto m = mandatory_target(v)) {
        target = *m;
        if (!change_is_safe(v, target)) continue;
      } else {
        const double here = anticipated_speed(v, v.lane);
        double best_gain = cfg_.lane_change.speed_gain_threshold;
        for (int nb : net_.lanes[v.lane].neighbors) {
          // Never drift onto a tapering lane voluntarily.
          if (net_.lanes[nb].successors.empty() &&
              !net_.lanes[v.lane].successors.empty())
            continue;
          const double gain = (anticipated_speed(v, nb) - here) * v.lc_speed_gain;
          if (gain > best_gain && change_is_safe(v, nb)) {
            best_gain = gain;
            target = nb;
          }
        }
        if (target < 0) continue;
      }

      auto& from_order = lane_order_[v.lane];
      from_order.erase(std::find(from_order.begin(), from_order.end(), id));
      const int from_lane = v.lane;
      v.lane = target;
      insert_ordered(target, id);
      emit({Event::Kind::LaneChange, clock_, id, v.route, target, from_lane,
            v.position, v.speed});
    }
  }
}

std::optional<Simulator::Ahead> Simulator::ahead_of(int lane, double front_pos,
                                                    const Vehicle& v,
                                                    double lookahead) const {
  const Vehicle* nearest = nullptr;
  for (long id : lane_order_[lane]) {
    if (id == v.id) continue;
    const Vehicle& o = vehicles_.at(id);
    if (o.position < front_pos) break;
    nearest = &o;
  }
  if (nearest != nullptr)
    return Ahead{nearest->rear() - front_pos, nearest->speed, nearest->id};

  // Walk the route successor chain. A missing successor is a dead end the
  // vehicle must stop at (tapering lane), except on the outflow lanes where
  // the road simply continues past the modelled network.
  double dist = net_.lanes[lane].length - front_pos;
  auto succ = route_successor(v, lane);
  if (!succ) {
    const net::AreaKind area = net_.lanes[lane].area;
    if (area == net::AreaKind::MO || area == net::AreaKind::RO) return std::nullopt;
    return Ahead{dist, 0.0, -1};
  }
  int hops = 0;
  while (succ && dist <= lookahead && hops < 3) {
    const auto& order = lane_order_[*succ];
    if (!order.empty()) {
      const Vehicle& o = vehicles_.at(order.back());
      return Ahead{dist + o.rear(), o.speed, o.id};
    }
    dist += net_.lanes[*succ].length;
    succ = route_successor(v, *succ);
    ++hops;
  }
  return std::nullopt;
}

double Simulator::commanded_speed(const Vehicle& v, double gap, double leader_speed) const {
  const double dt = cfg_.sim_step_s;
  const double cap = v.speed_factor * limits_[v.lane];
  if (v.model == CarFollowModel::Krauss) {
    double out = std::min(cap, v.speed + cfg_.carfollow.accel * dt);
    out = std::min(out, krauss_safe_speed(gap - cfg_.carfollow.min_gap, leader_speed, v.speed,
                                          cfg_.carfollow.decel, cfg_.carfollow.reaction_time));
    return std::max(0.0, out);
  }
  const double a = idm_accel(gap, v.speed, v.speed - leader_speed, cap, cfg_.carfollow);
  return std::clamp(v.speed + a * dt, 0.0, cap);
}

void Simulator::update_standing(Vehicle& v, double t) {
  const bool now = v.speed < kStandingSpeed;
  if (now && !v.standing) {
    v.standing = true;
    emit({Event::Kind::Stop, t, v.id, v.route, v.lane, -1, v.position, v.speed});
  } else if (!now && v.standing) {
    v.standing = false;
    emit({Event::Kind::Go, t, v.id, v.route, v.lane, -1, v.position, v.speed});
  }
}

void Simulator::accumulate_detector(int lane, double from, double to, double speed,
                                    double dt_part, double vehicle_length) {
  if (dt_part <= 0.0) return;
  Detector& det = detectors_[lane];
  const double pos = net_.lanes[lane].length * 0.5;
  if (from < pos && pos <= to) {
    det.crossings += 1;
    det.speed_sum += speed;
  }
  // Covered while the front bumper is within one body length past the point.
  double covered;
  if (speed > 0.0) {
    const double overlap = std::min(to, pos + vehicle_length) - std::max(from, pos);
    covered = overlap > 0.0 ? std::min(overlap / speed, dt_part) : 0.0;
  } else {
    covered = (from >= pos && from <= pos + vehicle_length) ? dt_part : 0.0;
  }
  det.accum_covered += covered;
}

void Simulator::move_vehicles() {
  const double dt = cfg_.sim_step_s;
  const double t_new = clock_;
  for (int lane : move_order_) {
    const std::vector<long> snapshot = lane_order_[lane];
    for (long id : snapshot) {
      auto it = vehicles_.find(id);
      if (it == vehicles_.end() || it->second.lane != lane) continue;
      Vehicle& v = it->second;
      const net::Lane& l = net_.lanes[lane];
      const double old_pos = v.position;

      const auto ahead = ahead_of(lane, v.position, v, 2.0 * l.length);
      double v_cmd;
      if (ahead) {
        v_cmd = commanded_speed(v, ahead->gap, ahead->speed);
      } else if (v.model == CarFollowModel::Krauss) {
        v_cmd = std::min(v.speed_factor * limits_[lane], v.speed + cfg_.carfollow.accel * dt);
      } else {
        const double cap = v.speed_factor * limits_[lane];
        v_cmd = std::clamp(v.speed + idm_accel(1e9, v.speed, 0.0, cap, cfg_.carfollow) * dt,
                           0.0, cap);
      }
      const auto succ = route_successor(v, lane);
      if (succ && v.position + v_cmd * dt > l.length) {
        // Slow down ahead of a stricter limit instead of entering above it.
        v_cmd = std::min(v_cmd, v.speed_factor * limits_[*succ]);
      }
      v_cmd = std::clamp(v_cmd, 0.0, v.speed_factor * limits_[lane]);

      double new_pos = v.position + v_cmd * dt;
      // Hard position guard: never move past the leader's rear. Downstream
      // lanes move first, so the gap already reflects the leader's new
      // position in world coordinates. For a same-lane leader, clamp to its
      // rear directly so the gap stays non-negative to the last bit.
      if (ahead && ahead->id >= 0) {
        new_pos = std::min(new_pos, old_pos + ahead->gap);
        const auto lit = vehicles_.find(ahead->id);
        if (lit != vehicles_.end()) {
          if (lit->second.lane == lane) {
            new_pos = std::min(new_pos, lit->second.rear());
          } else if (succ && lit->second.lane == *succ) {
            // One-hop leader: the world gap must stay non-negative in the
            // same expression the diagnostics recompute it with.
            while (new_pos <= l.length &&
                   (l.length - new_pos) + lit->second.rear() < 0.0)
              new_pos = std::nextafter(
                  new_pos, -std::numeric_limits<double>::infinity());
          }
        }
      }
      if (!succ) new_pos = std::min(new_pos, l.length);

      if (succ && new_pos > l.length) {
        // Committing to a shared merge point must not drop this vehicle's
        // rear behind a competing feeder's nose, or the competitor is left
        // trapped in a negative gap. Hold at the boundary until clear.
        const auto& preds = net_.lanes[*succ].predecessors;
        if (preds.size() > 1) {
          for (int p : preds) {
            if (p == lane) continue;
            const auto& other = lane_order_[p];
            if (other.empty()) continue;
            const Vehicle& o = vehicles_.at(other.front());
            const double clearance = (net_.lanes[p].length - o.position) +
                                     (new_pos - l.length) - v.length;
            if (clearance < 1e-9) {
              new_pos = l.length;
              break;
            }
          }
        }
      }

      const double actual_speed = std::max(0.0, (new_pos - old_pos) / dt);
      v.speed = actual_speed;

      if (new_pos > l.length && succ) {
        const double boundary_part = actual_speed > 0.0 ? (l.length - old_pos) / actual_speed : 0.0;
        accumulate_detector(lane, old_pos, l.length, actual_speed, boundary_part, v.length);
        const double overshoot = new_pos - l.length;
        accumulate_detector(*succ, 0.0, overshoot, actual_speed, dt - boundary_part, v.length);
        auto& from_order = lane_order_[lane];
        from_order.erase(std::find(from_order.begin(), from_order.end(), id));
        const net::Lane& nl = net_.lanes[*succ];
        const bool exits = nl.successors.empty() &&
                           (nl.area == net::AreaKind::MO || nl.area == net::AreaKind::RO);
        if (exits && overshoot >= nl.length) {
          // Degenerate short exit lane: leave immediately.
          if (v.standing) emit({Event::Kind::Go, t_new, id, v.route, lane, -1, l.length, actual_speed});
          emit({Event::Kind::Arrive, t_new, id, v.route, *succ, -1, nl.length, actual_speed});
          vehicles_.erase(it);
          ++arrived_;
          continue;
        }
        v.lane = *succ;
        v.position = overshoot;
        // Same bit-exact guard against a leader on the entered lane.
        if (ahead && ahead->id >= 0) {
          const auto lit = vehicles_.find(ahead->id);
          if (lit != vehicles_.end() && lit->second.lane == *succ)
            v.position = std::min(v.position, lit->second.rear());
        }
        insert_ordered(*succ, id);
        update_standing(v, t_new);
        continue;
      }

      accumulate_detector(lane, old_pos, new_pos, actual_speed, dt, v.length);
      const bool exit_lane = l.successors.empty() &&
                             (l.area == net::AreaKind::MO || l.area == net::AreaKind::RO);
      if (exit_lane && new_pos >= l.length) {
        auto& from_order = lane_order_[lane];
        from_order.erase(std::find(from_order.begin(), from_order.end(), id));
        if (v.standing) emit({Event::Kind::Go, t_new, id, v.route, lane, -1, new_pos, actual_speed});
        emit({Event::Kind::Arrive, t_new, id, v.route, lane, -1, new_pos, actual_speed});
        vehicles_.erase(it);
        ++arrived_;
        continue;
      }
      v.position = new_pos;
      update_standing(v, t_new);
    }
  }
}

void Simulator::step() {
  const double dt = cfg_.sim_step_s;
  const RouteRates rates = rates_at(clock_);
  // Everything that happens during the step is stamped with the post-step
  // clock.
  clock_ += dt;
  spawn_poisson(rates, dt);
  insert_pending();
  do_lane_changes();
  move_vehicles();
}

std::vector<DetectorReading> Simulator::read_detectors() {
  std::vector<DetectorReading> out;
  const double window = clock_ - window_start_;
  out.reserve(detectors_.size());
  for (std::size_t lane = 0; lane < detectors_.size(); ++lane) {
    Detector& det = detectors_[lane];
    DetectorReading r;
    r.lane = static_cast<int>(lane);
    r.window_s = window;
    r.count = det.crossings;
    r.occupancy = window > 0.0 ? std::clamp(det.accum_covered / window, 0.0, 1.0) : 0.0;
    r.mean_speed = det.crossings > 0 ? det.speed_sum / static_cast<double>(det.crossings) : 0.0;
    out.push_back(r);
    det = Detector{};
  }
  window_start_ = clock_;
  return out;
}

}  // namespace dvsl::sim
