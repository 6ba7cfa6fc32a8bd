#include "dvsl/net.hpp"

#include <algorithm>
#include <stdexcept>

namespace dvsl::net {

const char* to_string(AreaKind kind) {
  switch (kind) {
    case AreaKind::MI: return "MI";
    case AreaKind::DSA: return "DSA";
    case AreaKind::AA: return "AA";
    case AreaKind::RI: return "RI";
    case AreaKind::MA: return "MA";
    case AreaKind::MO: return "MO";
    case AreaKind::RO: return "RO";
  }
  return "?";
}

std::optional<AreaKind> area_from_string(const std::string& name) {
  for (AreaKind k : kAllAreas)
    if (name == to_string(k)) return k;
  return std::nullopt;
}

bool is_state_area(AreaKind kind) {
  return std::find(kStateAreas.begin(), kStateAreas.end(), kind) != kStateAreas.end();
}

int Network::lane_id(AreaKind area, int index) const {
  for (const Lane& l : lanes)
    if (l.area == area && l.index == index) return l.id;
  throw std::out_of_range(std::string("net: no lane ") + to_string(area) + "_" +
                          std::to_string(index));
}

std::vector<int> Network::lanes_in(AreaKind area) const {
  std::vector<int> ids;
  for (const Lane& l : lanes)
    if (l.area == area) ids.push_back(l.id);
  return ids;
}

int Network::lane_count(AreaKind area) const {
  int n = 0;
  for (const Lane& l : lanes) n += l.area == area;
  return n;
}

bool validate_cfl(double segment_length, double v_segment, double dt) {
  if (segment_length <= 0.0 || v_segment <= 0.0 || dt <= 0.0)
    throw std::invalid_argument("net: validate_cfl requires positive arguments");
  return segment_length >= v_segment * dt;
}

Network build_network(const ScenarioConfig& cfg) {
  Network out;
  out.sim_step = cfg.sim_step_s;
  out.control_update = cfg.control_update_s;
  out.transitive_adjacency = cfg.transitive_adjacency;
  if (cfg.sim_step_s <= 0.0 || cfg.control_update_s <= 0.0)
    throw std::invalid_argument("net: time steps must be positive");
  if (cfg.base_speed_limit <= 0.0)
    throw std::invalid_argument("net: base speed limit must be positive");

  struct AreaInfo {
    int lane_count;
    double length;
    double limit;
  };
  std::array<std::optional<AreaInfo>, kAllAreas.size()> info;
  for (const auto& [name, a] : cfg.areas) {
    auto kind = area_from_string(name);
    if (!kind) throw std::invalid_argument("net: unknown area '" + name + "'");
    if (a.lane_count <= 0)
      throw std::invalid_argument("net: area " + name + " needs a positive lane count");
    if (a.length_m <= 0.0)
      throw std::invalid_argument("net: area " + name + " needs a positive length");
    const double limit = a.speed_limit.value_or(cfg.base_speed_limit);
    if (limit <= 0.0)
      throw std::invalid_argument("net: area " + name + " needs a positive speed limit");
    info[static_cast<int>(*kind)] = AreaInfo{a.lane_count, a.length_m, limit};
  }

  for (AreaKind kind : kStateAreas) {
    const auto& a = info[static_cast<int>(kind)];
    if (a && !validate_cfl(a->length, a->limit, cfg.control_update_s))
      throw std::invalid_argument(
          std::string("net: segment length of ") + to_string(kind) +
          " is shorter than the distance covered in one control update");
  }

  // State-area lanes first so lane id == node id.
  for (bool state_pass : {true, false}) {
    for (AreaKind kind : kAllAreas) {
      if (is_state_area(kind) != state_pass) continue;
      const auto& a = info[static_cast<int>(kind)];
      if (!a) continue;
      for (int i = 0; i < a->lane_count; ++i) {
        Lane l;
        l.id = static_cast<int>(out.lanes.size());
        l.name = std::string(to_string(kind)) + "_" + std::to_string(i);
        l.area = kind;
        l.index = i;
        l.length = a->length;
        l.base_limit = a->limit;
        out.lanes.push_back(std::move(l));
      }
      if (state_pass) out.node_count += a->lane_count;
    }
  }

  auto count = [&](AreaKind k) { return out.lane_count(k); };
  auto link = [&](AreaKind from, int i, AreaKind to, int j) {
    const int a = out.lane_id(from, i), b = out.lane_id(to, j);
    out.lanes[a].successors.push_back(b);
    out.lanes[b].predecessors.push_back(a);
  };
  // Mainline chain: lane i continues into lane i, folding into the rightmost
  // lane when the next area is narrower.
  const std::array<AreaKind, 4> chain = {AreaKind::MI, AreaKind::DSA,
                                         AreaKind::AA, AreaKind::MA};
  for (std::size_t s = 0; s + 1 < chain.size(); ++s) {
    const int a = count(chain[s]), b = count(chain[s + 1]);
    if (a == 0 || b == 0) continue;
    for (int i = 0; i < a; ++i) link(chain[s], i, chain[s + 1], std::min(i, b - 1));
  }
  // Ramp lanes continue into the top MA indexes; those merge-side MA lanes
  // taper out (no successor), forcing a merge before the area ends.
  const int n_ri = count(AreaKind::RI), n_ma = count(AreaKind::MA);
  if (n_ri > 0 && n_ma > 0) {
    for (int k = 0; k < n_ri; ++k)
      if (n_ma - n_ri + k >= 0) link(AreaKind::RI, k, AreaKind::MA, n_ma - n_ri + k);
  }
  const int ramp_lanes = (n_ri > 0 && n_ma > n_ri) ? n_ri : 0;
  const int n_mo = count(AreaKind::MO);
  if (n_ma > 0 && n_mo > 0) {
    const int through = n_ma - ramp_lanes;
    for (int i = 0; i < through; ++i) link(AreaKind::MA, i, AreaKind::MO, std::min(i, n_mo - 1));
  }
  if (n_ma > 0 && count(AreaKind::RO) > 0) link(AreaKind::MA, 0, AreaKind::RO, 0);

  for (Lane& l : out.lanes) {
    const int n = count(l.area);
    if (l.index > 0) l.neighbors.push_back(out.lane_id(l.area, l.index - 1));
    if (l.index + 1 < n) l.neighbors.push_back(out.lane_id(l.area, l.index + 1));
  }
  return out;
}

AdjacencyMatrix build_adjacency(const Network& net) {
  const int n = net.node_count;
  AdjacencyMatrix adj;
  adj.entries = Eigen::MatrixXd::Zero(n, n);

  // Area-level flow DAG over the state areas.
  auto add_flow = [&](AreaKind from, AreaKind to) {
    for (int i : net.lanes_in(from))
      for (int j : net.lanes_in(to))
        if (i < n && j < n && i != j) adj.entries(i, j) = 1.0;
  };
  const std::vector<std::pair<AreaKind, AreaKind>> direct = {
      {AreaKind::MI, AreaKind::DSA},
      {AreaKind::DSA, AreaKind::AA},
      {AreaKind::AA, AreaKind::MA},
      {AreaKind::RI, AreaKind::MA}};
  if (net.transitive_adjacency) {
    // Transitive closure of the DAG above.
    const std::vector<std::pair<AreaKind, AreaKind>> closure = {
        {AreaKind::MI, AreaKind::DSA}, {AreaKind::MI, AreaKind::AA},
        {AreaKind::MI, AreaKind::MA},  {AreaKind::DSA, AreaKind::AA},
        {AreaKind::DSA, AreaKind::MA}, {AreaKind::AA, AreaKind::MA},
        {AreaKind::RI, AreaKind::MA}};
    for (const auto& [a, b] : closure) add_flow(a, b);
  } else {
    for (const auto& [a, b] : direct) add_flow(a, b);
  }

  for (int i = 0; i < n; ++i)
    for (int j : net.lane(i).neighbors)
      if (j < n) adj.entries(i, j) = adj.entries(j, i) = 1.0;
  return adj;
}

}  // namespace dvsl::net
