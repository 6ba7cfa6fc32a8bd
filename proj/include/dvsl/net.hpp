#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dvsl/config.hpp"

namespace dvsl::net {

/// Freeway areas around the merge. MI feeds DSA (where limits are posted),
/// DSA feeds AA, AA and the on-ramp RI feed the merge area MA, which drains
/// into MO and the off-ramp RO. Only the first five contribute state nodes.
enum class AreaKind { MI, DSA, AA, RI, MA, MO, RO };

constexpr std::array<AreaKind, 5> kStateAreas = {
    AreaKind::MI, AreaKind::DSA, AreaKind::AA, AreaKind::RI, AreaKind::MA};
constexpr std::array<AreaKind, 7> kAllAreas = {
    AreaKind::MI, AreaKind::DSA, AreaKind::AA, AreaKind::RI,
    AreaKind::MA, AreaKind::MO,  AreaKind::RO};

const char* to_string(AreaKind kind);
std::optional<AreaKind> area_from_string(const std::string& name);
bool is_state_area(AreaKind kind);

struct Lane {
  int id = -1;           // index into Network::lanes
  std::string name;      // e.g. "MA_3"
  AreaKind area;
  int index = 0;         // position within the area, 0 = rightmost
  double length = 0.0;   // m
  double base_limit = 0.0;  // m/s
  /// Lanes vehicles may continue into at the downstream end.
  std::vector<int> successors;
  /// Lanes feeding this one at the upstream end (mirror of successors).
  std::vector<int> predecessors;
  /// Laterally adjacent lanes in the same area (index distance one).
  std::vector<int> neighbors;
};

/// Immutable lane-level description of the scenario. State-area lanes come
/// first in `lanes`, ordered MI, DSA, AA, RI, MA and by index within each
/// area, so lane ids 0..node_count-1 are exactly the graph nodes.
struct Network {
  std::vector<Lane> lanes;
  int node_count = 0;  // lanes in state areas
  double sim_step = 1.0;
  double control_update = 5.0;
  bool transitive_adjacency = false;

  const Lane& lane(int id) const { return lanes.at(id); }
  /// Lane id for (area, index); throws if the area is absent or index is out
  /// of range.
  int lane_id(AreaKind area, int index) const;
  std::vector<int> lanes_in(AreaKind area) const;
  int lane_count(AreaKind area) const;
  bool has_area(AreaKind area) const { return lane_count(area) > 0; }
};

struct AdjacencyMatrix {
  Eigen::MatrixXd entries;  // node_count x node_count, binary
  int size() const { return static_cast<int>(entries.rows()); }
};

/// Segment length must cover the distance travelled per control update at
/// the local limit, so a vehicle cannot skip a whole segment between limit
/// updates. Throws std::invalid_argument on non-positive input.
bool validate_cfl(double segment_length, double v_segment, double dt);

/// Builds the lane graph for the configured areas. Throws on unknown area
/// names, non-positive lane counts or lengths, and CFL violations in state
/// areas.
Network build_network(const ScenarioConfig& cfg);

/// e_ij = 1 when i sends traffic to j (area-level flow direction, complete
/// bipartite between area pairs) or when i and j are lateral neighbors.
/// With transitive_adjacency, flow edges follow all downstream area pairs
/// instead of direct predecessors only. Diagonal is zero.
AdjacencyMatrix build_adjacency(const Network& net);

}  // namespace dvsl::net
