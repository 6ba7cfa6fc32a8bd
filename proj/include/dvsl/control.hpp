#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dvsl/config.hpp"
#include "dvsl/graphstate.hpp"
#include "dvsl/net.hpp"
#include "dvsl/ppo.hpp"
#include "dvsl/sim.hpp"

namespace dvsl::control {

enum class Kind { NoVsl, RuleBased, Policy };

const char* to_string(Kind k);

/// Occupancy-threshold lookup: rows sorted by breakpoint, the last row whose
/// breakpoint is <= the occupancy wins.
struct RuleTable {
  std::vector<std::pair<double, double>> rows;  // occupancy >= x -> limit m/s
  double lookup(double occupancy) const;
};

/// Stateless per-step limit selection. decide() maps the latest detector
/// readings to one limit per DSA lane, clamped to the posted limit range.
class Controller {
 public:
  static Controller no_vsl(const VslConfig& vsl);
  static Controller rule_based(const RuleTable& table, const VslConfig& vsl);
  /// Uses the policy means deterministically (no action noise).
  static Controller policy(ppo::ModelBundle model, const VslConfig& vsl);

  Kind kind() const { return kind_; }
  const ppo::ModelBundle& model() const { return model_; }

  Eigen::VectorXd decide(const std::vector<sim::DetectorReading>& readings,
                         const net::Network& net,
                         const net::AdjacencyMatrix& adjacency) const;

 private:
  Controller(Kind kind, VslConfig vsl) : kind_(kind), vsl_(vsl) {}
  Kind kind_;
  VslConfig vsl_;
  RuleTable table_;
  ppo::ModelBundle model_;
};

}  // namespace dvsl::control
