#include "dvsl/control.hpp"

#include <algorithm>
#include <stdexcept>

namespace dvsl::control {

const char* to_string(Kind k) {
  switch (k) {
    case Kind::NoVsl: return "no_vsl";
    case Kind::RuleBased: return "rule_based";
    case Kind::Policy: return "policy";
  }
  return "?";
}

double RuleTable::lookup(double occupancy) const {
  if (rows.empty()) throw std::invalid_argument("control: empty rule table");
  double out = rows.front().second;
  for (const auto& [threshold, limit] : rows) {
    if (occupancy >= threshold) out = limit;
  }
  return out;
}

Controller Controller::no_vsl(const VslConfig& vsl) {
  return Controller(Kind::NoVsl, vsl);
}

Controller Controller::rule_based(const RuleTable& table, const VslConfig& vsl) {
  Controller c(Kind::RuleBased, vsl);
  c.table_ = table;
  std::sort(c.table_.rows.begin(), c.table_.rows.end());
  return c;
}

Controller Controller::policy(ppo::ModelBundle model, const VslConfig& vsl) {
  Controller c(Kind::Policy, vsl);
  c.model_ = std::move(model);
  return c;
}

Eigen::VectorXd Controller::decide(const std::vector<sim::DetectorReading>& readings,
                                   const net::Network& net,
                                   const net::AdjacencyMatrix& adjacency) const {
  const auto dsa = net.lanes_in(net::AreaKind::DSA);
  if (dsa.empty()) throw std::invalid_argument("control: scenario has no DSA lanes");
  const int n = static_cast<int>(dsa.size());
  Eigen::VectorXd limits(n);

  switch (kind_) {
    case Kind::NoVsl:
      limits.setConstant(vsl_.v_max);
      break;
    case Kind::RuleBased: {
      // Each DSA lane keys on the occupancy of the same-index merge lane;
      // lanes without a counterpart fall back to their own occupancy.
      const auto ma = net.lanes_in(net::AreaKind::MA);
      std::vector<double> occupancy(net.lanes.size(), 0.0);
      std::vector<bool> seen(net.lanes.size(), false);
      for (const auto& r : readings) {
        if (r.lane < 0 || r.lane >= static_cast<int>(net.lanes.size()))
          throw std::invalid_argument("control: reading for unknown lane");
        occupancy[r.lane] = r.occupancy;
        seen[r.lane] = true;
      }
      for (int i = 0; i < n; ++i) {
        const int probe = i < static_cast<int>(ma.size()) ? ma[i] : dsa[i];
        if (!seen[probe])
          throw std::invalid_argument("control: missing detector reading for lane " +
                                      net.lanes[probe].name);
        limits(i) = table_.lookup(occupancy[probe]);
      }
      break;
    }
    case Kind::Policy: {
      const Eigen::VectorXd state = graphstate::encode(
          readings, net, adjacency, model_.encoder, model_.mode);
      if (state.size() != model_.policy.input_dim())
        throw std::invalid_argument("control: checkpoint does not fit this scenario");
      if (model_.policy.output_dim() != n)
        throw std::invalid_argument("control: checkpoint action count does not match");
      const Eigen::VectorXd means = model_.policy_means(state);
      for (int i = 0; i < n; ++i)
        limits(i) = vsl_.v_min * (1.0 - means(i)) + vsl_.v_max * means(i);
      break;
    }
  }
  for (int i = 0; i < n; ++i) limits(i) = std::clamp(limits(i), vsl_.v_min, vsl_.v_max);
  return limits;
}

}  // namespace dvsl::control
