#include "dvsl/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dvsl {

using nlohmann::json;

double DemandConfig::rate_at(double t, double peak) const {
  double f;
  if (profile.empty()) {
    f = 1.0;
  } else if (t <= profile.front().first) {
    f = profile.front().second;
  } else if (t >= profile.back().first) {
    f = profile.back().second;
  } else {
    f = profile.back().second;
    for (std::size_t i = 1; i < profile.size(); ++i) {
      if (t <= profile[i].first) {
        const auto& [t0, f0] = profile[i - 1];
        const auto& [t1, f1] = profile[i];
        f = t1 > t0 ? f0 + (f1 - f0) * (t - t0) / (t1 - t0) : f1;
        break;
      }
    }
  }
  return peak * scale * f;
}

namespace {

double require_number(const json& j, const std::string& key) {
  if (!j.contains(key) || !j.at(key).is_number())
    throw std::invalid_argument("config: missing or non-numeric key '" + key + "'");
  return j.at(key).get<double>();
}

std::vector<std::pair<double, double>> pairs_from(const json& arr,
                                                  const std::string& what) {
  std::vector<std::pair<double, double>> out;
  if (!arr.is_array()) throw std::invalid_argument("config: " + what + " must be an array");
  for (const auto& row : arr) {
    if (!row.is_array() || row.size() != 2)
      throw std::invalid_argument("config: " + what + " rows must be [x, y] pairs");
    out.emplace_back(row[0].get<double>(), row[1].get<double>());
  }
  return out;
}

}  // namespace

ScenarioConfig ScenarioConfig::from_json_text(const std::string& text) {
  json j = json::parse(text);
  ScenarioConfig cfg;

  if (!j.contains("areas") || !j.at("areas").is_object())
    throw std::invalid_argument("config: missing required object 'areas'");
  cfg.areas.clear();
  for (const auto& [name, a] : j.at("areas").items()) {
    AreaConfig ac;
    ac.lane_count = static_cast<int>(require_number(a, "lane_count"));
    ac.length_m = require_number(a, "length_m");
    if (a.contains("speed_limit_kmh"))
      ac.speed_limit = kmh_to_ms(a.at("speed_limit_kmh").get<double>());
    cfg.areas[name] = ac;
  }
  cfg.base_speed_limit = kmh_to_ms(require_number(j, "base_speed_limit_kmh"));
  cfg.sim_step_s = require_number(j, "sim_step_s");
  cfg.control_update_s = require_number(j, "control_update_s");
  if (!j.contains("adjacency") || !j.at("adjacency").contains("transitive"))
    throw std::invalid_argument("config: missing required key 'adjacency.transitive'");
  cfg.transitive_adjacency = j.at("adjacency").at("transitive").get<bool>();
  if (j.contains("detector_window_s"))
    cfg.detector_window_s = j.at("detector_window_s").get<double>();

  if (j.contains("demand")) {
    const auto& d = j.at("demand");
    auto& dc = cfg.demand;
    if (d.contains("mainline_through_veh_h")) dc.mainline_through = d.at("mainline_through_veh_h").get<double>();
    if (d.contains("mainline_off_veh_h")) dc.mainline_off = d.at("mainline_off_veh_h").get<double>();
    if (d.contains("ramp_on_veh_h")) dc.ramp_on = d.at("ramp_on_veh_h").get<double>();
    if (d.contains("scale")) dc.scale = d.at("scale").get<double>();
    if (d.contains("profile")) dc.profile = pairs_from(d.at("profile"), "demand.profile");
  }
  if (j.contains("episode")) {
    const auto& e = j.at("episode");
    if (e.contains("warmup_end_s")) cfg.episode.warmup_end_s = e.at("warmup_end_s").get<double>();
    if (e.contains("episode_end_s")) cfg.episode.episode_end_s = e.at("episode_end_s").get<double>();
    if (e.contains("control_horizon_s")) cfg.episode.control_horizon_s = e.at("control_horizon_s").get<double>();
  }
  if (j.contains("vsl")) {
    const auto& v = j.at("vsl");
    if (v.contains("min_kmh")) cfg.vsl.v_min = kmh_to_ms(v.at("min_kmh").get<double>());
    if (v.contains("max_kmh")) cfg.vsl.v_max = kmh_to_ms(v.at("max_kmh").get<double>());
  }
  if (j.contains("safety")) {
    const auto& s = j.at("safety");
    if (s.contains("ttc_threshold_s")) cfg.safety.ttc_threshold_s = s.at("ttc_threshold_s").get<double>();
    if (s.contains("v_congested_kmh")) cfg.safety.v_congested = kmh_to_ms(s.at("v_congested_kmh").get<double>());
  }
  if (j.contains("carfollow")) {
    const auto& c = j.at("carfollow");
    auto& cf = cfg.carfollow;
    if (c.contains("accel")) cf.accel = c.at("accel").get<double>();
    if (c.contains("decel")) cf.decel = c.at("decel").get<double>();
    if (c.contains("emergency_decel")) cf.emergency_decel = c.at("emergency_decel").get<double>();
    if (c.contains("reaction_time")) cf.reaction_time = c.at("reaction_time").get<double>();
    if (c.contains("min_gap")) cf.min_gap = c.at("min_gap").get<double>();
    if (c.contains("headway")) cf.headway = c.at("headway").get<double>();
    if (c.contains("krauss_sigma")) cf.krauss_sigma = c.at("krauss_sigma").get<double>();
  }
  if (j.contains("lane_change") && j.at("lane_change").contains("speed_gain_threshold"))
    cfg.lane_change.speed_gain_threshold = j.at("lane_change").at("speed_gain_threshold").get<double>();
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    if (e.contains("width")) cfg.encoder.width = e.at("width").get<int>();
    if (e.contains("weights")) {
      const std::string mode = e.at("weights").get<std::string>();
      if (mode != "learned" && mode != "fixed")
        throw std::invalid_argument("config: encoder.weights must be 'learned' or 'fixed'");
      cfg.encoder.learned = mode == "learned";
    }
    if (e.contains("seed")) cfg.encoder.seed = e.at("seed").get<std::uint64_t>();
  }
  if (j.contains("trainer")) {
    const auto& t = j.at("trainer");
    auto& tr = cfg.trainer;
    if (t.contains("iterations")) tr.iterations = t.at("iterations").get<int>();
    if (t.contains("episodes_per_iteration")) tr.episodes_per_iteration = t.at("episodes_per_iteration").get<int>();
    if (t.contains("horizon_steps")) tr.horizon_steps = t.at("horizon_steps").get<int>();
    if (t.contains("policy_epochs")) tr.policy_epochs = t.at("policy_epochs").get<int>();
    if (t.contains("value_epochs")) tr.value_epochs = t.at("value_epochs").get<int>();
    if (t.contains("gamma")) tr.gamma = t.at("gamma").get<double>();
    if (t.contains("lambda_init")) tr.lambda_init = t.at("lambda_init").get<double>();
    if (t.contains("alpha")) tr.alpha = t.at("alpha").get<double>();
    if (t.contains("beta_high")) tr.beta_high = t.at("beta_high").get<double>();
    if (t.contains("beta_low")) tr.beta_low = t.at("beta_low").get<double>();
    if (t.contains("kl_target")) tr.kl_target = t.at("kl_target").get<double>();
    if (t.contains("lr_policy")) tr.lr_policy = t.at("lr_policy").get<double>();
    if (t.contains("lr_value")) tr.lr_value = t.at("lr_value").get<double>();
    if (t.contains("init_std")) tr.init_std = t.at("init_std").get<double>();
    if (t.contains("hidden")) tr.hidden = t.at("hidden").get<std::vector<int>>();
    if (t.contains("seed")) tr.seed = t.at("seed").get<std::uint64_t>();
    if (t.contains("fixed_episode_seeds")) tr.fixed_episode_seeds = t.at("fixed_episode_seeds").get<bool>();
  }
  if (j.contains("controller") && j.at("controller").contains("rule_table")) {
    cfg.controller.rule_table.clear();
    for (auto& [occ, kmh] : pairs_from(j.at("controller").at("rule_table"), "controller.rule_table"))
      cfg.controller.rule_table.emplace_back(occ, kmh_to_ms(kmh));
  }
  return cfg;
}

ScenarioConfig ScenarioConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string ScenarioConfig::to_json_text() const {
  json areas_j = json::object();
  for (const auto& [name, a] : areas) {
    json aj = {{"lane_count", a.lane_count}, {"length_m", a.length_m}};
    if (a.speed_limit) aj["speed_limit_kmh"] = ms_to_kmh(*a.speed_limit);
    areas_j[name] = aj;
  }
  auto pair_rows = [](const std::vector<std::pair<double, double>>& v) {
    json out = json::array();
    for (const auto& [a, b] : v) out.push_back({a, b});
    return out;
  };
  json rule = json::array();
  for (const auto& [occ, ms] : controller.rule_table) rule.push_back({occ, ms_to_kmh(ms)});

  json j = {
      {"areas", areas_j},
      {"base_speed_limit_kmh", ms_to_kmh(base_speed_limit)},
      {"sim_step_s", sim_step_s},
      {"control_update_s", control_update_s},
      {"detector_window_s", detector_window_s},
      {"adjacency", {{"transitive", transitive_adjacency}}},
      {"demand",
       {{"mainline_through_veh_h", demand.mainline_through},
        {"mainline_off_veh_h", demand.mainline_off},
        {"ramp_on_veh_h", demand.ramp_on},
        {"scale", demand.scale},
        {"profile", pair_rows(demand.profile)}}},
      {"episode",
       {{"warmup_end_s", episode.warmup_end_s},
        {"episode_end_s", episode.episode_end_s},
        {"control_horizon_s", episode.control_horizon_s}}},
      {"vsl", {{"min_kmh", ms_to_kmh(vsl.v_min)}, {"max_kmh", ms_to_kmh(vsl.v_max)}}},
      {"safety",
       {{"ttc_threshold_s", safety.ttc_threshold_s},
        {"v_congested_kmh", ms_to_kmh(safety.v_congested)}}},
      {"carfollow",
       {{"accel", carfollow.accel},
        {"decel", carfollow.decel},
        {"emergency_decel", carfollow.emergency_decel},
        {"reaction_time", carfollow.reaction_time},
        {"min_gap", carfollow.min_gap},
        {"headway", carfollow.headway},
        {"krauss_sigma", carfollow.krauss_sigma}}},
      {"lane_change", {{"speed_gain_threshold", lane_change.speed_gain_threshold}}},
      {"encoder",
       {{"width", encoder.width},
        {"weights", encoder.learned ? "learned" : "fixed"},
        {"seed", encoder.seed}}},
      {"trainer",
       {{"iterations", trainer.iterations},
        {"episodes_per_iteration", trainer.episodes_per_iteration},
        {"horizon_steps", trainer.horizon_steps},
        {"policy_epochs", trainer.policy_epochs},
        {"value_epochs", trainer.value_epochs},
        {"gamma", trainer.gamma},
        {"lambda_init", trainer.lambda_init},
        {"alpha", trainer.alpha},
        {"beta_high", trainer.beta_high},
        {"beta_low", trainer.beta_low},
        {"kl_target", trainer.kl_target},
        {"lr_policy", trainer.lr_policy},
        {"lr_value", trainer.lr_value},
        {"init_std", trainer.init_std},
        {"hidden", trainer.hidden},
        {"seed", trainer.seed},
        {"fixed_episode_seeds", trainer.fixed_episode_seeds}}},
      {"controller", {{"rule_table", rule}}}};
  return j.dump(2);
}

std::uint64_t ScenarioConfig::hash() const {
  const std::string dump = to_json_text();
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64-bit offset basis
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace dvsl
