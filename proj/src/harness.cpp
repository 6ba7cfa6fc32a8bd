#include "dvsl/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#ifndef DVSL_REVISION
#define DVSL_REVISION "unknown"
#endif

namespace dvsl::harness {

namespace fs = std::filesystem;

const char* revision() { return DVSL_REVISION; }

std::string format_double(double v) {
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, p);
}

MetricsRecord compute_metrics(const mdp::EnvLogs& logs, const net::Network& net,
                              double sim_step, double t0, double t1) {
  if (!(t1 > t0)) throw std::invalid_argument("harness: metrics window is empty");
  if (sim_step <= 0.0) throw std::invalid_argument("harness: sim_step must be positive");
  double t_max = 0.0;
  for (const auto& e : logs.events) t_max = std::max(t_max, e.t);
  for (const auto& s : logs.safety) t_max = std::max(t_max, s.t);
  for (const auto& [t, _] : logs.detectors) t_max = std::max(t_max, t);
  const double eps = sim_step * 1e-6;
  if (logs.safety.empty() && logs.events.empty() && logs.detectors.empty())
    throw std::invalid_argument("harness: no logs recorded");
  if (t1 > t_max + eps)
    throw std::invalid_argument("harness: metrics window extends past the logged range");

  MetricsRecord out;

  // Standing intervals per vehicle, closed by go/arrive or the log end.
  struct VehicleSpan {
    double spawn = 0.0;
    double arrive = std::numeric_limits<double>::infinity();
  };
  std::map<long, VehicleSpan> spans;
  std::map<long, double> open_stop;
  std::vector<std::pair<double, double>> standing;  // [start, end)
  for (const auto& e : logs.events) {
    switch (e.kind) {
      case sim::Event::Kind::Spawn:
        spans[e.vehicle].spawn = e.t;
        break;
      case sim::Event::Kind::Arrive:
        spans[e.vehicle].arrive = e.t;
        break;
      case sim::Event::Kind::Stop:
        open_stop[e.vehicle] = e.t;
        break;
      case sim::Event::Kind::Go: {
        auto it = open_stop.find(e.vehicle);
        if (it != open_stop.end()) {
          standing.emplace_back(it->second, e.t);
          open_stop.erase(it);
        }
        break;
      }
      case sim::Event::Kind::LaneChange:
        break;
    }
  }
  for (const auto& [veh, start] : open_stop) standing.emplace_back(start, t_max);

  double waiting_seconds = 0.0;
  long standing_steps = 0;
  for (const auto& [start, end] : standing) {
    const double lo = std::max(start, t0);
    const double hi = std::min(end, t1);
    if (hi > lo) waiting_seconds += hi - lo;
    // Grid observations strictly inside (t0, t1] and inside [start, end).
    const long k_low = std::max(static_cast<long>(std::floor(t0 / sim_step + eps)) + 1,
                                static_cast<long>(std::ceil(start / sim_step - eps)));
    const long k_high = std::min(static_cast<long>(std::floor(t1 / sim_step + eps)),
                                 static_cast<long>(std::ceil(end / sim_step - eps)) - 1);
    if (k_high >= k_low) standing_steps += k_high - k_low + 1;
  }
  out.tst = static_cast<double>(standing_steps);

  long observed = 0;
  for (const auto& [veh, span] : spans)
    if (span.spawn <= t1 && span.arrive > t0) ++observed;
  out.awt = observed > 0 ? waiting_seconds / static_cast<double>(observed) : 0.0;

  long crossings = 0;
  for (const auto& [t, readings] : logs.detectors) {
    if (t <= t0 + eps || t > t1 + eps) continue;
    for (const auto& r : readings)
      if (r.lane < static_cast<int>(net.lanes.size()) &&
          net.lanes[r.lane].area == net::AreaKind::MA)
        crossings += r.count;
  }
  out.bt = static_cast<double>(crossings) * 3600.0 / (t1 - t0);

  long conflicts = 0;
  for (const auto& s : logs.safety)
    if (s.t > t0 + eps && s.t <= t1 + eps) conflicts += s.conflicts;
  out.npc = static_cast<double>(conflicts);
  return out;
}

MetricsRecord mean_of(const std::vector<MetricsRecord>& records) {
  if (records.empty()) throw std::invalid_argument("harness: mean of zero records");
  MetricsRecord m;
  m.controller = records.front().controller;
  for (const auto& r : records) {
    m.tst += r.tst;
    m.awt += r.awt;
    m.bt += r.bt;
    m.npc += r.npc;
  }
  const double n = static_cast<double>(records.size());
  m.tst /= n;
  m.awt /= n;
  m.bt /= n;
  m.npc /= n;
  return m;
}

namespace {

std::string iso_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_events_jsonl(const std::string& path, const mdp::EnvLogs& logs,
                        const net::Network& net) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("harness: cannot write " + path);
  for (const auto& e : logs.events) {
    nlohmann::json j = {
        {"t", e.t},
        {"kind", sim::to_string(e.kind)},
        {"vehicle", e.vehicle},
        {"route", sim::to_string(e.route)},
        {"lane", e.lane >= 0 ? net.lanes[e.lane].name : ""},
        {"position", e.position},
        {"speed", e.speed}};
    if (e.kind == sim::Event::Kind::LaneChange && e.from_lane >= 0)
      j["from_lane"] = net.lanes[e.from_lane].name;
    out << j.dump() << '\n';
  }
}

void write_detectors_csv(const std::string& path, const mdp::EnvLogs& logs,
                         const net::Network& net) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("harness: cannot write " + path);
  out << "t,lane,count,occupancy,mean_speed\n";
  for (const auto& [t, readings] : logs.detectors)
    for (const auto& r : readings)
      out << format_double(t) << ',' << net.lanes[r.lane].name << ',' << r.count << ','
          << format_double(r.occupancy) << ',' << format_double(r.mean_speed) << '\n';
}

}  // namespace

std::string summary_csv(const std::vector<MetricsRecord>& per_seed,
                        const MetricsRecord& mean) {
  std::ostringstream out;
  out << "controller,seed,tst,awt,bt,npc\n";
  auto row = [&](const MetricsRecord& r, const std::string& seed) {
    out << r.controller << ',' << seed << ',' << format_double(r.tst) << ','
        << format_double(r.awt) << ',' << format_double(r.bt) << ','
        << format_double(r.npc) << '\n';
  };
  for (const auto& r : per_seed) row(r, std::to_string(r.seed));
  row(mean, "mean");
  return out.str();
}

std::string compare_csv(const std::vector<MetricsRecord>& means) {
  if (means.empty()) throw std::invalid_argument("harness: nothing to compare");
  std::ostringstream out;
  out << "controller,tst,awt,bt,npc,delta_tst_pct,delta_awt_pct,delta_bt_pct,delta_npc_pct\n";
  const MetricsRecord& base = means.front();
  auto delta = [](double value, double reference) {
    if (reference == 0.0) return value == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return (value - reference) / reference * 100.0;
  };
  for (const auto& r : means) {
    out << r.controller << ',' << format_double(r.tst) << ',' << format_double(r.awt)
        << ',' << format_double(r.bt) << ',' << format_double(r.npc) << ','
        << format_double(delta(r.tst, base.tst)) << ','
        << format_double(delta(r.awt, base.awt)) << ','
        << format_double(delta(r.bt, base.bt)) << ','
        << format_double(delta(r.npc, base.npc)) << '\n';
  }
  return out.str();
}

EvalResult run_eval(const control::Controller& controller, const ScenarioConfig& cfg,
                    const EvalOptions& opts) {
  if (opts.seeds.empty()) throw std::invalid_argument("harness: need at least one seed");
  EvalResult result;
  const std::string name = control::to_string(controller.kind());
  if (!opts.out_dir.empty()) fs::create_directories(opts.out_dir);

  for (std::uint64_t seed : opts.seeds) {
    mdp::Env env(cfg, graphstate::Mode::Raw, nullptr);
    mdp::EnvLogs logs;
    env.set_logs(&logs);
    env.reset(seed);

    std::unique_ptr<std::ofstream> rewards;
    if (!opts.out_dir.empty()) {
      const auto path = fs::path(opts.out_dir) /
                        ("rewards_" + name + "_" + std::to_string(seed) + ".csv");
      rewards = std::make_unique<std::ofstream>(path);
      if (!*rewards) throw std::runtime_error("harness: cannot write " + path.string());
      *rewards << "t,speed_term,safety_term,reward";
      for (int i = 0; i < env.action_dim(); ++i) *rewards << ",limit_" << i;
      *rewards << '\n';
    }

    while (!env.done()) {
      const Eigen::VectorXd limits =
          controller.decide(env.last_readings(), env.network(), *env.adjacency());
      const mdp::StepResult res = env.step_limits(limits);
      if (rewards) {
        *rewards << format_double(env.clock()) << ','
                 << format_double(res.components.speed) << ','
                 << format_double(res.components.safety) << ','
                 << format_double(res.reward);
        for (int i = 0; i < limits.size(); ++i)
          *rewards << ',' << format_double(limits(i));
        *rewards << '\n';
      }
    }

    MetricsRecord rec = compute_metrics(logs, env.network(), cfg.sim_step_s,
                                        cfg.episode.warmup_end_s, cfg.episode.episode_end_s);
    rec.controller = name;
    rec.seed = seed;
    result.per_seed.push_back(rec);

    if (!opts.out_dir.empty() && opts.write_logs) {
      const std::string tag = name + "_" + std::to_string(seed);
      write_events_jsonl((fs::path(opts.out_dir) / ("events_" + tag + ".jsonl")).string(),
                         logs, env.network());
      write_detectors_csv((fs::path(opts.out_dir) / ("detectors_" + tag + ".csv")).string(),
                          logs, env.network());
    }
  }
  result.mean = mean_of(result.per_seed);
  result.mean.controller = name;
  return result;
}

TrainOutcome run_train(const ScenarioConfig& cfg, graphstate::Mode mode,
                       const std::string& out_dir) {
  const net::Network net = net::build_network(cfg);
  const int action_dim = net.lane_count(net::AreaKind::DSA);
  const auto enc = graphstate::EncoderWeights::seeded(
      cfg.encoder.width, 2, cfg.encoder.learned, cfg.encoder.seed);
  const int state_dim =
      net.node_count * (mode == graphstate::Mode::Raw ? 2 : cfg.encoder.width);
  ppo::ModelBundle bundle = ppo::ModelBundle::create(
      mode, enc, state_dim, action_dim, cfg.trainer.hidden, cfg.trainer.init_std,
      cfg.trainer.seed);

  // Environments must encode with the trainer's live weights, which exist
  // only after the trainer takes ownership of the bundle; route the pointer
  // through a shared slot.
  auto enc_slot = std::make_shared<const graphstate::EncoderWeights*>(&bundle.encoder);
  ppo::EnvFactory factory = [cfg, mode, enc_slot](int) {
    return std::make_unique<mdp::Env>(cfg, mode, *enc_slot);
  };
  ppo::Trainer trainer(factory, cfg.trainer, std::move(bundle));
  *enc_slot = &trainer.model().encoder;

  TrainOutcome out;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    out.log_path = (fs::path(out_dir) / "train_log.csv").string();
    std::ofstream log(out.log_path);
    if (!log) throw std::runtime_error("harness: cannot write " + out.log_path);
    out.result = trainer.run(&log, out_dir, cfg.hash());
  } else {
    out.result = trainer.run(nullptr, "", cfg.hash());
  }
  out.checkpoint_path = out.result.checkpoint_path;
  return out;
}

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  const auto range_pos = text.find("..");
  if (range_pos != std::string::npos) {
    const std::uint64_t lo = std::stoull(text.substr(0, range_pos));
    const std::uint64_t hi = std::stoull(text.substr(range_pos + 2));
    if (hi < lo) throw CLI::ValidationError("--seeds", "range is reversed");
    for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    return seeds;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) seeds.push_back(std::stoull(item));
  }
  if (seeds.empty()) throw CLI::ValidationError("--seeds", "no seeds given");
  return seeds;
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const ScenarioConfig& cfg, const std::vector<std::uint64_t>& seeds,
                    const std::vector<std::string>& outputs, const std::string& started,
                    const std::vector<std::string>& controllers) {
  char hash_hex[19];
  std::snprintf(hash_hex, sizeof hash_hex, "0x%016llx",
                static_cast<unsigned long long>(cfg.hash()));
  nlohmann::json j = {{"command", command},
                      {"config_hash", hash_hex},
                      {"revision", revision()},
                      {"seeds", seeds},
                      {"controllers", controllers},
                      {"started_at", started},
                      {"finished_at", iso_now()},
                      {"outputs", outputs}};
  const auto path = fs::path(out_dir) / "run_manifest.json";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("harness: cannot write " + path.string());
  out << j.dump(2) << '\n';
}

control::Controller make_controller(const std::string& kind, const ScenarioConfig& cfg,
                                    const std::string& checkpoint) {
  if (kind == "novsl") return control::Controller::no_vsl(cfg.vsl);
  if (kind == "rule")
    return control::Controller::rule_based(control::RuleTable{cfg.controller.rule_table},
                                           cfg.vsl);
  if (kind == "policy") {
    if (checkpoint.empty())
      throw std::invalid_argument("policy controller needs --checkpoint");
    return control::Controller::policy(ppo::load_checkpoint(checkpoint).model, cfg.vsl);
  }
  throw std::invalid_argument("unknown controller '" + kind + "'");
}

void print_metrics_table(std::ostream& os, const std::vector<MetricsRecord>& rows) {
  os << "controller        seed        tst        awt         bt        npc\n";
  for (const auto& r : rows) {
    char line[160];
    std::snprintf(line, sizeof line, "%-16s %5s %10.2f %10.3f %10.2f %10.0f\n",
                  r.controller.c_str(),
                  r.seed == 0 ? "mean" : std::to_string(r.seed).c_str(), r.tst, r.awt,
                  r.bt, r.npc);
    os << line;
  }
}

}  // namespace

int cli(int argc, char** argv) {
  CLI::App app{"lane-level variable speed limit control lab"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, encoder_mode = "graph";
  std::string seeds_text = "1", controller_kind = "novsl", controllers_text;
  std::uint64_t seed_override = 0;
  bool has_seed_override = false, emit_logs = false;

  const char* env_out = std::getenv("DVSL_OUT");
  const std::string default_out = env_out != nullptr ? env_out : "out";
  out_dir = default_out;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "scenario config JSON")->required();
    sub->add_option("--out", out_dir, "output directory");
  };

  CLI::App* train = app.add_subcommand("train", "train a policy");
  add_common(train);
  train->add_option("--encoder", encoder_mode, "state encoding: raw or graph")
      ->check(CLI::IsMember({"raw", "graph"}));
  train->add_option("--seed", seed_override, "override trainer seed")
      ->each([&](const std::string&) { has_seed_override = true; });

  CLI::App* eval = app.add_subcommand("eval", "evaluate a controller");
  add_common(eval);
  eval->add_option("--seeds", seeds_text, "seed list: 1..8 or 1,2,3");
  eval->add_option("--controller", controller_kind, "novsl, rule or policy")
      ->check(CLI::IsMember({"novsl", "rule", "policy"}));
  eval->add_option("--checkpoint", checkpoint, "policy checkpoint (.json)");
  eval->add_flag("--emit-logs", emit_logs, "also write event and detector logs");

  CLI::App* compare = app.add_subcommand("compare", "evaluate several controllers");
  add_common(compare);
  compare->add_option("--seeds", seeds_text, "seed list: 1..8 or 1,2,3");
  compare->add_option("--controllers", controllers_text,
                      "comma list of novsl,rule,policy (default: novsl,rule)");
  compare->add_option("--checkpoint", checkpoint, "policy checkpoint (.json)");

  CLI::App* inspect = app.add_subcommand("inspect-adjacency", "dump the node adjacency");
  add_common(inspect);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const ScenarioConfig cfg = ScenarioConfig::from_file(config_path);
    const std::string started = iso_now();

    if (train->parsed()) {
      ScenarioConfig tcfg = cfg;
      if (has_seed_override) tcfg.trainer.seed = seed_override;
      const auto mode = encoder_mode == "raw" ? graphstate::Mode::Raw
                                              : graphstate::Mode::Graph;
      const TrainOutcome out = run_train(tcfg, mode, out_dir);
      write_manifest(out_dir, "train", tcfg, {tcfg.trainer.seed},
                     {out.log_path, out.checkpoint_path}, started, {});
      if (!out.result.iterations.empty()) {
        const auto& last = out.result.iterations.back();
        std::cout << "trained " << last.iteration << " iterations, final mean reward "
                  << format_double(last.mean_reward) << "\n";
      }
      std::cout << "checkpoint: " << out.checkpoint_path << "\n";
      return 0;
    }

    if (eval->parsed()) {
      if (!checkpoint.empty() && eval->count("--controller") == 0)
        controller_kind = "policy";
      const auto controller = make_controller(controller_kind, cfg, checkpoint);
      EvalOptions opts;
      opts.seeds = parse_seeds(seeds_text);
      opts.out_dir = out_dir;
      opts.write_logs = emit_logs;
      const EvalResult res = run_eval(controller, cfg, opts);
      const std::string csv = summary_csv(res.per_seed, res.mean);
      const auto path = fs::path(out_dir) / "summary.csv";
      std::ofstream f(path);
      if (!f) throw std::runtime_error("harness: cannot write " + path.string());
      f << csv;
      write_manifest(out_dir, "eval", cfg, opts.seeds, {path.string()}, started,
                     {control::to_string(controller.kind())});
      auto rows = res.per_seed;
      MetricsRecord mean = res.mean;
      mean.seed = 0;
      rows.push_back(mean);
      print_metrics_table(std::cout, rows);
      return 0;
    }

    if (compare->parsed()) {
      std::vector<std::string> kinds;
      if (controllers_text.empty()) {
        kinds = {"novsl", "rule"};
        if (!checkpoint.empty()) kinds.push_back("policy");
      } else {
        std::stringstream ss(controllers_text);
        std::string item;
        while (std::getline(ss, item, ',')) kinds.push_back(item);
      }
      EvalOptions opts;
      opts.seeds = parse_seeds(seeds_text);
      opts.out_dir = out_dir;
      std::vector<MetricsRecord> means;
      std::vector<MetricsRecord> all_rows;
      for (const auto& kind : kinds) {
        const auto controller = make_controller(kind, cfg, checkpoint);
        const EvalResult res = run_eval(controller, cfg, opts);
        means.push_back(res.mean);
        for (const auto& r : res.per_seed) all_rows.push_back(r);
      }
      const std::string csv = compare_csv(means);
      const auto path = fs::path(out_dir) / "compare.csv";
      std::ofstream f(path);
      if (!f) throw std::runtime_error("harness: cannot write " + path.string());
      f << csv;
      write_manifest(out_dir, "compare", cfg, opts.seeds, {path.string()}, started, kinds);
      for (auto& m : means) m.seed = 0;
      print_metrics_table(std::cout, means);
      std::cout << "compare table: " << path.string() << "\n";
      return 0;
    }

    if (inspect->parsed()) {
      const net::Network net = net::build_network(cfg);
      const net::AdjacencyMatrix adj = net::build_adjacency(net);
      fs::create_directories(out_dir);
      const auto path = fs::path(out_dir) / "adjacency.csv";
      std::ofstream f(path);
      if (!f) throw std::runtime_error("harness: cannot write " + path.string());
      f << "lane";
      for (int j = 0; j < adj.size(); ++j) f << ',' << net.lanes[j].name;
      f << '\n';
      for (int i = 0; i < adj.size(); ++i) {
        f << net.lanes[i].name;
        for (int j = 0; j < adj.size(); ++j)
          f << ',' << static_cast<int>(adj.entries(i, j));
        f << '\n';
      }
      std::cout << "adjacency: " << path.string() << " (" << adj.size() << " nodes)\n";
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace dvsl::harness
