// Release gate: numbered end-to-end checks, one printed line each. Run one
// check by number or the whole set with `all`; the exit code is nonzero if
// any selected check fails.
//
//   acceptance <n|all> [--cli PATH] [--configs DIR] [--work DIR]
//
// --cli points at the command line binary (needed by 6 and 11), --configs
// at the shipped scenario files, --work at a scratch directory.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dvsl/config.hpp"
#include "dvsl/control.hpp"
#include "dvsl/graphstate.hpp"
#include "dvsl/harness.hpp"
#include "dvsl/mdp.hpp"
#include "dvsl/net.hpp"
#include "dvsl/ppo.hpp"
#include "dvsl/sim.hpp"
#include "support/oracles.hpp"
#include "support/test_envs.hpp"

namespace {

using namespace dvsl;

struct Ctx {
  std::string cli;      // path to the dvsl binary
  std::string configs;  // directory with default.json / reduced.json
  std::string work;     // scratch directory
};

bool report(int n, bool ok, const std::string& detail) {
  std::printf("criterion %2d %s: %s\n", n, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  return ok;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- 1: conflict counter against the quadratic pair scan ----------------

bool c1(const Ctx&) {
  ScenarioConfig cfg;
  const net::Network net = net::build_network(cfg);
  const double thr = cfg.safety.ttc_threshold_s;
  const int lanes = static_cast<int>(net.lanes.size());
  const int types = static_cast<int>(sim::default_vehicle_types().size());
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> nveh(0, 50), lane_d(0, lanes - 1), type_d(0, types - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0), speed_d(0.0, 36.0);

  int mismatches = 0;
  long placed_total = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    sim::Simulator s(net, cfg, static_cast<std::uint64_t>(trial));
    const int target = nveh(rng);
    for (int k = 0; k < target; ++k) {
      const int lane = lane_d(rng);
      try {
        s.place_vehicle(lane, unit(rng) * net.lanes[lane].length, speed_d(rng),
                        sim::Route::MainThrough, type_d(rng));
      } catch (const std::invalid_argument&) {
        // overlapping draw, skip it
      }
    }
    placed_total += s.active_count();
    const int fast = mdp::count_ttc_conflicts(s, thr);
    const int brute = testing::brute_conflict_count(s, thr);
    if (fast != brute) ++mismatches;
    if (mdp::safety_term(fast, s.active_count()) !=
        mdp::safety_term(brute, s.active_count()))
      ++mismatches;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "conflict count vs pair scan, 1000 fuzzed states (%ld vehicles), %d mismatches",
                placed_total, mismatches);
  return report(1, mismatches == 0, buf);
}

// ---- 2: message passing against the index-loop reference ----------------

bool c2(const Ctx&) {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<int> n_d(1, 50), f_d(1, 8), d_d(1, 8);
  std::uniform_real_distribution<double> val(-2.0, 2.0);
  std::bernoulli_distribution edge(0.3);

  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const int n = n_d(rng), f = f_d(rng), d = d_d(rng);
    Eigen::MatrixXd features(n, f);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < f; ++c) features(r, c) = val(rng);
    net::AdjacencyMatrix adj;
    adj.entries = Eigen::MatrixXd::Zero(n, n);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) adj.entries(r, c) = edge(rng) ? 1.0 : 0.0;
    graphstate::EncoderWeights w;
    w.w = Eigen::MatrixXd(d, f);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < f; ++c) w.w(r, c) = val(rng);

    const Eigen::MatrixXd got = graphstate::message_pass(features, adj, w);
    const Eigen::MatrixXd ref = testing::naive_message_pass(features, adj.entries, w.w);
    worst = std::max(worst, (got - ref).cwiseAbs().maxCoeff());
  }
  char buf[120];
  std::snprintf(buf, sizeof buf, "200 random instances, max abs error %.3g (limit 1e-9)", worst);
  return report(2, worst <= 1e-9, buf);
}

// ---- 3: analytic gradients against central differences ------------------

Eigen::VectorXd flat_mlp(const ppo::Mlp& m) {
  std::vector<double> flat;
  for (const ppo::Linear& l : m.layers) {
    for (int i = 0; i < l.w.rows(); ++i)
      for (int j = 0; j < l.w.cols(); ++j) flat.push_back(l.w(i, j));
    for (int i = 0; i < l.b.size(); ++i) flat.push_back(l.b(i));
  }
  return Eigen::Map<Eigen::VectorXd>(flat.data(), static_cast<long>(flat.size()));
}

// Same layout as ModelBundle::policy_params.
Eigen::VectorXd flat_policy_grads(const ppo::PolicyGrads& g, bool learned_encoder) {
  std::vector<double> flat;
  const Eigen::VectorXd mlp = flat_mlp(g.mlp);
  flat.insert(flat.end(), mlp.data(), mlp.data() + mlp.size());
  for (int i = 0; i < g.log_std.size(); ++i) flat.push_back(g.log_std(i));
  if (learned_encoder)
    for (int i = 0; i < g.encoder.rows(); ++i)
      for (int j = 0; j < g.encoder.cols(); ++j) flat.push_back(g.encoder(i, j));
  return Eigen::Map<Eigen::VectorXd>(flat.data(), static_cast<long>(flat.size()));
}

ppo::PolicyGrads zero_grads(const ppo::ModelBundle& m) {
  ppo::PolicyGrads g;
  g.mlp = ppo::Mlp::zeros_like(m.policy);
  g.log_std = Eigen::VectorXd::Zero(m.log_std.size());
  g.encoder = Eigen::MatrixXd::Zero(m.encoder.w.rows(), m.encoder.w.cols());
  return g;
}

bool c3(const Ctx&) {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<int> hidden_d(3, 6), horizon_d(4, 8), nodes_d(3, 5),
      width_d(1, 2);
  std::uniform_real_distribution<double> lambda_d(0.1, 0.6);
  std::normal_distribution<double> nudge(0.0, 0.05);
  const std::vector<double> gammas = {0.0, 0.5, 0.9};

  double worst_policy = 0.0, worst_value = 0.0;
  int max_params = 0;
  for (int c = 0; c < 50; ++c) {
    const bool graph = c % 2 == 1;
    TrainerConfig cfg;
    cfg.episodes_per_iteration = 1 + c % 2;
    cfg.horizon_steps = horizon_d(rng);
    cfg.gamma = gammas[static_cast<std::size_t>(c) % gammas.size()];
    cfg.hidden = {hidden_d(rng)};
    cfg.seed = 300 + static_cast<std::uint64_t>(c);

    net::AdjacencyMatrix adj;
    graphstate::EncoderWeights enc;
    ppo::EnvFactory factory;
    const graphstate::EncoderWeights* slot = nullptr;
    int state_dim = 1, action_dim = 1;
    if (graph) {
      const int n = nodes_d(rng), width = width_d(rng);
      adj.entries = Eigen::MatrixXd::Zero(n, n);
      for (int i = 0; i < n; ++i) adj.entries(i, (i + 1) % n) = 1.0;
      enc = graphstate::EncoderWeights::seeded(width, 2, true, cfg.seed);
      state_dim = n * width;
      action_dim = 2;
      factory = [&adj, &slot](int) {
        return std::make_unique<testing::SyntheticGraphEnv>(adj, &slot, 4);
      };
    } else {
      factory = [](int) { return std::make_unique<testing::BanditEnv>(); };
    }

    ppo::ModelBundle model = ppo::ModelBundle::create(
        graph ? graphstate::Mode::Graph : graphstate::Mode::Raw, enc, state_dim,
        action_dim, cfg.hidden, cfg.init_std, cfg.seed);
    ppo::Trainer trainer(factory, cfg, std::move(model));
    slot = &trainer.model().encoder;
    ppo::RolloutBatch batch = trainer.collect(c);
    trainer.compute_advantages(batch);

    // Move off the zero-initialised output layer before differentiating.
    ppo::ModelBundle probe = trainer.model();
    Eigen::VectorXd p = probe.policy_params();
    for (int i = 0; i < p.size(); ++i) p(i) += nudge(rng);
    probe.set_policy_params(p);
    max_params = std::max(max_params, static_cast<int>(p.size()));

    const double lambda = lambda_d(rng);
    ppo::PolicyGrads g = zero_grads(probe);
    (void)ppo::Trainer::policy_objective(probe, adj, batch, lambda, &g);
    auto objective = [&](const Eigen::VectorXd& flat) {
      ppo::ModelBundle m2 = probe;
      m2.set_policy_params(flat);
      return ppo::Trainer::policy_objective(m2, adj, batch, lambda, nullptr);
    };
    const Eigen::VectorXd fd = testing::central_diff(objective, p);
    worst_policy = std::max(
        worst_policy,
        testing::max_rel_err(flat_policy_grads(g, probe.learned_encoder()), fd));

    ppo::Mlp vg = ppo::Mlp::zeros_like(probe.value);
    (void)ppo::Trainer::value_loss(probe, adj, batch, &vg);
    auto loss = [&](const Eigen::VectorXd& flat) {
      ppo::ModelBundle m2 = probe;
      m2.set_value_params(flat);
      return ppo::Trainer::value_loss(m2, adj, batch, nullptr);
    };
    const Eigen::VectorXd vfd = testing::central_diff(loss, probe.value_params());
    worst_value = std::max(worst_value, testing::max_rel_err(flat_mlp(vg), vfd));
  }
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "50 configurations (max %d params), max rel err policy %.3g value %.3g (limit 1e-4)",
                max_params, worst_policy, worst_value);
  return report(3, worst_policy < 1e-4 && worst_value < 1e-4, buf);
}

// ---- 4: reward stays inside [0,1] under fuzzed inputs -------------------

bool c4(const Ctx&) {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> rate(0.0, 6000.0), ramp(0.0, 3000.0),
      off(0.0, 1500.0), scale(0.2, 2.0), act(-0.25, 1.25);

  long steps = 0, violations = 0;
  double lo = 1.0, hi = 0.0;
  const graphstate::EncoderWeights enc = graphstate::EncoderWeights::seeded(2, 2, false, 7);
  while (steps < 10000) {
    ScenarioConfig cfg = testing::micro_scenario();
    cfg.demand.mainline_through = rate(rng);
    cfg.demand.mainline_off = off(rng);
    cfg.demand.ramp_on = ramp(rng);
    cfg.demand.scale = scale(rng);
    mdp::Env env(cfg, graphstate::Mode::Graph, &enc);
    env.reset(rng());
    bool done = false;
    while (!done && steps < 10000) {
      Eigen::VectorXd u(env.action_dim());
      for (int i = 0; i < u.size(); ++i) u(i) = act(rng);
      const mdp::StepResult r = env.step(u);
      if (!(r.reward >= 0.0 && r.reward <= 1.0)) ++violations;
      lo = std::min(lo, r.reward);
      hi = std::max(hi, r.reward);
      ++steps;
      done = r.done;
    }
  }
  char buf[140];
  std::snprintf(buf, sizeof buf,
                "%ld fuzzed steps, rewards in [%.4f, %.4f], %ld out-of-range", steps, lo,
                hi, violations);
  return report(4, violations == 0, buf);
}

// ---- 5: vehicle conservation and gap safety over a full day-part --------

bool c5(const Ctx& ctx) {
  ScenarioConfig cfg = ScenarioConfig::from_file(ctx.configs + "/default.json");
  cfg.carfollow.krauss_sigma = 0.0;
  const net::Network net = net::build_network(cfg);
  sim::Simulator s(net, cfg, 1);
  const long steps = static_cast<long>(18000.0 / cfg.sim_step_s);
  long bad_conservation = 0, bad_gap = 0;
  for (long i = 0; i < steps; ++i) {
    s.step();
    if (s.spawned_total() != s.active_count() + s.arrived_total()) ++bad_conservation;
    if (s.min_gap() < 0.0) ++bad_gap;
  }
  char buf[180];
  std::snprintf(buf, sizeof buf,
                "18000 s, %ld vehicles: %ld conservation breaks, %ld negative gaps",
                s.spawned_total(), bad_conservation, bad_gap);
  return report(5, bad_conservation == 0 && bad_gap == 0 && s.spawned_total() > 10000, buf);
}

// ---- 6: repeated evaluation is byte-identical ----------------------------

bool c6(const Ctx& ctx) {
  if (ctx.cli.empty()) return report(6, false, "needs --cli");
  namespace fs = std::filesystem;
  const fs::path a = fs::path(ctx.work) / "c6a", b = fs::path(ctx.work) / "c6b";
  fs::create_directories(a);
  fs::create_directories(b);
  for (const fs::path& dir : {a, b}) {
    const std::string cmd = "\"" + ctx.cli + "\" eval --config \"" + ctx.configs +
                            "/reduced.json\" --seeds 1..8 --out \"" + dir.string() +
                            "\" > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) return report(6, false, "eval run failed");
  }
  const std::string sa = slurp(a / "summary.csv"), sb = slurp(b / "summary.csv");
  char buf[120];
  std::snprintf(buf, sizeof buf, "two eval runs over seeds 1..8, %zu byte summaries %s",
                sa.size(), sa == sb ? "identical" : "differ");
  return report(6, !sa.empty() && sa == sb, buf);
}

// ---- 7: state and action dimensions of the shipped scenario -------------

bool c7(const Ctx& ctx) {
  const ScenarioConfig cfg = ScenarioConfig::from_file(ctx.configs + "/default.json");
  const graphstate::EncoderWeights enc = graphstate::EncoderWeights::seeded(2, 2, false, 7);
  mdp::Env env(cfg, graphstate::Mode::Raw, &enc);
  const int nodes = env.adjacency()->size();
  const int state = env.state_dim();
  const int actions = env.action_dim();
  char buf[120];
  std::snprintf(buf, sizeof buf, "%d graph nodes, raw state %d, %d actions", nodes, state,
                actions);
  return report(7, nodes == 22 && state == 44 && actions == 5, buf);
}

// ---- 8: trainer converges on the one-state bandit -----------------------

bool c8(const Ctx&) {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainerConfig cfg;
    cfg.iterations = 200;
    cfg.episodes_per_iteration = 2;
    cfg.horizon_steps = 8;
    cfg.gamma = 0.0;
    cfg.hidden = {8};
    cfg.seed = seed;
    auto factory = [](int) { return std::make_unique<testing::BanditEnv>(); };
    ppo::ModelBundle model = ppo::ModelBundle::create(
        graphstate::Mode::Raw, {}, 1, 1, cfg.hidden, cfg.init_std, cfg.seed);
    ppo::Trainer trainer(factory, cfg, std::move(model));
    trainer.run(nullptr, "", 0);
    const double mu = trainer.model().policy_means(Eigen::VectorXd::Ones(1))(0);
    worst = std::max(worst, std::abs(mu - 0.8));
  }
  char buf[120];
  std::snprintf(buf, sizeof buf,
                "5 seeds, 200 iterations, policy mean within %.4f of 0.8 (limit 0.05)", worst);
  return report(8, worst <= 0.05, buf);
}

// ---- 9: reward trend on the small training scenario ----------------------

bool c9(const Ctx& ctx) {
  const ScenarioConfig cfg = ScenarioConfig::from_file(ctx.configs + "/reduced.json");
  const std::string out = ctx.work + "/c9";
  std::filesystem::create_directories(out);
  const harness::TrainOutcome outcome = harness::run_train(cfg, graphstate::Mode::Graph, out);
  const auto& its = outcome.result.iterations;
  if (static_cast<int>(its.size()) < 10)
    return report(9, false, "training produced fewer than 10 iterations");
  double first5 = 0.0, last5 = 0.0;
  for (int i = 0; i < 5; ++i) {
    first5 += its[static_cast<std::size_t>(i)].mean_reward / 5.0;
    last5 += its[its.size() - 5 + static_cast<std::size_t>(i)].mean_reward / 5.0;
  }
  char buf[140];
  std::snprintf(buf, sizeof buf,
                "%zu iterations, first 5 mean %.4f, last 5 mean %.4f (+%.1f%%, need +5%%)",
                its.size(), first5, last5, 100.0 * (last5 / first5 - 1.0));
  return report(9, last5 >= 1.05 * first5, buf);
}

// ---- 10: learned policy beats the uncontrolled baseline ------------------

bool c10(const Ctx& ctx) {
  const ScenarioConfig cfg = ScenarioConfig::from_file(ctx.configs + "/reduced.json");
  const std::string out = ctx.work + "/c10";
  std::filesystem::create_directories(out);
  const harness::TrainOutcome outcome = harness::run_train(cfg, graphstate::Mode::Graph, out);
  const ppo::LoadedCheckpoint ckpt = ppo::load_checkpoint(outcome.checkpoint_path);

  harness::EvalOptions opts;
  opts.seeds = {1, 2, 3, 4, 5, 6, 7, 8};
  const harness::EvalResult base =
      harness::run_eval(control::Controller::no_vsl(cfg.vsl), cfg, opts);
  const harness::EvalResult pol =
      harness::run_eval(control::Controller::policy(ckpt.model, cfg.vsl), cfg, opts);
  char buf[180];
  std::snprintf(buf, sizeof buf,
                "8 seeds, mean AWT %.3f vs %.3f, mean NPC %.1f vs %.1f (policy vs none)",
                pol.mean.awt, base.mean.awt, pol.mean.npc, base.mean.npc);
  return report(10, pol.mean.awt < base.mean.awt && pol.mean.npc < base.mean.npc, buf);
}

// ---- 11: both state encodings train and tabulate together ----------------

bool c11(const Ctx& ctx) {
  const ScenarioConfig cfg = ScenarioConfig::from_file(ctx.configs + "/reduced.json");
  namespace fs = std::filesystem;
  const fs::path out = fs::path(ctx.work) / "c11";
  fs::create_directories(out / "raw");
  fs::create_directories(out / "graph");

  const harness::TrainOutcome raw =
      harness::run_train(cfg, graphstate::Mode::Raw, (out / "raw").string());
  const harness::TrainOutcome graph =
      harness::run_train(cfg, graphstate::Mode::Graph, (out / "graph").string());
  const std::size_t want = static_cast<std::size_t>(cfg.trainer.iterations);
  bool logs_ok = raw.result.iterations.size() == want &&
                 graph.result.iterations.size() == want;
  for (const harness::TrainOutcome* run : {&raw, &graph})
    for (const auto& it : run->result.iterations)
      logs_ok = logs_ok && std::isfinite(it.mean_reward) && std::isfinite(it.mean_kl);

  harness::EvalOptions opts;
  opts.seeds = {1, 2};
  std::vector<harness::MetricsRecord> means;
  means.push_back(harness::run_eval(control::Controller::no_vsl(cfg.vsl), cfg, opts).mean);
  means.push_back(harness::run_eval(
                      control::Controller::policy(
                          ppo::load_checkpoint(raw.checkpoint_path).model, cfg.vsl),
                      cfg, opts)
                      .mean);
  means.back().controller = "policy_raw";
  means.push_back(harness::run_eval(
                      control::Controller::policy(
                          ppo::load_checkpoint(graph.checkpoint_path).model, cfg.vsl),
                      cfg, opts)
                      .mean);
  means.back().controller = "policy_graph";

  std::string table;
  std::string error;
  try {
    table = harness::compare_csv(means);
  } catch (const std::exception& e) {
    error = e.what();
  }
  const bool table_ok = error.empty() && table.find("policy_raw") != std::string::npos &&
                        table.find("policy_graph") != std::string::npos;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "raw and graph runs: %zu/%zu iterations, comparison table %s",
                raw.result.iterations.size(), graph.result.iterations.size(),
                table_ok ? "written" : ("failed " + error).c_str());
  return report(11, logs_ok && table_ok, buf);
}

}  // namespace

int main(int argc, char** argv) {
  Ctx ctx;
  ctx.configs = "configs";
  ctx.work = "acceptance_work";
  std::string selector = "all";
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--cli" && i + 1 < argc) ctx.cli = argv[++i];
    else if (arg == "--configs" && i + 1 < argc) ctx.configs = argv[++i];
    else if (arg == "--work" && i + 1 < argc) ctx.work = argv[++i];
    else selector = arg;
  }
  std::filesystem::create_directories(ctx.work);

  const std::map<int, std::function<bool(const Ctx&)>> checks = {
      {1, c1}, {2, c2}, {3, c3}, {4, c4}, {5, c5}, {6, c6},
      {7, c7}, {8, c8}, {9, c9}, {10, c10}, {11, c11}};

  bool all_ok = true;
  try {
    if (selector == "all") {
      for (const auto& [n, fn] : checks) all_ok = fn(ctx) && all_ok;
    } else {
      const int n = std::stoi(selector);
      const auto it = checks.find(n);
      if (it == checks.end()) {
        std::fprintf(stderr, "no check numbered %d\n", n);
        return 2;
      }
      all_ok = it->second(ctx);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "aborted: %s\n", e.what());
    return 2;
  }
  return all_ok ? 0 : 1;
}
