#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dvsl/config.hpp"
#include "dvsl/control.hpp"
#include "dvsl/graphstate.hpp"
#include "dvsl/mdp.hpp"
#include "dvsl/ppo.hpp"

namespace dvsl::harness {

/// Evaluation metrics over one window (t0, t1]:
///   tst: vehicle-step observations with speed below the standing threshold
///   awt: standing seconds per vehicle observed in the window
///   bt:  merge-area detector crossings scaled to veh/h
///   npc: summed TTC conflicts over the periodic safety samples
struct MetricsRecord {
  std::string controller;
  std::uint64_t seed = 0;
  double tst = 0.0;
  double awt = 0.0;
  double bt = 0.0;
  double npc = 0.0;
};

/// Computes the metrics from recorded logs. Throws if the window is empty
/// or extends past the logged range.
MetricsRecord compute_metrics(const mdp::EnvLogs& logs, const net::Network& net,
                              double sim_step, double t0, double t1);

MetricsRecord mean_of(const std::vector<MetricsRecord>& records);

struct EvalOptions {
  std::vector<std::uint64_t> seeds = {1};
  std::string out_dir;      // empty = no files
  bool write_logs = false;  // also dump events and detector series
};

struct EvalResult {
  std::vector<MetricsRecord> per_seed;
  MetricsRecord mean;
};

/// Runs full episodes under one controller. Deterministic for fixed seeds:
/// identical invocations produce byte-identical output files.
EvalResult run_eval(const control::Controller& controller, const ScenarioConfig& cfg,
                    const EvalOptions& opts);

struct TrainOutcome {
  ppo::TrainResult result;
  std::string checkpoint_path;
  std::string log_path;
};

/// Trains a policy on the configured scenario with the chosen state
/// encoding; writes the training log and checkpoints under out_dir.
TrainOutcome run_train(const ScenarioConfig& cfg, graphstate::Mode mode,
                       const std::string& out_dir);

std::string summary_csv(const std::vector<MetricsRecord>& per_seed,
                        const MetricsRecord& mean);
/// Mean rows per controller with percentage deltas against the first row.
std::string compare_csv(const std::vector<MetricsRecord>& means);

/// Shortest round-trip formatting, locale independent.
std::string format_double(double v);

const char* revision();

/// Command line entry point; returns the process exit code
/// (0 ok, 1 usage error, 2 runtime failure).
int cli(int argc, char** argv);

}  // namespace dvsl::harness
