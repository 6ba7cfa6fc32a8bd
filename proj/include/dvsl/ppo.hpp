#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dvsl/config.hpp"
#include "dvsl/graphstate.hpp"
#include "dvsl/mdp.hpp"

namespace dvsl::ppo {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c);

struct Linear {
  Eigen::MatrixXd w;
  Eigen::VectorXd b;
};

/// Fully connected net with tanh hidden activations and a linear output.
struct Mlp {
  std::vector<Linear> layers;

  /// zero_last starts the output layer at zero so initial outputs are 0.
  static Mlp create(int in, const std::vector<int>& hidden, int out,
                    std::uint64_t seed, bool zero_last);

  struct Cache {
    std::vector<Eigen::VectorXd> inputs;  // input to each layer
  };
  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  Eigen::VectorXd forward(const Eigen::VectorXd& x, Cache& cache) const;
  /// Accumulates parameter gradients into `grad` (same shape as *this) and
  /// returns the gradient with respect to the input.
  Eigen::VectorXd backward(const Eigen::VectorXd& dout, const Cache& cache,
                           Mlp& grad) const;

  static Mlp zeros_like(const Mlp& other);
  void add_scaled(const Mlp& g, double scale);
  int param_count() const;
  bool finite() const;
  int input_dim() const { return static_cast<int>(layers.front().w.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().w.rows()); }
};

/// log of the standard normal CDF, stable far into the left tail.
double log_norm_cdf(double z);
/// pdf(z)/cdf(z), stable far into the left tail.
double norm_hazard(double z);

/// Log-likelihood of a [0,1]-censored Gaussian sample: interior points use
/// the density, clamped endpoints use the tail mass. Derivatives are with
/// respect to the mean and log stddev.
struct CensoredLogProb {
  double logp;
  double dmu;
  double dlog_sigma;
};
CensoredLogProb censored_log_prob(double u, double mu, double log_sigma);

/// KL(old || new) between diagonal Gaussians, summed over dimensions.
double diag_gauss_kl(const Eigen::VectorXd& mu_old, const Eigen::VectorXd& ls_old,
                     const Eigen::VectorXd& mu_new, const Eigen::VectorXd& ls_new);

/// Policy, value net and (in graph mode) the shared encoder layer. The
/// policy outputs logits squashed through a sigmoid into means in (0,1);
/// the action noise is a state-independent per-dimension log stddev.
struct ModelBundle {
  graphstate::Mode mode = graphstate::Mode::Raw;
  graphstate::EncoderWeights encoder;
  Mlp policy;
  Eigen::VectorXd log_std;
  Mlp value;
  int state_dim = 0;
  int action_dim = 0;

  static ModelBundle create(graphstate::Mode mode, const graphstate::EncoderWeights& enc,
                            int state_dim, int action_dim,
                            const std::vector<int>& hidden, double init_std,
                            std::uint64_t seed);

  Eigen::VectorXd policy_means(const Eigen::VectorXd& state) const;
  double state_value(const Eigen::VectorXd& state) const;
  bool learned_encoder() const {
    return mode == graphstate::Mode::Graph && encoder.learned;
  }
  bool finite() const;

  /// Flat views used by gradient checks; order: policy layers, log_std,
  /// encoder (when learned), and value layers separately.
  Eigen::VectorXd policy_params() const;
  void set_policy_params(const Eigen::VectorXd& flat);
  Eigen::VectorXd value_params() const;
  void set_value_params(const Eigen::VectorXd& flat);
};

struct SampledAction {
  Eigen::VectorXd u;       // clamped to [0,1]
  double log_prob = 0.0;
};
SampledAction sample_action(const Eigen::VectorXd& means, const Eigen::VectorXd& log_std,
                            std::mt19937_64& rng);

struct RolloutStep {
  Eigen::VectorXd state;      // as encoded at collection time
  Eigen::MatrixXd features;   // node features, kept when the encoder learns
  Eigen::VectorXd u;
  Eigen::VectorXd mu_old;
  double logp_old = 0.0;
  double reward = 0.0;
  double ret = 0.0;  // discounted return-to-go, inclusive of this step
  double adv = 0.0;
};

struct RolloutBatch {
  std::vector<RolloutStep> steps;
  Eigen::VectorXd log_std_old;
  int episodes = 0;
};

struct PolicyGrads {
  Mlp mlp;
  Eigen::VectorXd log_std;
  Eigen::MatrixXd encoder;
};

struct IterationStats {
  int iteration = 0;
  int steps = 0;
  double mean_reward = 0.0;
  double mean_kl = 0.0;
  double lambda = 0.0;
  double policy_objective = 0.0;
  double value_loss = 0.0;
  double wall_s = 0.0;
};

struct TrainResult {
  std::vector<IterationStats> iterations;
  std::string checkpoint_path;
};

using EnvFactory = std::function<std::unique_ptr<mdp::EnvBase>(int worker)>;

/// Penalty-form proximal policy optimisation with an adaptive KL
/// coefficient. Rollouts run on parallel workers; updates are full-batch
/// gradient steps: ascent on sum_t ratio*advantage - lambda*mean KL, then
/// descent on the summed squared return error of the value net.
class Trainer {
 public:
  Trainer(EnvFactory factory, const TrainerConfig& cfg, ModelBundle model);

  TrainResult run(std::ostream* log_csv, const std::string& checkpoint_dir,
                  std::uint64_t config_hash);

  RolloutBatch collect(int iteration);
  static void compute_returns(std::vector<RolloutStep>& episode, double gamma);
  /// Advantage = return - current value estimate, on collection-time states.
  void compute_advantages(RolloutBatch& batch) const;

  /// Clipped-free penalty objective: sum_t ratio_t*advantage_t minus
  /// lambda times the batch-mean KL against the collection policy. States
  /// are re-encoded through the bundle's encoder when it is learned.
  static double policy_objective(const ModelBundle& model,
                                 const net::AdjacencyMatrix& adjacency,
                                 const RolloutBatch& batch, double lambda,
                                 PolicyGrads* grads);
  /// Summed squared return error of the value net (encoder held fixed).
  static double value_loss(const ModelBundle& model,
                           const net::AdjacencyMatrix& adjacency,
                           const RolloutBatch& batch, Mlp* grad);
  static double mean_kl(const ModelBundle& model, const net::AdjacencyMatrix& adjacency,
                        const RolloutBatch& batch);
  static double adapt_kl(double lambda, double measured_kl, const TrainerConfig& cfg);

  ModelBundle& model() { return model_; }
  const ModelBundle& model() const { return model_; }
  const TrainerConfig& config() const { return cfg_; }

 private:
  EnvFactory factory_;
  TrainerConfig cfg_;
  ModelBundle model_;
  net::AdjacencyMatrix adjacency_;  // for re-encoding under a learned encoder
  double lambda_;
};

/// Writes `<prefix>.json` (shapes, iteration, config hash) plus
/// `<prefix>.bin`, a flat little-endian float64 array of all parameters.
void save_checkpoint(const ModelBundle& model, const std::string& prefix,
                     int iteration, std::uint64_t config_hash);

struct LoadedCheckpoint {
  ModelBundle model;
  int iteration = 0;
  std::uint64_t config_hash = 0;
};
/// Accepts the `.json` path or the bare prefix.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace dvsl::ppo
