#include "dvsl/ppo.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

namespace dvsl::ppo {

namespace {

constexpr double kLogSqrt2Pi = 0.9189385332046727;  // 0.5*log(2*pi)
constexpr double kLogStdMin = -7.0;  // keeps the action noise from collapsing
constexpr double kLogStdMax = 1.0;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  // splitmix64 over the concatenated words.
  std::uint64_t x = a;
  for (std::uint64_t y : {b, c}) {
    x += 0x9e3779b97f4a7c15ull + y;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    x ^= x >> 31;
  }
  return x;
}

Mlp Mlp::create(int in, const std::vector<int>& hidden, int out, std::uint64_t seed,
                bool zero_last) {
  if (in <= 0 || out <= 0) throw std::invalid_argument("ppo: mlp dims must be positive");
  std::mt19937_64 rng(seed);
  Mlp mlp;
  std::vector<int> dims;
  dims.push_back(in);
  for (int h : hidden) {
    if (h <= 0) throw std::invalid_argument("ppo: hidden dims must be positive");
    dims.push_back(h);
  }
  dims.push_back(out);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Linear layer;
    layer.w = Eigen::MatrixXd(dims[l + 1], dims[l]);
    layer.b = Eigen::VectorXd::Zero(dims[l + 1]);
    const bool last = l + 2 == dims.size();
    if (last && zero_last) {
      layer.w.setZero();
    } else {
      std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(dims[l]));
      for (int i = 0; i < layer.w.rows(); ++i)
        for (int j = 0; j < layer.w.cols(); ++j) layer.w(i, j) = nd(rng);
    }
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
  Cache c;
  return forward(x, c);
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x, Cache& cache) const {
  cache.inputs.clear();
  Eigen::VectorXd a = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    cache.inputs.push_back(a);
    Eigen::VectorXd z = layers[l].w * a + layers[l].b;
    a = (l + 1 < layers.size()) ? z.array().tanh().matrix() : z;
  }
  return a;
}

Eigen::VectorXd Mlp::backward(const Eigen::VectorXd& dout, const Cache& cache,
                              Mlp& grad) const {
  if (cache.inputs.size() != layers.size())
    throw std::invalid_argument("ppo: backward needs the forward cache");
  Eigen::VectorXd d = dout;
  for (int l = static_cast<int>(layers.size()) - 1; l >= 0; --l) {
    grad.layers[l].w += d * cache.inputs[l].transpose();
    grad.layers[l].b += d;
    Eigen::VectorXd dprev = layers[l].w.transpose() * d;
    if (l > 0) {
      const Eigen::VectorXd& a = cache.inputs[l];  // post-tanh activations
      dprev = dprev.cwiseProduct((1.0 - a.array().square()).matrix());
    }
    d = dprev;
  }
  return d;
}

Mlp Mlp::zeros_like(const Mlp& other) {
  Mlp out;
  for (const Linear& l : other.layers) {
    Linear z;
    z.w = Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols());
    z.b = Eigen::VectorXd::Zero(l.b.size());
    out.layers.push_back(std::move(z));
  }
  return out;
}

void Mlp::add_scaled(const Mlp& g, double scale) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].w += scale * g.layers[l].w;
    layers[l].b += scale * g.layers[l].b;
  }
}

int Mlp::param_count() const {
  int n = 0;
  for (const Linear& l : layers) n += static_cast<int>(l.w.size() + l.b.size());
  return n;
}

bool Mlp::finite() const {
  for (const Linear& l : layers)
    if (!l.w.allFinite() || !l.b.allFinite()) return false;
  return true;
}

double log_norm_cdf(double z) {
  if (z > -8.0) return std::log(0.5 * std::erfc(-z / std::numbers::sqrt2));
  const double z2 = z * z;
  return -0.5 * z2 - std::log(-z) - kLogSqrt2Pi + std::log1p(-1.0 / z2 + 3.0 / (z2 * z2));
}

double norm_hazard(double z) {
  if (z > -8.0) {
    const double pdf = std::exp(-0.5 * z * z - kLogSqrt2Pi);
    return pdf / (0.5 * std::erfc(-z / std::numbers::sqrt2));
  }
  const double z2 = z * z;
  return -z / (1.0 - 1.0 / z2 + 3.0 / (z2 * z2));
}

CensoredLogProb censored_log_prob(double u, double mu, double log_sigma) {
  const double sigma = std::exp(log_sigma);
  CensoredLogProb out{};
  if (u <= 0.0) {
    const double z = -mu / sigma;
    const double h = norm_hazard(z);
    out.logp = log_norm_cdf(z);
    out.dmu = -h / sigma;
    out.dlog_sigma = -z * h;
  } else if (u >= 1.0) {
    const double z = (mu - 1.0) / sigma;
    const double h = norm_hazard(z);
    out.logp = log_norm_cdf(z);
    out.dmu = h / sigma;
    out.dlog_sigma = -z * h;
  } else {
    const double d = (u - mu) / sigma;
    out.logp = -0.5 * d * d - log_sigma - kLogSqrt2Pi;
    out.dmu = d / sigma;
    out.dlog_sigma = d * d - 1.0;
  }
  return out;
}

double diag_gauss_kl(const Eigen::VectorXd& mu_old, const Eigen::VectorXd& ls_old,
                     const Eigen::VectorXd& mu_new, const Eigen::VectorXd& ls_new) {
  if (mu_old.size() != mu_new.size() || ls_old.size() != ls_new.size() ||
      mu_old.size() != ls_old.size())
    throw std::invalid_argument("ppo: KL needs matching dimensions");
  double kl = 0.0;
  for (int d = 0; d < mu_old.size(); ++d) {
    const double var_old = std::exp(2.0 * ls_old(d));
    const double var_new = std::exp(2.0 * ls_new(d));
    const double dmu = mu_old(d) - mu_new(d);
    kl += ls_new(d) - ls_old(d) + (var_old + dmu * dmu) / (2.0 * var_new) - 0.5;
  }
  return kl;
}

ModelBundle ModelBundle::create(graphstate::Mode mode, const graphstate::EncoderWeights& enc,
                                int state_dim, int action_dim,
                                const std::vector<int>& hidden, double init_std,
                                std::uint64_t seed) {
  if (init_std <= 0.0) throw std::invalid_argument("ppo: init_std must be positive");
  ModelBundle m;
  m.mode = mode;
  m.encoder = enc;
  m.state_dim = state_dim;
  m.action_dim = action_dim;
  m.policy = Mlp::create(state_dim, hidden, action_dim, mix_seed(seed, 1, 0), true);
  m.value = Mlp::create(state_dim, hidden, 1, mix_seed(seed, 2, 0), false);
  m.log_std = Eigen::VectorXd::Constant(action_dim, std::log(init_std));
  return m;
}

Eigen::VectorXd ModelBundle::policy_means(const Eigen::VectorXd& state) const {
  Eigen::VectorXd out = policy.forward(state);
  for (int i = 0; i < out.size(); ++i) out(i) = sigmoid(out(i));
  return out;
}

double ModelBundle::state_value(const Eigen::VectorXd& state) const {
  return value.forward(state)(0);
}

bool ModelBundle::finite() const {
  return policy.finite() && value.finite() && log_std.allFinite() &&
         (mode == graphstate::Mode::Raw || encoder.w.allFinite());
}

namespace {

void append_mlp(const Mlp& mlp, std::vector<double>& out) {
  for (const Linear& l : mlp.layers) {
    for (int i = 0; i < l.w.rows(); ++i)
      for (int j = 0; j < l.w.cols(); ++j) out.push_back(l.w(i, j));
    for (int i = 0; i < l.b.size(); ++i) out.push_back(l.b(i));
  }
}

std::size_t read_mlp(Mlp& mlp, const std::vector<double>& flat, std::size_t k) {
  for (Linear& l : mlp.layers) {
    for (int i = 0; i < l.w.rows(); ++i)
      for (int j = 0; j < l.w.cols(); ++j) l.w(i, j) = flat.at(k++);
    for (int i = 0; i < l.b.size(); ++i) l.b(i) = flat.at(k++);
  }
  return k;
}

}  // namespace

Eigen::VectorXd ModelBundle::policy_params() const {
  std::vector<double> flat;
  append_mlp(policy, flat);
  for (int i = 0; i < log_std.size(); ++i) flat.push_back(log_std(i));
  if (learned_encoder())
    for (int i = 0; i < encoder.w.rows(); ++i)
      for (int j = 0; j < encoder.w.cols(); ++j) flat.push_back(encoder.w(i, j));
  return Eigen::Map<Eigen::VectorXd>(flat.data(), static_cast<long>(flat.size()));
}

void ModelBundle::set_policy_params(const Eigen::VectorXd& flat) {
  std::vector<double> v(flat.data(), flat.data() + flat.size());
  std::size_t k = read_mlp(policy, v, 0);
  for (int i = 0; i < log_std.size(); ++i) log_std(i) = v.at(k++);
  if (learned_encoder())
    for (int i = 0; i < encoder.w.rows(); ++i)
      for (int j = 0; j < encoder.w.cols(); ++j) encoder.w(i, j) = v.at(k++);
  if (k != v.size()) throw std::invalid_argument("ppo: policy parameter size mismatch");
}

Eigen::VectorXd ModelBundle::value_params() const {
  std::vector<double> flat;
  append_mlp(value, flat);
  return Eigen::Map<Eigen::VectorXd>(flat.data(), static_cast<long>(flat.size()));
}

void ModelBundle::set_value_params(const Eigen::VectorXd& flat) {
  std::vector<double> v(flat.data(), flat.data() + flat.size());
  if (read_mlp(value, v, 0) != v.size())
    throw std::invalid_argument("ppo: value parameter size mismatch");
}

SampledAction sample_action(const Eigen::VectorXd& means, const Eigen::VectorXd& log_std,
                            std::mt19937_64& rng) {
  if (means.size() != log_std.size())
    throw std::invalid_argument("ppo: mean/log_std size mismatch");
  SampledAction out;
  out.u = Eigen::VectorXd(means.size());
  std::normal_distribution<double> nd(0.0, 1.0);
  double logp = 0.0;
  for (int d = 0; d < means.size(); ++d) {
    const double raw = means(d) + std::exp(log_std(d)) * nd(rng);
    out.u(d) = std::clamp(raw, 0.0, 1.0);
    logp += censored_log_prob(out.u(d), means(d), log_std(d)).logp;
  }
  out.log_prob = logp;
  return out;
}

Trainer::Trainer(EnvFactory factory, const TrainerConfig& cfg, ModelBundle model)
    : factory_(std::move(factory)), cfg_(cfg), model_(std::move(model)),
      lambda_(cfg.lambda_init) {
  if (cfg_.episodes_per_iteration <= 0 || cfg_.iterations < 0)
    throw std::invalid_argument("ppo: bad trainer configuration");
  if (model_.learned_encoder()) {
    auto env = factory_(0);
    const net::AdjacencyMatrix* adj = env->adjacency();
    if (adj == nullptr)
      throw std::invalid_argument("ppo: learned encoder needs an adjacency matrix");
    adjacency_ = *adj;
  }
}

void Trainer::compute_returns(std::vector<RolloutStep>& episode, double gamma) {
  double g = 0.0;
  for (auto it = episode.rbegin(); it != episode.rend(); ++it) {
    g = it->reward + gamma * g;
    it->ret = g;
  }
}

RolloutBatch Trainer::collect(int iteration) {
  const int workers = cfg_.episodes_per_iteration;
  std::vector<std::vector<RolloutStep>> per_worker(workers);
  std::vector<std::exception_ptr> errors(workers);
  const int cap = cfg_.horizon_steps > 0 ? cfg_.horizon_steps
                                         : std::numeric_limits<int>::max();

  // Scenario draws optionally stay fixed across iterations (common random
  // numbers); exploration noise always varies.
  const std::uint64_t round =
      cfg_.fixed_episode_seeds ? 0 : static_cast<std::uint64_t>(iteration);

  auto roll = [&](int w) {
    try {
      auto env = factory_(w);
      std::mt19937_64 rng(mix_seed(cfg_.seed, static_cast<std::uint64_t>(iteration),
                                   0x1000ull + static_cast<std::uint64_t>(w)));
      Eigen::VectorXd s = env->reset(mix_seed(cfg_.seed, round, static_cast<std::uint64_t>(w)));
      for (int t = 0; t < cap; ++t) {
        RolloutStep step;
        step.state = s;
        if (model_.learned_encoder()) {
          const Eigen::MatrixXd* f = env->last_features();
          if (f == nullptr || f->size() == 0)
            throw std::runtime_error("ppo: environment provides no node features");
          step.features = *f;
        }
        const Eigen::VectorXd means = model_.policy_means(s);
        SampledAction act = sample_action(means, model_.log_std, rng);
        step.u = act.u;
        step.mu_old = means;
        step.logp_old = act.log_prob;
        mdp::StepResult res = env->step(act.u);
        step.reward = res.reward;
        per_worker[w].push_back(std::move(step));
        s = res.state;
        if (res.done) break;
      }
      compute_returns(per_worker[w], cfg_.gamma);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };

  if (workers == 1) {
    roll(0);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (int w = 0; w < workers; ++w) threads.emplace_back(roll, w);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  RolloutBatch batch;
  batch.episodes = workers;
  batch.log_std_old = model_.log_std;
  for (auto& w : per_worker)
    for (auto& s : w) batch.steps.push_back(std::move(s));
  if (batch.steps.empty()) throw std::runtime_error("ppo: empty rollout batch");
  return batch;
}

namespace {

// State as seen by the current parameters: re-encoded from raw node
// features when the encoder is learned, the stored vector otherwise.
Eigen::VectorXd eval_state(const ModelBundle& model, const net::AdjacencyMatrix& adjacency,
                           const RolloutStep& step) {
  if (!model.learned_encoder()) return step.state;
  return graphstate::encode_features(step.features, adjacency, model.encoder,
                                     graphstate::Mode::Graph);
}

}  // namespace

void Trainer::compute_advantages(RolloutBatch& batch) const {
  for (RolloutStep& s : batch.steps) s.adv = s.ret - model_.state_value(s.state);
}

double Trainer::policy_objective(const ModelBundle& model,
                                 const net::AdjacencyMatrix& adjacency,
                                 const RolloutBatch& batch, double lambda,
                                 PolicyGrads* grads) {
  const double t_count = static_cast<double>(batch.steps.size());
  const Eigen::VectorXd& ls = model.log_std;
  const Eigen::VectorXd& ls_old = batch.log_std_old;
  double objective = 0.0;
  for (const RolloutStep& step : batch.steps) {
    const Eigen::VectorXd s = eval_state(model, adjacency, step);
    Mlp::Cache cache;
    const Eigen::VectorXd out = model.policy.forward(s, cache);
    Eigen::VectorXd mu(out.size());
    for (int d = 0; d < out.size(); ++d) mu(d) = sigmoid(out(d));

    double logp = 0.0;
    std::vector<CensoredLogProb> parts(out.size());
    for (int d = 0; d < out.size(); ++d) {
      parts[d] = censored_log_prob(step.u(d), mu(d), ls(d));
      logp += parts[d].logp;
    }
    const double ratio = std::exp(logp - step.logp_old);
    const double kl = diag_gauss_kl(step.mu_old, ls_old, mu, ls);
    objective += step.adv * ratio - lambda / t_count * kl;

    if (grads != nullptr) {
      Eigen::VectorXd dmu(out.size()), dls(out.size());
      for (int d = 0; d < out.size(); ++d) {
        const double var_new = std::exp(2.0 * ls(d));
        const double var_old = std::exp(2.0 * ls_old(d));
        const double delta = mu(d) - step.mu_old(d);
        dmu(d) = step.adv * ratio * parts[d].dmu - lambda / t_count * delta / var_new;
        dls(d) = step.adv * ratio * parts[d].dlog_sigma -
                 lambda / t_count * (1.0 - (var_old + delta * delta) / var_new);
      }
      Eigen::VectorXd dout(out.size());
      for (int d = 0; d < out.size(); ++d) dout(d) = dmu(d) * mu(d) * (1.0 - mu(d));
      const Eigen::VectorXd dstate = model.policy.backward(dout, cache, grads->mlp);
      grads->log_std += dls;
      if (model.learned_encoder())
        grads->encoder += graphstate::encode_weight_grad(step.features, adjacency,
                                                         model.encoder, dstate);
    }
  }
  return objective;
}

double Trainer::value_loss(const ModelBundle& model, const net::AdjacencyMatrix& adjacency,
                           const RolloutBatch& batch, Mlp* grad) {
  double loss = 0.0;
  for (const RolloutStep& step : batch.steps) {
    const Eigen::VectorXd s = eval_state(model, adjacency, step);
    Mlp::Cache cache;
    const double v = model.value.forward(s, cache)(0);
    const double err = step.ret - v;
    loss += err * err;
    if (grad != nullptr) {
      Eigen::VectorXd dout(1);
      dout(0) = -2.0 * err;
      model.value.backward(dout, cache, *grad);
    }
  }
  return loss;
}

double Trainer::mean_kl(const ModelBundle& model, const net::AdjacencyMatrix& adjacency,
                        const RolloutBatch& batch) {
  double kl = 0.0;
  for (const RolloutStep& step : batch.steps) {
    const Eigen::VectorXd mu = model.policy_means(eval_state(model, adjacency, step));
    kl += diag_gauss_kl(step.mu_old, batch.log_std_old, mu, model.log_std);
  }
  return kl / static_cast<double>(batch.steps.size());
}

double Trainer::adapt_kl(double lambda, double measured_kl, const TrainerConfig& cfg) {
  double out = lambda;
  if (measured_kl > cfg.beta_high * cfg.kl_target) {
    out = lambda * cfg.alpha;
  } else if (measured_kl < cfg.beta_low * cfg.kl_target) {
    out = lambda / cfg.alpha;
  }
  return std::clamp(out, 1e-8, 1e8);
}

TrainResult Trainer::run(std::ostream* log_csv, const std::string& checkpoint_dir,
                         std::uint64_t config_hash) {
  namespace fs = std::filesystem;
  TrainResult result;
  if (log_csv)
    *log_csv << "iteration,steps,mean_reward,mean_kl,lambda,policy_objective,value_loss,wall_s\n";
  if (!checkpoint_dir.empty()) fs::create_directories(checkpoint_dir);

  for (int iter = 1; iter <= cfg_.iterations; ++iter) {
    const auto t0 = std::chrono::steady_clock::now();
    RolloutBatch batch = collect(iter);
    compute_advantages(batch);

    double objective = 0.0;
    for (int m = 0; m < cfg_.policy_epochs; ++m) {
      PolicyGrads g;
      g.mlp = Mlp::zeros_like(model_.policy);
      g.log_std = Eigen::VectorXd::Zero(model_.log_std.size());
      if (model_.learned_encoder())
        g.encoder = Eigen::MatrixXd::Zero(model_.encoder.w.rows(), model_.encoder.w.cols());
      objective = policy_objective(model_, adjacency_, batch, lambda_, &g);
      model_.policy.add_scaled(g.mlp, cfg_.lr_policy);
      model_.log_std += cfg_.lr_policy * g.log_std;
      for (int d = 0; d < model_.log_std.size(); ++d)
        model_.log_std(d) = std::clamp(model_.log_std(d), kLogStdMin, kLogStdMax);
      if (model_.learned_encoder()) model_.encoder.w += cfg_.lr_policy * g.encoder;
      if (!model_.finite())
        throw std::runtime_error("ppo: policy parameters became non-finite");
    }
    const double kl = mean_kl(model_, adjacency_, batch);
    lambda_ = adapt_kl(lambda_, kl, cfg_);

    double vloss = 0.0;
    for (int b = 0; b < cfg_.value_epochs; ++b) {
      Mlp g = Mlp::zeros_like(model_.value);
      vloss = value_loss(model_, adjacency_, batch, &g);
      model_.value.add_scaled(g, -cfg_.lr_value);
      if (!model_.value.finite())
        throw std::runtime_error("ppo: value parameters became non-finite");
    }

    IterationStats stats;
    stats.iteration = iter;
    stats.steps = static_cast<int>(batch.steps.size());
    double sum_r = 0.0;
    for (const RolloutStep& s : batch.steps) sum_r += s.reward;
    stats.mean_reward = sum_r / static_cast<double>(batch.steps.size());
    stats.mean_kl = kl;
    stats.lambda = lambda_;
    stats.policy_objective = objective;
    stats.value_loss = vloss;
    stats.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.iterations.push_back(stats);
    if (log_csv) {
      *log_csv << stats.iteration << ',' << stats.steps << ',' << stats.mean_reward << ','
               << stats.mean_kl << ',' << stats.lambda << ',' << stats.policy_objective
               << ',' << stats.value_loss << ',' << stats.wall_s << '\n';
      log_csv->flush();
    }
    if (!checkpoint_dir.empty())
      save_checkpoint(model_, (fs::path(checkpoint_dir) / "ckpt_latest").string(), iter,
                      config_hash);
  }
  if (!checkpoint_dir.empty()) {
    const std::string prefix = (fs::path(checkpoint_dir) / "ckpt_final").string();
    save_checkpoint(model_, prefix, cfg_.iterations, config_hash);
    result.checkpoint_path = prefix + ".json";
  }
  return result;
}

namespace {

std::string strip_suffix(const std::string& path) {
  if (path.size() > 5 && path.substr(path.size() - 5) == ".json")
    return path.substr(0, path.size() - 5);
  return path;
}

}  // namespace

void save_checkpoint(const ModelBundle& model, const std::string& prefix, int iteration,
                     std::uint64_t config_hash) {
  namespace fs = std::filesystem;
  const std::string stem = strip_suffix(prefix);
  std::vector<double> flat;
  if (model.mode == graphstate::Mode::Graph)
    for (int i = 0; i < model.encoder.w.rows(); ++i)
      for (int j = 0; j < model.encoder.w.cols(); ++j) flat.push_back(model.encoder.w(i, j));
  append_mlp(model.policy, flat);
  for (int i = 0; i < model.log_std.size(); ++i) flat.push_back(model.log_std(i));
  append_mlp(model.value, flat);

  std::vector<int> hidden;
  for (std::size_t l = 0; l + 1 < model.policy.layers.size(); ++l)
    hidden.push_back(static_cast<int>(model.policy.layers[l].w.rows()));

  char hash_hex[19];
  std::snprintf(hash_hex, sizeof hash_hex, "0x%016llx",
                static_cast<unsigned long long>(config_hash));

  nlohmann::json header = {
      {"format", "dvsl-checkpoint-1"},
      {"iteration", iteration},
      {"config_hash", hash_hex},
      {"mode", model.mode == graphstate::Mode::Graph ? "graph" : "raw"},
      {"encoder",
       {{"width", model.mode == graphstate::Mode::Graph ? model.encoder.width() : 0},
        {"features", model.mode == graphstate::Mode::Graph ? model.encoder.features() : 0},
        {"learned", model.encoder.learned}}},
      {"state_dim", model.state_dim},
      {"action_dim", model.action_dim},
      {"hidden", hidden},
      {"total_doubles", flat.size()},
      {"data", fs::path(stem + ".bin").filename().string()}};

  std::ofstream jf(stem + ".json");
  if (!jf) throw std::runtime_error("ppo: cannot write checkpoint header " + stem + ".json");
  jf << header.dump(2) << '\n';

  // Raw float64 array; this codebase targets little-endian hosts.
  std::ofstream bf(stem + ".bin", std::ios::binary);
  if (!bf) throw std::runtime_error("ppo: cannot write checkpoint data " + stem + ".bin");
  bf.write(reinterpret_cast<const char*>(flat.data()),
           static_cast<std::streamsize>(flat.size() * sizeof(double)));
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  namespace fs = std::filesystem;
  const std::string stem = strip_suffix(path);
  std::ifstream jf(stem + ".json");
  if (!jf) throw std::runtime_error("ppo: cannot open checkpoint header " + stem + ".json");
  nlohmann::json header = nlohmann::json::parse(jf);
  if (header.value("format", "") != "dvsl-checkpoint-1")
    throw std::runtime_error("ppo: unrecognised checkpoint format");

  LoadedCheckpoint out;
  out.iteration = header.at("iteration").get<int>();
  out.config_hash = std::stoull(header.at("config_hash").get<std::string>(), nullptr, 16);

  ModelBundle& m = out.model;
  const bool graph = header.at("mode").get<std::string>() == "graph";
  m.mode = graph ? graphstate::Mode::Graph : graphstate::Mode::Raw;
  m.state_dim = header.at("state_dim").get<int>();
  m.action_dim = header.at("action_dim").get<int>();
  const auto hidden = header.at("hidden").get<std::vector<int>>();
  m.policy = Mlp::create(m.state_dim, hidden, m.action_dim, 0, true);
  m.value = Mlp::create(m.state_dim, hidden, 1, 0, false);
  m.log_std = Eigen::VectorXd::Zero(m.action_dim);
  if (graph) {
    const int width = header.at("encoder").at("width").get<int>();
    const int features = header.at("encoder").at("features").get<int>();
    m.encoder.w = Eigen::MatrixXd::Zero(width, features);
  }
  m.encoder.learned = header.at("encoder").at("learned").get<bool>();

  const fs::path bin_path = fs::path(stem + ".json").parent_path() /
                            header.at("data").get<std::string>();
  std::ifstream bf(bin_path, std::ios::binary);
  if (!bf) throw std::runtime_error("ppo: cannot open checkpoint data " + bin_path.string());
  const std::size_t total = header.at("total_doubles").get<std::size_t>();
  std::vector<double> flat(total);
  bf.read(reinterpret_cast<char*>(flat.data()),
          static_cast<std::streamsize>(total * sizeof(double)));
  if (static_cast<std::size_t>(bf.gcount()) != total * sizeof(double))
    throw std::runtime_error("ppo: checkpoint data truncated");

  std::size_t k = 0;
  if (graph)
    for (int i = 0; i < m.encoder.w.rows(); ++i)
      for (int j = 0; j < m.encoder.w.cols(); ++j) m.encoder.w(i, j) = flat.at(k++);
  k = read_mlp(m.policy, flat, k);
  for (int i = 0; i < m.log_std.size(); ++i) m.log_std(i) = flat.at(k++);
  k = read_mlp(m.value, flat, k);
  if (k != flat.size()) throw std::runtime_error("ppo: checkpoint size mismatch");
  return out;
}

}  // namespace dvsl::ppo
