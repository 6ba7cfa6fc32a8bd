#include "dvsl/graphstate.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace dvsl::graphstate {

EncoderWeights EncoderWeights::seeded(int width, int features, bool learned,
                                      std::uint64_t seed) {
  if (width <= 0 || features <= 0)
    throw std::invalid_argument("graphstate: encoder dimensions must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(features));
  EncoderWeights out;
  out.w = Eigen::MatrixXd(width, features);
  for (int i = 0; i < width; ++i)
    for (int j = 0; j < features; ++j) out.w(i, j) = nd(rng);
  out.learned = learned;
  return out;
}

Eigen::MatrixXd node_features(const std::vector<sim::DetectorReading>& readings,
                              const net::Network& net) {
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(net.node_count, 2);
  std::vector<bool> seen(net.node_count, false);
  for (const auto& r : readings) {
    if (r.lane < 0 || r.lane >= static_cast<int>(net.lanes.size()))
      throw std::invalid_argument("graphstate: reading for unknown lane");
    if (r.lane >= net.node_count) continue;  // downstream lanes carry no state
    const double v_ref = net.lanes[r.lane].base_limit;
    v(r.lane, 0) = std::clamp(r.occupancy, 0.0, 1.0);
    v(r.lane, 1) = v_ref > 0.0 ? std::clamp(r.mean_speed / v_ref, 0.0, 1.0) : 0.0;
    seen[r.lane] = true;
  }
  for (int i = 0; i < net.node_count; ++i)
    if (!seen[i])
      throw std::invalid_argument("graphstate: missing detector reading for lane " +
                                  net.lanes[i].name);
  return v;
}

Eigen::MatrixXd message_pass(const Eigen::MatrixXd& features,
                             const net::AdjacencyMatrix& adjacency,
                             const EncoderWeights& weights) {
  const int n = static_cast<int>(features.rows());
  if (adjacency.entries.rows() != n || adjacency.entries.cols() != n)
    throw std::invalid_argument("graphstate: adjacency and feature sizes differ");
  if (weights.features() != static_cast<int>(features.cols()))
    throw std::invalid_argument("graphstate: weight columns must match feature count");
  return adjacency.entries.transpose() * features * weights.w.transpose();
}

Eigen::MatrixXd aggregate(const Eigen::MatrixXd& messages) {
  return messages.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
}

Eigen::VectorXd flatten(const Eigen::MatrixXd& m) {
  Eigen::VectorXd out(m.size());
  int k = 0;
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) out(k++) = m(i, j);
  return out;
}

Eigen::VectorXd encode_features(const Eigen::MatrixXd& features,
                                const net::AdjacencyMatrix& adjacency,
                                const EncoderWeights& weights, Mode mode) {
  if (mode == Mode::Raw) return flatten(features);
  return flatten(aggregate(message_pass(features, adjacency, weights)));
}

Eigen::VectorXd encode(const std::vector<sim::DetectorReading>& readings,
                       const net::Network& net, const net::AdjacencyMatrix& adjacency,
                       const EncoderWeights& weights, Mode mode) {
  return encode_features(node_features(readings, net), adjacency, weights, mode);
}

int encoded_dim(const net::Network& net, const EncoderWeights& weights, Mode mode) {
  return net.node_count * (mode == Mode::Raw ? 2 : weights.width());
}

Eigen::MatrixXd encode_weight_grad(const Eigen::MatrixXd& features,
                                   const net::AdjacencyMatrix& adjacency,
                                   const EncoderWeights& weights,
                                   const Eigen::VectorXd& encoded_grad) {
  const Eigen::MatrixXd pre = adjacency.entries.transpose() * features;  // N x F
  const Eigen::MatrixXd z = pre * weights.w.transpose();                 // N x width
  const Eigen::MatrixXd s = aggregate(z);
  const int n = static_cast<int>(z.rows()), d = static_cast<int>(z.cols());
  if (encoded_grad.size() != n * d)
    throw std::invalid_argument("graphstate: encoded gradient has wrong length");
  Eigen::MatrixXd gz(n, d);
  int k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) gz(i, j) = encoded_grad(k++) * s(i, j) * (1.0 - s(i, j));
  return gz.transpose() * pre;  // width x F
}

}  // namespace dvsl::graphstate
