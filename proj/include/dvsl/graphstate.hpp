#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "dvsl/net.hpp"
#include "dvsl/sim.hpp"

namespace dvsl::graphstate {

enum class Mode { Raw, Graph };

/// One linear layer shared by the whole graph: width x feature_count.
/// `learned` marks whether the trainer updates it or it stays at its
/// seeded random initialisation.
struct EncoderWeights {
  Eigen::MatrixXd w;
  bool learned = true;

  static EncoderWeights seeded(int width, int features, bool learned, std::uint64_t seed);
  int width() const { return static_cast<int>(w.rows()); }
  int features() const { return static_cast<int>(w.cols()); }
};

/// Per-node feature matrix V (node_count x 2): column 0 is detector
/// occupancy in [0,1], column 1 is mean crossing speed normalised by the
/// base limit and clamped to [0,1]. Readings must cover every state lane.
Eigen::MatrixXd node_features(const std::vector<sim::DetectorReading>& readings,
                              const net::Network& net);

/// One synchronous message-passing round: H = E^T V W^T, so each node
/// aggregates the transformed features of its in-edge senders. Shape checks
/// throw std::invalid_argument.
Eigen::MatrixXd message_pass(const Eigen::MatrixXd& features,
                             const net::AdjacencyMatrix& adjacency,
                             const EncoderWeights& weights);

/// Elementwise logistic squashing of the aggregated messages.
Eigen::MatrixXd aggregate(const Eigen::MatrixXd& messages);

/// Row-major flattening: node 0's features first.
Eigen::VectorXd flatten(const Eigen::MatrixXd& m);

/// Raw mode flattens V directly; graph mode runs the message-passing round
/// first. Output length is node_count*2 (raw) or node_count*width (graph).
Eigen::VectorXd encode_features(const Eigen::MatrixXd& features,
                                const net::AdjacencyMatrix& adjacency,
                                const EncoderWeights& weights, Mode mode);

Eigen::VectorXd encode(const std::vector<sim::DetectorReading>& readings,
                       const net::Network& net, const net::AdjacencyMatrix& adjacency,
                       const EncoderWeights& weights, Mode mode);

int encoded_dim(const net::Network& net, const EncoderWeights& weights, Mode mode);

/// Gradient of a scalar loss with respect to W given the gradient with
/// respect to the encoded vector (graph mode only). Recomputes the forward
/// pass internally.
Eigen::MatrixXd encode_weight_grad(const Eigen::MatrixXd& features,
                                   const net::AdjacencyMatrix& adjacency,
                                   const EncoderWeights& weights,
                                   const Eigen::VectorXd& encoded_grad);

}  // namespace dvsl::graphstate
