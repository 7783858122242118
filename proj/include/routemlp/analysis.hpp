#pragma once

// Exact t-SNE and per-participant loss histograms, plus the CSV/SVG exports
// that feed the embedding and histogram figures.

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "routemlp/routing.hpp"

namespace routemlp::analysis {

struct TsneOptions {
  double perplexity = 30.0;
  int iterations = 1000;
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;
  double learning_rate = 200.0;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch = 250;
  double min_gain = 0.01;
  double perplexity_tolerance = 1e-3;
  int kl_every = 10;  // KL is recorded every this many iterations
  std::uint64_t seed = 0;
};

struct ConditionalP {
  Eigen::MatrixXd p;           // row i: p_{j|i}, zero diagonal
  Eigen::VectorXd beta;        // 1 / (2 sigma_i^2)
  Eigen::VectorXd perplexity;  // achieved per row
};

/// Per-row bandwidths found by bisection on beta so that 2^H(P_i) matches
/// `perplexity` within `tolerance`.
ConditionalP conditional_affinities(const Eigen::MatrixXd& sq_distances, double perplexity,
                                    double tolerance = 1e-3);

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& points);

/// Symmetrized joint P = (P + P^T) / 2n.
Eigen::MatrixXd joint_affinities(const ConditionalP& conditional);

/// KL(P || Q) with Q the Student-t affinities of `embedding`. Depends on the
/// embedding only through pairwise distances.
double kl_divergence(const Eigen::MatrixXd& joint_p, const Eigen::MatrixXd& embedding);

struct TsneResult {
  Eigen::MatrixXd embedding;  // n x 2
  std::vector<std::pair<int, double>> kl_trace;  // (iteration, KL) with un-exaggerated P
  ConditionalP conditional;
};

/// Requires n >= 5 and perplexity < (n - 1) / 3.
TsneResult tsne_embed(const Eigen::MatrixXd& points, const TsneOptions& options);

struct EmbeddingPoint {
  std::string participant_id;
  std::string date;
  std::string split;  // train | test
  double x = 0.0;
  double y = 0.0;
  double loss = 0.0;
};

/// participant_id,date,split,x,y,loss
std::string embedding_csv(const std::vector<EmbeddingPoint>& points);
std::string embedding_svg(const std::vector<EmbeddingPoint>& points);

struct HistogramBin {
  double low = 0.0;
  double high = 0.0;
  std::size_t count = 0;
  /// Participants in the bin per loss cluster.
  std::map<int, std::size_t> clusters;
};

struct HistogramSpec {
  std::vector<double> edges;  // bins + 1
  std::vector<HistogramBin> bins;
  std::map<std::string, int> cluster_of;  // participant -> loss cluster
  std::map<std::string, double> loss_of;
};

/// Equal-width bins over [min, max]; the last bin is closed. When every loss
/// is equal, all participants land in the first bin.
HistogramSpec participant_loss_histogram(const std::map<std::string, double>& mean_losses,
                                         const strategies::RoutingTable& routing, int bins);

/// bin_low,bin_high,count,cluster with one row per (bin, cluster) pair present.
std::string histogram_csv(const HistogramSpec& spec);
std::string histogram_svg(const HistogramSpec& spec);

}  // namespace routemlp::analysis
