#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "routemlp/nn.hpp"

namespace routemlp::nn {

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;
using MlpParams = Mlp<double>;
using Layer = Dense<double>;

/// When per-sample losses of an epoch are recorded.
enum class LossRecording {
  kBatchPreUpdate,  // as each batch is consumed, before its optimizer step
  kEpochEndPass,    // extra inference pass over the training rows after the epoch
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double dropout_rate = 0.0;
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  LossRecording recording = LossRecording::kBatchPreUpdate;

  AdamConfig adam() const { return {learning_rate, beta1, beta2, epsilon}; }
  /// Throws ValidationError on lr <= 0, dropout outside [0,1), epochs < 1 or batch < 1.
  void validate() const;
};

/// Rows fed to a network: features [n x in], labels, and the owning participant of each row.
struct LabeledRows {
  MatrixXd features;
  std::vector<int> labels;
  std::vector<std::string> participants;

  std::size_t size() const { return labels.size(); }
  LabeledRows subset(std::span<const std::size_t> rows) const;
};

struct EpochTrace {
  int epoch = 0;  // 1-based
  std::vector<double> sample_losses;  // indexed by row of the training data
  double mean_loss = 0.0;
};

/// Deep copy of parameters and optimizer state at the end of an epoch.
struct ParamSnapshot {
  int epoch = 0;
  std::uint64_t seed = 0;
  MlpParams params;
  AdamState<double> adam;
};

struct TrainResult {
  MlpParams params;
  std::vector<EpochTrace> traces;
  std::vector<ParamSnapshot> snapshots;
};

/// Arithmetic mean accumulated in row order; used for every epoch mean.
double mean_of(std::span<const double> values);

/// Minibatch Adam training of a single network. Each epoch reshuffles the rows
/// with the run stream; losses are recorded per `config.recording`.
TrainResult train(MlpParams params, const LabeledRows& data, const TrainConfig& config,
                  std::span<const int> snapshot_epochs = {});

struct Prediction {
  std::vector<int> labels;
  MatrixXd probs;
};

Prediction predict(const MlpParams& params, const MatrixXd& inputs);

/// Inference-mode cross-entropy of every row.
std::vector<double> sample_losses(const MlpParams& params, const LabeledRows& data);

/// Layer widths of the reference network: in -> hidden... -> 2.
std::vector<Index> layer_dims(Index input_dim, std::span<const Index> hidden, Index classes = 2);

}  // namespace routemlp::nn
