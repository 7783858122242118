#include "routemlp/train.hpp"

#include <algorithm>
#include <set>

namespace routemlp::nn {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("train config: learning_rate must be > 0");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ValidationError("train config: dropout_rate must lie in [0, 1)");
  }
  if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("train config: Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ValidationError("train config: epsilon must be > 0");
}

LabeledRows LabeledRows::subset(std::span<const std::size_t> rows) const {
  LabeledRows out;
  out.features.resize(static_cast<Index>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  out.participants.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Index>(i)) = features.row(static_cast<Index>(rows[i]));
    out.labels.push_back(labels[rows[i]]);
    out.participants.push_back(participants[rows[i]]);
  }
  return out;
}

double mean_of(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

TrainResult train(MlpParams params, const LabeledRows& data, const TrainConfig& config,
                  std::span<const int> snapshot_epochs) {
  config.validate();
  if (data.size() == 0) throw ValidationError("train: no training rows");
  if (data.features.rows() != static_cast<Index>(data.size())) {
    throw ShapeError("train: feature rows and labels disagree");
  }
  if (data.features.cols() != params.input_dim()) {
    throw ShapeError("train: data has " + std::to_string(data.features.cols()) +
                     " features, network expects " + std::to_string(params.input_dim()));
  }
  const std::set<int> snap(snapshot_epochs.begin(), snapshot_epochs.end());
  for (int e : snap) {
    if (e < 1 || e > config.epochs) {
      throw ValidationError("train: snapshot epoch " + std::to_string(e) + " outside [1, epochs]");
    }
  }

  Rng rng(config.seed);
  const AdamConfig adam = config.adam();
  AdamState<double> state = AdamState<double>::for_mlp(params);
  const auto layers = chain(params);
  const std::size_t n = data.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);

  TrainResult result;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochTrace trace;
    trace.epoch = epoch;
    trace.sample_losses.assign(n, 0.0);
    const auto order = rng.permutation(n);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      const std::span<const std::size_t> rows(order.data() + start, stop - start);
      const LabeledRows part = data.subset(rows);
      auto fwd = forward(layers, part.features, Mode::kTrain, config.dropout_rate, rng);
      auto loss = softmax_cross_entropy(fwd.logits, std::span<const int>(part.labels));
      if (config.recording == LossRecording::kBatchPreUpdate) {
        for (std::size_t i = 0; i < rows.size(); ++i) {
          trace.sample_losses[rows[i]] = loss.per_sample(static_cast<Index>(i));
        }
      }
      auto grads = backward(layers, fwd.cache, loss.probs, std::span<const int>(part.labels));
      adam_step(params, std::span<const Layer>(grads.layers), state, adam);
    }
    if (config.recording == LossRecording::kEpochEndPass) {
      trace.sample_losses = sample_losses(params, data);
    }
    trace.mean_loss = mean_of(trace.sample_losses);
    result.traces.push_back(std::move(trace));
    if (snap.count(epoch) != 0) {
      result.snapshots.push_back({epoch, config.seed, params, state});
    }
  }
  result.params = std::move(params);
  return result;
}

Prediction predict(const MlpParams& params, const MatrixXd& inputs) {
  if (inputs.cols() != params.input_dim()) {
    throw ShapeError("predict: inputs have " + std::to_string(inputs.cols()) +
                     " columns, network expects " + std::to_string(params.input_dim()));
  }
  const MatrixXd z = logits(chain(params), inputs);
  Prediction p;
  p.labels = argmax_labels(z);
  p.probs.resize(z.rows(), z.cols());
  for (Index i = 0; i < z.rows(); ++i) {
    const double mx = z.row(i).maxCoeff();
    const auto e = (z.row(i).array() - mx).exp();
    p.probs.row(i) = e / e.sum();
  }
  return p;
}

std::vector<double> sample_losses(const MlpParams& params, const LabeledRows& data) {
  if (data.size() == 0) return {};
  const auto loss = softmax_cross_entropy(logits(chain(params), data.features),
                                          std::span<const int>(data.labels));
  return {loss.per_sample.data(), loss.per_sample.data() + loss.per_sample.size()};
}

std::vector<Index> layer_dims(Index input_dim, std::span<const Index> hidden, Index classes) {
  std::vector<Index> dims{input_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(classes);
  return dims;
}

}  // namespace routemlp::nn
