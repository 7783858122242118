#pragma once

// The model families: a shared baseline, k fully separated networks, one
// shared trunk with k output heads, and an ID-embedding network. Rows are
// dispatched to (network, head) through a RoutingTable.

#include <json.hpp>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "routemlp/data.hpp"
#include "routemlp/routing.hpp"
#include "routemlp/train.hpp"

namespace routemlp::strategies {

using nn::Index;
using nn::Layer;
using nn::MatrixXd;

enum class StrategyKind {
  kBaseline,
  kFeatureClustered,        // final-layer-separated heads over feature clusters
  kLossFullySeparated,
  kLossFinalLayerSeparated,
  kIdEmbedding,
};

const char* to_string(StrategyKind kind);
/// Accepts the canonical names above and the CLI aliases
/// (baseline, feature2, feature4, loss-full, loss-final, id-embed).
StrategyKind parse_kind(const std::string& name);
bool uses_routing(StrategyKind kind);
bool has_shared_trunk(StrategyKind kind);

/// Trunk layers shared by all heads, then one layer list per head.
struct RoutedNet {
  std::vector<Layer> trunk;
  std::vector<std::vector<Layer>> heads;

  nn::LayerChain<double> path(std::size_t head) const;
  std::size_t parameter_count() const;
};

/// Trainable participant vectors, read by the first layer through `projection`
/// (the first-layer columns that would face the embedding if it were
/// concatenated to the features).
struct EmbeddingTable {
  std::vector<std::string> ids;
  std::map<std::string, Index> index;
  MatrixXd vectors;     // [ids x dim]
  MatrixXd projection;  // [hidden0 x dim]
  bool frozen = false;

  Index dim() const { return vectors.cols(); }
  bool contains(const std::string& id) const { return index.count(id) != 0; }
  MatrixXd lookup(std::span<const std::string> participants) const;
};

struct StrategyModel {
  StrategyKind kind = StrategyKind::kBaseline;
  int k = 1;
  Index input_dim = data::kFeatureCount;
  std::vector<Index> hidden{30, 10};
  std::vector<RoutedNet> nets;
  std::optional<EmbeddingTable> embedding;

  struct Path {
    std::size_t net = 0;
    std::size_t head = 0;
  };
  Path dispatch(int cluster) const;
  std::size_t parameter_count() const;
  /// Input width seen by the first layer, counting the embedding.
  Index effective_input_dim() const;
};

struct BuildOptions {
  std::vector<Index> hidden{30, 10};
  Index input_dim = data::kFeatureCount;
  int embedding_dim = 8;
  double embedding_init = 0.05;  // vectors uniform in +-embedding_init
  bool freeze_zero_embedding = false;
  std::uint64_t seed = 0;
};

/// Parameter shapes per kind; baseline and ID embedding are single-path.
/// Every network draws its layers in order from its own init stream, so a
/// k = 1 model starts from the baseline's weights.
StrategyModel build_strategy(StrategyKind kind, int k, std::span<const std::string> roster,
                             const BuildOptions& options);

/// Runs minibatch Adam over routed rows. Within an epoch each network
/// shuffles its rows with its own stream, batches them per head and
/// interleaves the heads round-robin. A shared trunk is updated on every
/// batch; a head only on its own cluster's batches.
class StrategyTrainer {
 public:
  StrategyTrainer(StrategyModel& model, const RoutingTable* routing, const data::Dataset& rows,
                  const nn::TrainConfig& config);

  /// One optimizer step on the given rows, which must share a path.
  /// Returns their pre-update losses.
  std::vector<double> step(std::span<const std::size_t> batch);
  nn::EpochTrace run_epoch();
  std::vector<nn::EpochTrace> run();

  const std::vector<int>& row_clusters() const { return clusters_; }

 private:
  struct NetState {
    Rng rng;
    nn::AdamState<double> trunk;
    std::vector<nn::AdamState<double>> heads;
  };

  StrategyModel& model_;
  nn::TrainConfig config_;
  nn::LabeledRows rows_;
  std::vector<int> clusters_;
  std::vector<NetState> states_;
  nn::TensorAdam<double> vectors_adam_;
  nn::TensorAdam<double> projection_adam_;
  int epoch_ = 0;
};

struct StrategyTraining {
  std::vector<nn::EpochTrace> traces;
  std::vector<double> epoch_means() const;
};

/// Validates routing and embedding coverage, then trains in place.
StrategyTraining train_strategy(StrategyModel& model, const RoutingTable* routing,
                                const data::Dataset& rows, const nn::TrainConfig& config);

/// Labels and probabilities in input order. ID embedding rejects participants
/// without a trained vector with ExclusionError.
nn::Prediction predict_strategy(const StrategyModel& model, const RoutingTable* routing,
                                const data::Dataset& rows);

/// Inference-mode cross-entropy of every row.
std::vector<double> strategy_losses(const StrategyModel& model, const RoutingTable* routing,
                                    const data::Dataset& rows);

/// Rows whose participants the model can score (drops unseen IDs for ID embedding).
data::Dataset scorable_rows(const StrategyModel& model, const data::Dataset& rows);

/// Strategy kind, hyperparameters, routing and parameters in one document.
struct SavedStrategy {
  StrategyModel model;
  std::optional<RoutingTable> routing;
  nn::TrainConfig config;
};

nlohmann::json to_json(const SavedStrategy& saved);
SavedStrategy strategy_from_json(const nlohmann::json& j);
nlohmann::json to_json(const nn::TrainConfig& config);
nn::TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace routemlp::strategies
