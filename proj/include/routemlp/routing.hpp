#pragma once

// Participant -> cluster routing built from feature profiles or from
// per-participant training losses at the elbow epoch.

#include <json.hpp>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "routemlp/clustering.hpp"
#include "routemlp/data.hpp"
#include "routemlp/train.hpp"

namespace routemlp::strategies {

enum class Provenance { kFeatures, kLoss };
enum class RoutingLevel { kParticipant, kRow };

struct RoutingTable {
  std::map<std::string, int> cluster_of;
  int k = 1;
  Provenance provenance = Provenance::kFeatures;
  RoutingLevel level = RoutingLevel::kParticipant;
  /// Frozen clustering fitted on training data. For feature routing it carries
  /// the standardizer; for loss routing it is 1-D over mean losses.
  clustering::KMeansModel cluster_model;
  /// Elbow-epoch parameters used to score participants for loss routing.
  std::optional<nn::ParamSnapshot> snapshot;

  /// Throws RoutingError naming the participant when it has no route.
  int cluster(const std::string& participant) const;
  /// Cluster of every row, in dataset order.
  std::vector<int> route(const data::Dataset& rows) const;
  /// Participants of `rows` missing from the table.
  std::vector<std::string> unrouted(const data::Dataset& rows) const;
  /// Assigns participants not yet routed using only the frozen artifacts.
  /// With `reassign_known`, participants already present are re-predicted too.
  RoutingTable extended(const data::Dataset& rows, bool reassign_known = false) const;
};

struct FeatureRoutingOptions {
  std::optional<int> k;  // empty: best silhouette over [k_min, k_max]
  int k_min = 2;
  int k_max = 8;
  int restarts = 10;
  std::uint64_t seed = 0;
  RoutingLevel level = RoutingLevel::kParticipant;
};

struct FeatureRouting {
  RoutingTable table;
  clustering::KSelection selection;
};

/// Standardizes on training rows, clusters per-participant mean profiles
/// (or rows, at row level), then predicts clusters for test-only participants.
FeatureRouting route_by_features(const data::Dataset& train, const data::Dataset& test,
                                 const FeatureRoutingOptions& options);

struct Elbow {
  int epoch = 1;  // 1-based
  bool no_knee = false;
  bool overridden = false;
};

/// Knee of the epoch-mean loss curve. A curve without a knee falls back to
/// epoch ceil(E/10).
Elbow elbow_epoch(std::span<const double> epoch_mean_losses,
                  std::optional<int> manual_epoch = std::nullopt);

struct LossRoutingOptions {
  std::optional<int> k;  // empty: WCSS knee over [1, 6], clamped to [k_lo, k_hi]
  int k_lo = 2;
  int k_hi = 6;
  int restarts = 10;
  std::uint64_t seed = 0;
  std::optional<int> elbow_override;
  /// Re-predict participants present in both sets from their test losses
  /// instead of reusing their training cluster.
  bool reassign_common = false;
  std::vector<nn::Index> hidden{30, 10};
};

struct LossRouting {
  RoutingTable table;
  clustering::KSelection selection;
  Elbow elbow;
  std::vector<double> epoch_means;
  std::vector<double> train_sample_losses;  // per training row at the elbow epoch
  std::map<std::string, double> train_losses;  // per participant
  std::map<std::string, double> test_losses;   // per test participant, snapshot parameters
};

/// Trains the baseline on all training rows, takes per-participant mean
/// losses at the elbow epoch, clusters them in 1-D, and assigns test-only
/// participants from losses under the elbow-epoch snapshot.
LossRouting route_by_loss(const data::Dataset& train, const data::Dataset& test,
                          const nn::TrainConfig& base_config, const LossRoutingOptions& options);

/// Mean of values grouped by participant.
std::map<std::string, double> participant_means(std::span<const double> values,
                                                std::span<const std::string> participants);

nlohmann::json to_json(const RoutingTable& table);
RoutingTable routing_from_json(const nlohmann::json& j);

const char* to_string(Provenance p);

}  // namespace routemlp::strategies
