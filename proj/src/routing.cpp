#include "routemlp/routing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "routemlp/errors.hpp"
#include "routemlp/rng.hpp"
#include "routemlp/snapshot_io.hpp"

namespace routemlp::strategies {
namespace {

Eigen::MatrixXd column(const std::vector<double>& values) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = values[i];
  return m;
}

/// Renumbers 1-D clusters so that id order follows centroid order.
void sort_centroids(clustering::KMeansModel& model) {
  std::vector<int> order(static_cast<std::size_t>(model.k));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return model.centroids(a, 0) < model.centroids(b, 0);
  });
  std::vector<int> new_id(order.size());
  Eigen::MatrixXd sorted(model.centroids.rows(), model.centroids.cols());
  for (std::size_t i = 0; i < order.size(); ++i) {
    sorted.row(static_cast<Eigen::Index>(i)) = model.centroids.row(order[i]);
    new_id[static_cast<std::size_t>(order[i])] = static_cast<int>(i);
  }
  model.centroids = sorted;
  for (auto& a : model.assignments) a = new_id[static_cast<std::size_t>(a)];
}

}  // namespace

const char* to_string(Provenance p) { return p == Provenance::kFeatures ? "features" : "loss"; }

int RoutingTable::cluster(const std::string& participant) const {
  const auto it = cluster_of.find(participant);
  if (it == cluster_of.end()) throw RoutingError("participant " + participant + " has no route");
  return it->second;
}

std::vector<std::string> RoutingTable::unrouted(const data::Dataset& rows) const {
  std::vector<std::string> out;
  for (const auto& [id, sex] : rows.roster()) {
    if (level == RoutingLevel::kParticipant && cluster_of.count(id) == 0) out.push_back(id);
  }
  return out;
}

std::vector<int> RoutingTable::route(const data::Dataset& rows) const {
  if (level == RoutingLevel::kRow) {
    if (!cluster_model.standardizer) {
      throw ContractError("row-level routing requires a fitted standardizer");
    }
    return clustering::kmeans_predict(cluster_model,
                                      cluster_model.standardizer->apply(rows.feature_matrix()));
  }
  std::vector<int> out;
  out.reserve(rows.size());
  for (const auto& r : rows.records()) out.push_back(cluster(r.participant_id));
  return out;
}

std::map<std::string, double> participant_means(std::span<const double> values,
                                                std::span<const std::string> participants) {
  if (values.size() != participants.size()) {
    throw ShapeError("participant_means: value and participant counts differ");
  }
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& [sum, count] = acc[participants[i]];
    sum += values[i];
    ++count;
  }
  std::map<std::string, double> out;
  for (const auto& [id, sc] : acc) out[id] = sc.first / static_cast<double>(sc.second);
  return out;
}

RoutingTable RoutingTable::extended(const data::Dataset& rows, bool reassign_known) const {
  RoutingTable out = *this;
  if (level == RoutingLevel::kRow || rows.empty()) return out;
  std::vector<std::size_t> pick;
  std::set<std::string> targets;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& id = rows.records()[i].participant_id;
    if (reassign_known || cluster_of.count(id) == 0) {
      pick.push_back(i);
      targets.insert(id);
    }
  }
  if (pick.empty()) return out;
  const data::Dataset sub = rows.subset(pick);

  if (provenance == Provenance::kFeatures) {
    if (!cluster_model.standardizer) throw ContractError("feature routing lacks its standardizer");
    const auto profiles = data::participant_profiles(sub, *cluster_model.standardizer);
    const auto ids = clustering::kmeans_predict(cluster_model, profiles.values);
    for (std::size_t i = 0; i < profiles.ids.size(); ++i) out.cluster_of[profiles.ids[i]] = ids[i];
  } else {
    if (!snapshot) throw ContractError("loss routing lacks its parameter snapshot");
    const auto labeled = sub.rows();
    const auto losses = nn::sample_losses(snapshot->params, labeled);
    const auto means = participant_means(losses, labeled.participants);
    std::vector<double> values;
    std::vector<std::string> ids;
    for (const auto& [id, m] : means) {
      ids.push_back(id);
      values.push_back(m);
    }
    const auto assigned = clustering::kmeans_predict(cluster_model, column(values));
    for (std::size_t i = 0; i < ids.size(); ++i) out.cluster_of[ids[i]] = assigned[i];
  }
  return out;
}

FeatureRouting route_by_features(const data::Dataset& train, const data::Dataset& test,
                                 const FeatureRoutingOptions& options) {
  if (train.empty()) throw ValidationError("route_by_features: empty training set");
  const auto standardizer = clustering::standardize_fit(train.feature_matrix());
  FeatureRouting out;
  out.table.provenance = Provenance::kFeatures;
  out.table.level = options.level;

  data::Profiles profiles;
  Eigen::MatrixXd points;
  if (options.level == RoutingLevel::kParticipant) {
    profiles = data::participant_profiles(train, standardizer);
    points = profiles.values;
  } else {
    points = standardizer.apply(train.feature_matrix());
  }
  const auto available = static_cast<int>(clustering::distinct_rows(points));

  int k = 0;
  if (options.k) {
    k = *options.k;
    if (k < 1) throw ValidationError("route_by_features: k must be >= 1");
    if (k > available) {
      throw ValidationError("route_by_features: k=" + std::to_string(k) + " exceeds " +
                            std::to_string(available) + " training participants");
    }
    out.selection.chosen_k = k;
    out.selection.chosen_by = clustering::ChosenBy::kManual;
  } else {
    const int k_max = std::min(options.k_max, available - 1);
    if (k_max < options.k_min) {
      throw ValidationError("route_by_features: too few participants for automatic k");
    }
    out.selection =
        clustering::select_k_silhouette(points, options.k_min, k_max, options.restarts, options.seed);
    k = out.selection.chosen_k;
  }
  auto model = clustering::kmeans_fit(points, k, options.restarts,
                                      derive_seed(options.seed, "k", static_cast<std::size_t>(k)));
  model.standardizer = standardizer;
  out.table.k = k;
  if (options.level == RoutingLevel::kParticipant) {
    for (std::size_t i = 0; i < profiles.ids.size(); ++i) {
      out.table.cluster_of[profiles.ids[i]] = model.assignments[i];
    }
  }
  out.table.cluster_model = std::move(model);
  out.table = out.table.extended(test);
  return out;
}

Elbow elbow_epoch(std::span<const double> epoch_mean_losses, std::optional<int> manual_epoch) {
  const auto epochs = static_cast<int>(epoch_mean_losses.size());
  Elbow out;
  if (manual_epoch) {
    if (*manual_epoch < 1 || *manual_epoch > epochs) {
      throw ValidationError("elbow_epoch: manual epoch outside the trained range");
    }
    out.epoch = *manual_epoch;
    out.overridden = true;
    return out;
  }
  if (epochs < 3) throw ValidationError("elbow_epoch: need at least 3 epochs of losses");
  const auto kn = clustering::knee(epoch_mean_losses);
  if (!kn.found) {
    out.no_knee = true;
    out.epoch = std::max(1, (epochs + 9) / 10);
    return out;
  }
  out.epoch = static_cast<int>(kn.index) + 1;
  return out;
}

LossRouting route_by_loss(const data::Dataset& train, const data::Dataset& test,
                          const nn::TrainConfig& base_config, const LossRoutingOptions& options) {
  if (train.empty()) throw ValidationError("route_by_loss: empty training set");
  LossRouting out;
  const auto rows = train.rows();
  Rng init_rng(derive_seed(base_config.seed, "loss-routing/init"));
  const auto dims = nn::layer_dims(rows.features.cols(), options.hidden);
  auto params = nn::init_mlp<double>(dims, init_rng);

  nn::TrainConfig cfg = base_config;
  cfg.seed = derive_seed(base_config.seed, "loss-routing/train");
  std::vector<int> all_epochs(static_cast<std::size_t>(cfg.epochs));
  std::iota(all_epochs.begin(), all_epochs.end(), 1);
  auto trained = nn::train(std::move(params), rows, cfg, all_epochs);

  for (const auto& t : trained.traces) out.epoch_means.push_back(t.mean_loss);
  out.elbow = elbow_epoch(out.epoch_means, options.elbow_override);
  const auto& trace = trained.traces[static_cast<std::size_t>(out.elbow.epoch - 1)];
  out.train_sample_losses = trace.sample_losses;
  out.train_losses = participant_means(trace.sample_losses, rows.participants);

  std::vector<std::string> ids;
  std::vector<double> values;
  for (const auto& [id, m] : out.train_losses) {
    ids.push_back(id);
    values.push_back(m);
  }
  const Eigen::MatrixXd points = column(values);
  const auto distinct = static_cast<int>(clustering::distinct_rows(points));
  int k = 0;
  if (options.k) {
    k = *options.k;
    if (k < 1 || k > distinct) {
      throw ValidationError("route_by_loss: k=" + std::to_string(k) + " is not in [1, " +
                            std::to_string(distinct) + "]");
    }
    out.selection.chosen_k = k;
    out.selection.chosen_by = clustering::ChosenBy::kManual;
  } else {
    const int k_max = std::min(options.k_hi, distinct);
    out.selection = clustering::select_k_elbow(points, 1, k_max, options.k_lo,
                                               std::min(options.k_hi, distinct), options.restarts,
                                               options.seed);
    k = out.selection.chosen_k;
  }
  auto model = clustering::kmeans_fit(points, k, options.restarts,
                                      derive_seed(options.seed, "k", static_cast<std::size_t>(k)));
  sort_centroids(model);

  out.table.provenance = Provenance::kLoss;
  out.table.level = RoutingLevel::kParticipant;
  out.table.k = k;
  for (std::size_t i = 0; i < ids.size(); ++i) out.table.cluster_of[ids[i]] = model.assignments[i];
  out.table.cluster_model = std::move(model);
  out.table.snapshot = trained.snapshots[static_cast<std::size_t>(out.elbow.epoch - 1)];

  if (!test.empty()) {
    const auto test_rows = test.rows();
    const auto losses = nn::sample_losses(out.table.snapshot->params, test_rows);
    out.test_losses = participant_means(losses, test_rows.participants);
    out.table = out.table.extended(test, options.reassign_common);
  }
  return out;
}

nlohmann::json to_json(const RoutingTable& table) {
  nlohmann::json j{{"format", "routemlp.routing/1"},
                   {"k", table.k},
                   {"provenance", to_string(table.provenance)},
                   {"level", table.level == RoutingLevel::kParticipant ? "participant" : "row"},
                   {"clusters", table.cluster_of}};
  // a hand-built table has no fitted model to carry
  j["cluster_model"] = table.cluster_model.k > 0 ? clustering::to_json(table.cluster_model) : nlohmann::json();
  j["snapshot"] = table.snapshot ? io::snapshot_to_json(*table.snapshot) : nlohmann::json();
  return j;
}

RoutingTable routing_from_json(const nlohmann::json& j) {
  RoutingTable t;
  t.k = j.at("k").get<int>();
  const auto prov = j.at("provenance").get<std::string>();
  if (prov != "features" && prov != "loss") throw ValidationError("routing json: bad provenance");
  t.provenance = prov == "features" ? Provenance::kFeatures : Provenance::kLoss;
  t.level = j.at("level").get<std::string>() == "row" ? RoutingLevel::kRow : RoutingLevel::kParticipant;
  t.cluster_of = j.at("clusters").get<std::map<std::string, int>>();
  if (!j.at("cluster_model").is_null()) t.cluster_model = clustering::kmeans_from_json(j["cluster_model"]);
  if (j.contains("snapshot") && !j["snapshot"].is_null()) {
    t.snapshot = io::snapshot_from_json(j["snapshot"]);
  }
  for (const auto& [id, c] : t.cluster_of) {
    if (c < 0 || c >= t.k) throw ValidationError("routing json: cluster id out of range for " + id);
  }
  return t;
}

}  // namespace routemlp::strategies
