#include <doctest.h>

#include <set>

#include "routemlp/errors.hpp"
#include "strategy_fixtures.hpp"

using namespace routemlp;
using namespace routemlp::strategies;

namespace {

data::Dataset rows_for(const data::Dataset& ds, const std::set<std::string>& ids) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ids.count(ds.records()[i].participant_id)) keep.push_back(i);
  return ds.subset(keep);
}

}  // namespace

TEST_CASE("parameter counts") {
  BuildOptions b;
  const std::vector<std::string> roster{"a", "b", "c"};
  const auto base = build_strategy(StrategyKind::kBaseline, 1, roster, b);
  CHECK(base.parameter_count() == 20 * 30 + 30 + 30 * 10 + 10 + 10 * 2 + 2);
  const std::size_t trunk = 20 * 30 + 30 + 30 * 10 + 10;
  CHECK(build_strategy(StrategyKind::kLossFinalLayerSeparated, 3, roster, b).parameter_count() ==
        trunk + 3 * (10 * 2 + 2));
  CHECK(build_strategy(StrategyKind::kLossFullySeparated, 1, roster, b).parameter_count() ==
        base.parameter_count());
  const auto emb = build_strategy(StrategyKind::kIdEmbedding, 1, roster, b);
  CHECK(emb.effective_input_dim() == 28);
  CHECK(emb.embedding->dim() == 8);
  CHECK(emb.parameter_count() == base.parameter_count() + 3 * 8 + 30 * 8);
  CHECK((emb.embedding->vectors.cwiseAbs().array() <= 0.05).all());
  CHECK_THROWS_AS(build_strategy(StrategyKind::kIdEmbedding, 1, {}, b), ValidationError);
  CHECK_THROWS_AS(parse_kind("mystery"), ValidationError);
  CHECK(parse_kind("loss-final") == StrategyKind::kLossFinalLayerSeparated);
}

TEST_CASE("k = 1 strategies reproduce the baseline trajectory bit for bit") {
  const auto ds = fixtures::small_planted(3);
  CHECK(fixtures::reduction_mismatches(ds, 7).empty());
  // a live embedding breaks the reduction, so the check has teeth
  CHECK(fixtures::trajectory(StrategyKind::kIdEmbedding, ds, 7, false) !=
        fixtures::trajectory(StrategyKind::kBaseline, ds, 7));
}

TEST_CASE("cluster isolation") {
  const auto r = fixtures::isolation_check(fixtures::small_planted(5), 3);
  CHECK(r.fully_separated_other_untouched);
  CHECK(r.fully_separated_own_changed);
  CHECK(r.final_layer_other_head_untouched);
  CHECK(r.final_layer_trunk_changed);
  CHECK(r.final_layer_own_head_changed);
  CHECK(r.interleaved_all_heads_changed);
}

TEST_CASE("a batch must stay on one path") {
  const auto ds = fixtures::small_planted(5);
  const auto routing = fixtures::round_robin_routing(ds, 2);
  BuildOptions b;
  auto m = build_strategy(StrategyKind::kLossFinalLayerSeparated, 2, {}, b);
  StrategyTrainer tr(m, &routing, ds, nn::TrainConfig{});
  auto mixed = fixtures::rows_of_cluster(tr.row_clusters(), 0, 2);
  const auto other = fixtures::rows_of_cluster(tr.row_clusters(), 1, 2);
  mixed.insert(mixed.end(), other.begin(), other.end());
  CHECK_THROWS_AS(tr.step(mixed), ContractError);
}

TEST_CASE("unrouted participants are named") {
  const auto ds = fixtures::small_planted(5);
  auto routing = fixtures::round_robin_routing(ds, 2);
  const auto missing = routing.cluster_of.begin()->first;
  routing.cluster_of.erase(missing);
  BuildOptions b;
  auto m = build_strategy(StrategyKind::kLossFullySeparated, 2, {}, b);
  try {
    train_strategy(m, &routing, ds, nn::TrainConfig{});
    FAIL("expected RoutingError");
  } catch (const RoutingError& e) {
    CHECK(std::string(e.what()).find(missing) != std::string::npos);
  }
  CHECK_THROWS_AS(train_strategy(m, nullptr, ds, nn::TrainConfig{}), RoutingError);
}

TEST_CASE("ID embedding trains its vectors and excludes unseen participants") {
  const auto ds = fixtures::small_planted(2);
  const auto ids = ds.participants();
  const std::set<std::string> known(ids.begin(), ids.end() - 2);
  const auto train = rows_for(ds, known);
  const auto roster = train.participants();
  BuildOptions b;
  b.seed = 4;
  auto m = build_strategy(StrategyKind::kIdEmbedding, 1, roster, b);
  const auto before = m.embedding->vectors;
  nn::TrainConfig cfg;
  cfg.epochs = 2;
  train_strategy(m, nullptr, train, cfg);
  CHECK(m.embedding->vectors != before);
  try {
    predict_strategy(m, nullptr, ds);
    FAIL("expected ExclusionError");
  } catch (const ExclusionError& e) {
    CHECK(std::string(e.what()).find(ids.back()) != std::string::npos);
  }
  const auto scorable = scorable_rows(m, ds);
  CHECK(scorable.size() == train.size());
  CHECK(predict_strategy(m, nullptr, scorable).labels.size() == train.size());
}

TEST_CASE("k = 1 routed prediction equals the baseline on the same parameters") {
  const auto ds = fixtures::small_planted(8);
  BuildOptions b;
  b.seed = 1;
  const auto base = build_strategy(StrategyKind::kBaseline, 1, {}, b);
  const auto routed = build_strategy(StrategyKind::kLossFinalLayerSeparated, 1, {}, b);
  const auto routing = fixtures::round_robin_routing(ds, 1);
  CHECK(predict_strategy(base, nullptr, ds).probs == predict_strategy(routed, &routing, ds).probs);
}

TEST_CASE("saved strategies round-trip to identical predictions") {
  const auto ds = fixtures::small_planted(9);
  const auto routing = fixtures::round_robin_routing(ds, 2);
  BuildOptions b;
  nn::TrainConfig cfg;
  cfg.epochs = 2;
  for (auto kind : {StrategyKind::kLossFinalLayerSeparated, StrategyKind::kIdEmbedding}) {
    auto m = build_strategy(kind, 2, ds.participants(), b);
    const auto* r = uses_routing(kind) ? &routing : nullptr;
    train_strategy(m, r, ds, cfg);
    SavedStrategy saved{m, uses_routing(kind) ? std::optional(routing) : std::nullopt, cfg};
    const auto back = strategy_from_json(nlohmann::json::parse(to_json(saved).dump()));
    const auto* rb = back.routing ? &*back.routing : nullptr;
    CHECK(predict_strategy(back.model, rb, ds).probs == predict_strategy(m, r, ds).probs);
  }
}

TEST_CASE("elbow epoch") {
  const std::vector<double> curve{1.0, 0.4, 0.3, 0.29, 0.285, 0.28};
  const auto e = elbow_epoch(curve);
  CHECK(e.epoch == 2);
  CHECK(!e.no_knee);
  const std::vector<double> linear{10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0, -1, -2, -3, -4, -5, -6, -7, -8, -9,
                                   -10, -11, -12, -13, -14, -15, -16, -17, -18, -19};
  const auto l = elbow_epoch(linear);
  CHECK(l.no_knee);
  CHECK(l.epoch == 3);  // ceil(30 / 10)
  CHECK(elbow_epoch(curve, 3).epoch == 3);
  CHECK(elbow_epoch(curve, 3).overridden);
  const std::vector<double> short_curve{1.0, 0.5};
  CHECK_THROWS_AS(elbow_epoch(short_curve), ValidationError);
}

TEST_CASE("participant means") {
  const std::vector<double> losses{0.2, 0.4, 1.0};
  const std::vector<std::string> who{"a", "a", "b"};
  const auto m = participant_means(losses, who);
  CHECK(m.at("a") == doctest::Approx(0.3));
  CHECK(m.at("b") == 1.0);
}

TEST_CASE("feature routing recovers two planted groups and predicts new participants") {
  data::SynthConfig c;
  c.participants = 16;
  c.clusters = 2;
  c.days = 20;
  c.cluster_separation = 4.0;
  c.seed = 3;
  const auto res = data::synth_generate(c);
  const auto ids = res.dataset.participants();
  const std::set<std::string> train_ids(ids.begin(), ids.begin() + 12);
  const std::set<std::string> test_ids(ids.begin() + 12, ids.end());
  const auto train = rows_for(res.dataset, train_ids);
  const auto test = rows_for(res.dataset, test_ids);
  FeatureRoutingOptions o;
  o.seed = 2;
  const auto fr = route_by_features(train, test, o);
  CHECK(fr.selection.chosen_k == 2);
  CHECK(fr.table.cluster_of.size() == ids.size());
  std::map<int, int> mapping;
  for (const auto& id : ids) {
    const int t = res.true_cluster.at(id);
    if (mapping.count(t)) CHECK(mapping[t] == fr.table.cluster_of.at(id));
    mapping[t] = fr.table.cluster_of.at(id);
  }
  CHECK(mapping[0] != mapping[1]);
  // forced k and determinism
  o.k = 4;
  const auto f4 = route_by_features(train, test, o);
  CHECK(f4.table.k == 4);
  CHECK(route_by_features(train, test, o).table.cluster_of == f4.table.cluster_of);
}

TEST_CASE("loss routing isolates a noisy group and leaves its artifacts frozen") {
  auto cfg = data::planted_heterogeneity(30, 4);
  cfg.days = 60;
  cfg.label_noise = {0.0, 0.0, 0.3};
  const auto res = data::synth_generate(cfg);
  const auto ids = res.dataset.participants();
  const std::set<std::string> train_ids(ids.begin(), ids.begin() + 24);
  const std::set<std::string> test_ids(ids.begin() + 24, ids.end());
  const auto train = rows_for(res.dataset, train_ids);
  const auto test = rows_for(res.dataset, test_ids);
  LossRoutingOptions o;
  o.seed = 5;
  nn::TrainConfig base;
  base.epochs = 10;
  base.seed = 5;
  const auto lr = route_by_loss(train, test, base, o);
  CHECK(lr.table.k >= 2);
  CHECK(lr.table.k <= 6);
  CHECK(lr.table.cluster_of.size() == ids.size());
  const int top = lr.table.k - 1;
  int noisy = 0, isolated = 0;
  for (const auto& id : train_ids) {
    if (res.true_cluster.at(id) != 2) continue;
    ++noisy;
    isolated += lr.table.cluster_of.at(id) == top;
  }
  CHECK(isolated * 10 >= noisy * 8);
  // extending to more data reuses the frozen snapshot and centroids
  const auto snapshot_before = lr.table.snapshot->params;
  const auto centroids_before = lr.table.cluster_model.centroids;
  const auto ext = lr.table.extended(test, true);
  CHECK(ext.snapshot->params == snapshot_before);
  CHECK(ext.cluster_model.centroids == centroids_before);
  const auto again = route_by_loss(train, test, base, o);
  CHECK(again.table.cluster_of == lr.table.cluster_of);
  // JSON round trip
  const auto back = routing_from_json(nlohmann::json::parse(to_json(lr.table).dump()));
  CHECK(back.cluster_of == lr.table.cluster_of);
  CHECK(back.extended(test, true).cluster_of == ext.cluster_of);
}
