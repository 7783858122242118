#include <doctest.h>

#include <algorithm>
#include <set>

#include "data_fixtures.hpp"
#include "metric_fixtures.hpp"
#include "routemlp/errors.hpp"
#include "routemlp/rng.hpp"
#include "strategy_fixtures.hpp"

using namespace routemlp;
using namespace routemlp::eval;

TEST_CASE("metric fixture cases") {
  for (const auto& c : fixtures::metric_cases()) {
    CAPTURE(c.name);
    CHECK(c.run());
  }
}

TEST_CASE("metric properties on random confusions") {
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<int> p(n), y(n);
    std::vector<data::Sex> s(n);
    for (std::size_t j = 0; j < n; ++j) {
      p[j] = static_cast<int>(rng.below(2));
      y[j] = static_cast<int>(rng.below(2));
      s[j] = rng.bernoulli(0.5) ? data::Sex::kFemale : data::Sex::kMale;
    }
    const auto c = confusion_counts(p, y);
    CHECK(c.total() == static_cast<long>(n));
    const auto m = metrics_from_confusion(c);
    CHECK(m.accuracy / 100.0 * static_cast<double>(c.total()) == doctest::Approx(c.tp + c.tn));
    for (double v : {m.precision, m.sensitivity, m.accuracy}) CHECK((v >= 0.0 && v <= 100.0));
    const auto g = grouped_metrics(p, y, s);
    CHECK(fixtures::overall_is_sum(g));
  }
  const std::vector<int> a{1, 0}, b{1};
  CHECK_THROWS_AS(confusion_counts(a, b), ValidationError);
}

TEST_CASE("aggregation: mean and population std per cell") {
  std::vector<GroupMetrics> runs(3);
  const double vals[3] = {10.0, 20.0, 60.0};
  for (int r = 0; r < 3; ++r) runs[r].groups[kMale].precision = vals[r];
  const auto a = aggregate(runs);
  CHECK(a.mean[kMale][kPrecision] == doctest::Approx(30.0));
  // population std of {10, 20, 60}: sqrt(((-20)^2 + (-10)^2 + 30^2) / 3)
  CHECK(a.std[kMale][kPrecision] == doctest::Approx(std::sqrt(1400.0 / 3.0)));
  CHECK(a.std[kFemale][kAccuracy] == 0.0);
  const auto one = aggregate(std::span<const GroupMetrics>(runs).first(1));
  for (int g = 0; g < 3; ++g)
    for (int m = 0; m < 3; ++m) CHECK(one.std[g][m] == 0.0);
}

TEST_CASE("grid choice: argmin with lower learning rate, then lower dropout, on ties") {
  std::vector<GridEntry> e{{{0.01, 0.0}, {}, 0.5},
                           {{0.001, 0.5}, {}, 0.4},
                           {{0.005, 0.2}, {}, 0.4},
                           {{0.001, 0.2}, {}, 0.4}};
  CHECK(e[choose_config(e)].point.learning_rate == 0.001);
  CHECK(e[choose_config(e)].point.dropout_rate == 0.2);
  std::sort(e.begin(), e.end(), [](auto& a, auto& b) { return a.point.dropout_rate > b.point.dropout_rate; });
  CHECK(e[choose_config(e)].point.dropout_rate == 0.2);
  CHECK(e[choose_config(e)].point.learning_rate == 0.001);
  CHECK(default_grid().size() == 9);
}

namespace {

StrategySpec quick_spec() {
  StrategySpec s;
  s.config.epochs = 3;
  s.config.batch_size = 32;
  return s;
}

}  // namespace

TEST_CASE("grid search is invariant to grid order and honours a single config") {
  const auto ds = fixtures::small_planted(2, 8, 30);
  const auto spec = quick_spec();
  std::vector<GridPoint> grid{{0.001, 0.0}, {0.01, 0.2}, {0.005, 0.0}};
  const auto a = grid_search(spec, ds, grid, 2, 7);
  std::reverse(grid.begin(), grid.end());
  const auto b = grid_search(spec, ds, grid, 2, 7);
  CHECK(a.best().learning_rate == b.best().learning_rate);
  CHECK(a.best().dropout_rate == b.best().dropout_rate);
  CHECK(a.entries.front().fold_losses == b.entries.back().fold_losses);
  const std::vector<GridPoint> single{{0.005, 0.2}};
  const auto s = grid_search(spec, ds, single, 2, 7);
  CHECK(s.chosen == 0);
  CHECK(s.entries[0].fold_losses.size() == 2);
  CHECK_THROWS_AS(grid_search(spec, ds, std::span<const GridPoint>{}, 2, 7), ValidationError);
  const auto back = grid_result_from_json(to_json(a));
  CHECK(back.chosen == a.chosen);
  CHECK(back.entries[1].fold_losses == a.entries[1].fold_losses);
}

TEST_CASE("resampling protocol") {
  const auto ds = fixtures::small_planted(4, 10, 40);
  const auto [train, test] = data::temporal_split(ds, data::parse_date("2021-07-28"));
  const auto spec = quick_spec();
  const auto one = resample_evaluate(spec, train, test, 1, 3);
  for (int g = 0; g < 3; ++g)
    for (int m = 0; m < 3; ++m) CHECK(one.summary.std[g][m] == 0.0);
  const auto r = resample_evaluate(spec, train, test, 3, 3);
  CHECK(r.runs.size() == 3);
  CHECK(r.run_seeds.size() == 3);
  for (int g = 0; g < 3; ++g) {
    for (int m = 0; m < 3; ++m) {
      double sum = 0;
      for (const auto& run : r.runs) sum += run.value(Group(g), Metric(m));
      CHECK(std::abs(sum / 3.0 - r.summary.mean[g][m]) < 1e-12);
    }
  }
  const auto again = resample_evaluate(spec, train, test, 3, 3);
  CHECK(to_json(again).dump() == to_json(r).dump());
  CHECK_THROWS_AS(resample_evaluate(spec, train, test, 0, 3), ValidationError);
  const auto back = run_report_from_json(to_json(r));
  CHECK(to_json(back).dump() == to_json(r).dump());
}

TEST_CASE("cross-validation on a separable set scores well in every fold") {
  std::vector<data::Record> recs;
  Rng rng(3);
  for (int p = 0; p < 6; ++p) {
    for (int d = 1; d <= 40; ++d) {
      auto r = fixtures::record("p" + std::to_string(p), d, 0, p % 2 ? data::Sex::kMale : data::Sex::kFemale);
      r.label = static_cast<int>(rng.below(2));
      for (auto& f : r.features) f = (r.label ? 2.0 : -2.0) + 0.3 * rng.normal();
      recs.push_back(r);
    }
  }
  const data::Dataset ds(recs);
  auto spec = quick_spec();
  spec.config.epochs = 10;
  const auto r = cross_validate(spec, ds, 2, 5);
  REQUIRE(r.runs.size() == 2);
  for (const auto& run : r.runs) CHECK(run.groups[kOverall].accuracy > 95.0);
  CHECK_THROWS_AS(cross_validate(spec, ds, 1, 5), ValidationError);
}

TEST_CASE("table layout") {
  RunReport r;
  r.strategy = "baseline";
  r.summary.mean[kFemale][kPrecision] = 48.924;
  r.summary.std[kFemale][kPrecision] = 34.835;
  const std::vector<RunReport> reports{r};
  const auto csv = table_csv(reports);
  const auto header = csv.substr(0, csv.find('\n'));
  CHECK(header ==
        "strategy,Precision Female,Precision Male,Precision Overall,Sensitivity Female,Sensitivity Male,"
        "Sensitivity Overall,Accuracy Female,Accuracy Male,Accuracy Overall");
  CHECK(csv.find("baseline,48.92(34.84),0.00(0.00)") != std::string::npos);
  CHECK(format_cell(70.525, 30.0949) == "70.53(30.09)");
  CHECK(table_markdown(reports).find("| baseline | 48.92(34.84) |") != std::string::npos);
}
