#pragma once

// Confusion-based metrics per sex, Monte-Carlo cross-validation, grid search
// and the repeated-resampling train/test protocol.

#include <json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "routemlp/data.hpp"
#include "routemlp/strategies.hpp"

namespace routemlp::eval {

struct Confusion {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  long tn = 0;

  long total() const { return tp + fp + fn + tn; }
  Confusion& operator+=(const Confusion& o);
  friend Confusion operator+(Confusion a, const Confusion& b) { return a += b; }
  bool operator==(const Confusion&) const = default;
};

/// Positive class is label 1. Throws ValidationError on length mismatch.
Confusion confusion_counts(std::span<const int> predictions, std::span<const int> labels);

/// Percentages in [0, 100]. A 0/0 ratio is reported as 0 and flagged.
struct Metrics {
  double precision = 0.0;
  double sensitivity = 0.0;
  double accuracy = 0.0;
  bool precision_undefined = false;
  bool sensitivity_undefined = false;
  bool empty = false;  // the group had no rows

  bool flagged() const { return precision_undefined || sensitivity_undefined || empty; }
};

/// Throws ValidationError for an empty confusion.
Metrics metrics_from_confusion(const Confusion& c);

enum Group { kFemale = 0, kMale = 1, kOverall = 2 };
enum Metric { kPrecision = 0, kSensitivity = 1, kAccuracy = 2 };
inline constexpr std::array<const char*, 3> kGroupNames{"Female", "Male", "Overall"};
inline constexpr std::array<const char*, 3> kMetricNames{"Precision", "Sensitivity", "Accuracy"};

struct GroupMetrics {
  std::array<Metrics, 3> groups;       // indexed by Group
  std::array<Confusion, 3> confusions;  // indexed by Group

  double value(Group g, Metric m) const;
};

/// Metrics of the female rows, the male rows and all rows, each computed from
/// its own confusion. An empty group gets all-zero metrics with `empty` set.
GroupMetrics grouped_metrics(std::span<const int> predictions, std::span<const int> labels,
                             std::span<const data::Sex> sexes);
GroupMetrics metrics_from_confusions(const std::array<Confusion, 3>& confusions);

/// Everything needed to fit one strategy on some training rows.
struct StrategySpec {
  std::string name = "baseline";  // label used in reports
  strategies::StrategyKind kind = strategies::StrategyKind::kBaseline;
  int k = 1;
  /// Must cover every participant the strategy will see (train and test).
  std::optional<strategies::RoutingTable> routing;
  strategies::BuildOptions build;
  nn::TrainConfig config;
};

struct FittedStrategy {
  strategies::StrategyModel model;
  strategies::StrategyTraining training;
};

/// Builds from derive_seed(seed, "init") and trains with derive_seed(seed, "train").
FittedStrategy fit_strategy(const StrategySpec& spec, const data::Dataset& train, std::uint64_t seed);

struct Evaluation {
  GroupMetrics metrics;
  std::size_t scored = 0;
  std::size_t excluded = 0;  // rows of participants the model cannot score
};

Evaluation evaluate_fitted(const StrategySpec& spec, const strategies::StrategyModel& model,
                           const data::Dataset& rows);

struct Aggregate {
  std::array<std::array<double, 3>, 3> mean{};  // [group][metric]
  std::array<std::array<double, 3>, 3> std{};   // population std over runs
};

/// Mean and population std of every cell, accumulated in run order.
Aggregate aggregate(std::span<const GroupMetrics> runs);

struct RunReport {
  std::string strategy;
  std::string kind;
  std::string protocol;  // "resample" or "cross-validate"
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> run_seeds;
  std::vector<GroupMetrics> runs;
  std::vector<std::size_t> excluded;  // per run
  Aggregate summary;
  std::optional<GroupMetrics> pooled;  // metrics of the summed confusions
};

struct ProtocolOptions {
  double val_fraction = 0.2;
  double resample_fraction = 0.8;
  bool disjoint_folds = false;   // k-fold partition instead of random splits
  bool stratified_split = false;  // round the validation share per participant
  bool pooled = false;
};

/// Per run r (seed derive_seed(seed, "run", r)): stratified resample of the
/// training rows, fit, and grouped metrics on the full test set.
RunReport resample_evaluate(const StrategySpec& spec, const data::Dataset& train,
                            const data::Dataset& test, int runs, std::uint64_t seed,
                            const ProtocolOptions& options = {});

/// Per fold f (seed derive_seed(seed, "fold", f)): 80/20 split, fit on the
/// 80 % and score the 20 % with the final-epoch model.
RunReport cross_validate(const StrategySpec& spec, const data::Dataset& train, int folds,
                         std::uint64_t seed, const ProtocolOptions& options = {});

struct GridPoint {
  double learning_rate = 1e-3;
  double dropout_rate = 0.0;
};

struct GridEntry {
  GridPoint point;
  std::vector<double> fold_losses;
  double mean_loss = 0.0;
};

struct GridResult {
  std::vector<GridEntry> entries;  // in grid order
  std::size_t chosen = 0;
  std::uint64_t seed = 0;
  int folds = 0;

  const GridPoint& best() const { return entries.at(chosen).point; }
};

/// Index of the lowest mean loss; ties go to the lower learning rate, then
/// the lower dropout.
std::size_t choose_config(std::span<const GridEntry> entries);

std::vector<GridPoint> default_grid();
/// Cartesian product, learning rates outermost.
std::vector<GridPoint> make_grid(std::span<const double> learning_rates,
                                 std::span<const double> dropout_rates);

/// Every configuration sees the same folds and fold seeds. The choice is the
/// lowest mean final-epoch validation loss; ties go to the lower learning
/// rate, then the lower dropout. A failed fold rethrows naming the config.
GridResult grid_search(const StrategySpec& spec, const data::Dataset& train,
                       std::span<const GridPoint> grid, int folds, std::uint64_t seed,
                       const ProtocolOptions& options = {});

nlohmann::json to_json(const Metrics& m);
nlohmann::json to_json(const GroupMetrics& g);
nlohmann::json to_json(const RunReport& r);
RunReport run_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GridResult& g);
GridResult grid_result_from_json(const nlohmann::json& j);

/// `mean(std)` with two decimals.
std::string format_cell(double mean, double std);
/// Header "strategy" then metric x group, one row per report.
std::string table_csv(std::span<const RunReport> reports);
std::string table_markdown(std::span<const RunReport> reports);

}  // namespace routemlp::eval
