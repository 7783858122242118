#include "routemlp/eval.hpp"

#include <algorithm>
#include <cmath>

#include "routemlp/errors.hpp"
#include "routemlp/rng.hpp"

namespace routemlp::eval {

using strategies::StrategyKind;

Confusion& Confusion::operator+=(const Confusion& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

Confusion confusion_counts(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw ValidationError("confusion_counts: " + std::to_string(predictions.size()) +
                          " predictions for " + std::to_string(labels.size()) + " labels");
  }
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predictions[i] == 1;
    const bool y = labels[i] == 1;
    if (p && y) ++c.tp;
    else if (p) ++c.fp;
    else if (y) ++c.fn;
    else ++c.tn;
  }
  return c;
}

Metrics metrics_from_confusion(const Confusion& c) {
  if (c.tp < 0 || c.fp < 0 || c.fn < 0 || c.tn < 0) {
    throw ValidationError("metrics_from_confusion: negative count");
  }
  if (c.total() == 0) throw ValidationError("metrics_from_confusion: empty confusion");
  Metrics m;
  if (c.tp + c.fp == 0) {
    m.precision_undefined = true;
  } else {
    m.precision = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  }
  if (c.tp + c.fn == 0) {
    m.sensitivity_undefined = true;
  } else {
    m.sensitivity = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  }
  m.accuracy = 100.0 * static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  return m;
}

double GroupMetrics::value(Group g, Metric m) const {
  const auto& x = groups[g];
  switch (m) {
    case kPrecision: return x.precision;
    case kSensitivity: return x.sensitivity;
    case kAccuracy: return x.accuracy;
  }
  return 0.0;
}

GroupMetrics metrics_from_confusions(const std::array<Confusion, 3>& confusions) {
  GroupMetrics out;
  out.confusions = confusions;
  for (std::size_t g = 0; g < 3; ++g) {
    if (confusions[g].total() == 0) {
      out.groups[g].empty = true;
    } else {
      out.groups[g] = metrics_from_confusion(confusions[g]);
    }
  }
  return out;
}

GroupMetrics grouped_metrics(std::span<const int> predictions, std::span<const int> labels,
                             std::span<const data::Sex> sexes) {
  if (sexes.size() != labels.size()) {
    throw ValidationError("grouped_metrics: " + std::to_string(sexes.size()) + " sexes for " +
                          std::to_string(labels.size()) + " labels");
  }
  std::array<std::vector<int>, 2> preds;
  std::array<std::vector<int>, 2> ys;
  const auto overall = confusion_counts(predictions, labels);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto g = sexes[i] == data::Sex::kFemale ? 0 : 1;
    preds[g].push_back(predictions[i]);
    ys[g].push_back(labels[i]);
  }
  return metrics_from_confusions(
      {confusion_counts(preds[0], ys[0]), confusion_counts(preds[1], ys[1]), overall});
}

FittedStrategy fit_strategy(const StrategySpec& spec, const data::Dataset& train, std::uint64_t seed) {
  auto build = spec.build;
  build.seed = derive_seed(seed, "init");
  const auto roster = train.participants();
  FittedStrategy out{strategies::build_strategy(spec.kind, spec.k, roster, build), {}};
  auto config = spec.config;
  config.seed = derive_seed(seed, "train");
  out.training = strategies::train_strategy(out.model, spec.routing ? &*spec.routing : nullptr,
                                            train, config);
  return out;
}

Evaluation evaluate_fitted(const StrategySpec& spec, const strategies::StrategyModel& model,
                           const data::Dataset& rows) {
  const auto scorable = strategies::scorable_rows(model, rows);
  Evaluation out;
  out.scored = scorable.size();
  out.excluded = rows.size() - scorable.size();
  if (scorable.empty()) throw ExclusionError("evaluate: no scorable rows");
  const auto pred =
      strategies::predict_strategy(model, spec.routing ? &*spec.routing : nullptr, scorable);
  const auto labels = scorable.labels();
  const auto sexes = scorable.sexes();
  out.metrics = grouped_metrics(pred.labels, labels, sexes);
  return out;
}

Aggregate aggregate(std::span<const GroupMetrics> runs) {
  Aggregate a;
  if (runs.empty()) return a;
  const double n = static_cast<double>(runs.size());
  for (int g = 0; g < 3; ++g) {
    for (int m = 0; m < 3; ++m) {
      double sum = 0.0;
      for (const auto& r : runs) sum += r.value(Group(g), Metric(m));
      const double mean = sum / n;
      double ss = 0.0;
      for (const auto& r : runs) {
        const double d = r.value(Group(g), Metric(m)) - mean;
        ss += d * d;
      }
      a.mean[g][m] = mean;
      a.std[g][m] = std::sqrt(ss / n);
    }
  }
  return a;
}

namespace {

RunReport finish(RunReport report, const ProtocolOptions& options) {
  report.summary = aggregate(report.runs);
  if (options.pooled) {
    std::array<Confusion, 3> sum{};
    for (const auto& r : report.runs) {
      for (std::size_t g = 0; g < 3; ++g) sum[g] += r.confusions[g];
    }
    report.pooled = metrics_from_confusions(sum);
  }
  return report;
}

std::vector<data::Split> make_folds(const data::Dataset& train, int folds, std::uint64_t seed,
                                    const ProtocolOptions& options) {
  if (folds < 2) throw ValidationError("folds must be >= 2");
  if (options.disjoint_folds) return data::kfold_split(train, folds, derive_seed(seed, "kfold"));
  std::vector<data::Split> out;
  for (int f = 0; f < folds; ++f) {
    out.push_back(data::mc_split(train, options.val_fraction,
                                 derive_seed(derive_seed(seed, "fold", static_cast<std::size_t>(f)), "split"),
                                 options.stratified_split));
  }
  return out;
}

}  // namespace

RunReport resample_evaluate(const StrategySpec& spec, const data::Dataset& train,
                            const data::Dataset& test, int runs, std::uint64_t seed,
                            const ProtocolOptions& options) {
  if (runs < 1) throw ValidationError("resample_evaluate: runs must be >= 1");
  if (test.empty()) throw ValidationError("resample_evaluate: empty test set");
  RunReport report;
  report.strategy = spec.name;
  report.kind = strategies::to_string(spec.kind);
  report.protocol = "resample";
  report.seed = seed;
  for (int r = 0; r < runs; ++r) {
    const auto run_seed = derive_seed(seed, "run", static_cast<std::size_t>(r));
    const auto sample =
        data::stratified_resample(train, options.resample_fraction, derive_seed(run_seed, "resample"));
    const auto fitted = fit_strategy(spec, sample, run_seed);
    const auto ev = evaluate_fitted(spec, fitted.model, test);
    report.run_seeds.push_back(run_seed);
    report.runs.push_back(ev.metrics);
    report.excluded.push_back(ev.excluded);
  }
  return finish(std::move(report), options);
}

RunReport cross_validate(const StrategySpec& spec, const data::Dataset& train, int folds,
                         std::uint64_t seed, const ProtocolOptions& options) {
  const auto splits = make_folds(train, folds, seed, options);
  RunReport report;
  report.strategy = spec.name;
  report.kind = strategies::to_string(spec.kind);
  report.protocol = "cross-validate";
  report.seed = seed;
  for (std::size_t f = 0; f < splits.size(); ++f) {
    const auto fold_seed = derive_seed(seed, "fold", f);
    const auto fitted = fit_strategy(spec, train.subset(splits[f].train_index), fold_seed);
    const auto ev = evaluate_fitted(spec, fitted.model, train.subset(splits[f].val_index));
    report.run_seeds.push_back(fold_seed);
    report.runs.push_back(ev.metrics);
    report.excluded.push_back(ev.excluded);
  }
  return finish(std::move(report), options);
}

std::vector<GridPoint> make_grid(std::span<const double> learning_rates,
                                 std::span<const double> dropout_rates) {
  std::vector<GridPoint> out;
  for (double lr : learning_rates) {
    for (double p : dropout_rates) out.push_back({lr, p});
  }
  return out;
}

std::vector<GridPoint> default_grid() {
  const double lrs[] = {0.001, 0.005, 0.01};
  const double drops[] = {0.0, 0.2, 0.5};
  return make_grid(lrs, drops);
}

std::size_t choose_config(std::span<const GridEntry> entries) {
  if (entries.empty()) throw ValidationError("choose_config: no entries");
  const auto better = [](const GridEntry& a, const GridEntry& b) {
    if (a.mean_loss != b.mean_loss) return a.mean_loss < b.mean_loss;
    if (a.point.learning_rate != b.point.learning_rate) {
      return a.point.learning_rate < b.point.learning_rate;
    }
    return a.point.dropout_rate < b.point.dropout_rate;
  };
  std::size_t best = 0;
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (better(entries[i], entries[best])) best = i;
  }
  return best;
}

GridResult grid_search(const StrategySpec& spec, const data::Dataset& train,
                       std::span<const GridPoint> grid, int folds, std::uint64_t seed,
                       const ProtocolOptions& options) {
  if (grid.empty()) throw ValidationError("grid_search: empty grid");
  const auto splits = make_folds(train, folds, seed, options);
  GridResult result;
  result.seed = seed;
  result.folds = folds;
  for (const auto& point : grid) {
    GridEntry entry{point, {}, 0.0};
    auto s = spec;
    s.config.learning_rate = point.learning_rate;
    s.config.dropout_rate = point.dropout_rate;
    for (std::size_t f = 0; f < splits.size(); ++f) {
      try {
        const auto fitted = fit_strategy(s, train.subset(splits[f].train_index),
                                         derive_seed(seed, "fold", f));
        const auto val = strategies::scorable_rows(fitted.model, train.subset(splits[f].val_index));
        const auto losses = strategies::strategy_losses(
            fitted.model, s.routing ? &*s.routing : nullptr, val);
        entry.fold_losses.push_back(nn::mean_of(losses));
      } catch (const Error& e) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "grid config lr=%g dropout=%g, fold %zu: ", point.learning_rate,
                      point.dropout_rate, f);
        throw Error(buf + std::string(e.what()));
      }
    }
    entry.mean_loss = nn::mean_of(entry.fold_losses);
    result.entries.push_back(std::move(entry));
  }
  result.chosen = choose_config(result.entries);
  return result;
}

}  // namespace routemlp::eval
