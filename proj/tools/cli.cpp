#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "routemlp/analysis.hpp"
#include "routemlp/config.hpp"
#include "routemlp/errors.hpp"
#include "routemlp/eval.hpp"
#include "routemlp/rng.hpp"
#include "routemlp/routing.hpp"
#include "routemlp/snapshot_io.hpp"
#include "routemlp/strategies.hpp"
#include "routemlp/synth.hpp"

#ifndef ROUTEMLP_VERSION
#define ROUTEMLP_VERSION "dev"
#endif

namespace routemlp::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using strategies::StrategyKind;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string strategy = "baseline";
  std::string k = "auto";
  std::optional<int> runs;
  std::optional<int> folds;
  std::string train;
  std::string test;
  std::string data;
  std::string input;
  std::string model;
  std::string grid;
  std::string by = "loss";
  std::string protocol = "resample";
  std::vector<std::string> inputs;
  std::optional<int> participants;
};

/// Collects outputs in memory; nothing touches disk until commit().
class Session {
 public:
  Session(std::string command, std::vector<std::string> argv, Config config, fs::path out_dir)
      : cfg(std::move(config)), command_(std::move(command)), argv_(std::move(argv)),
        out_dir_(std::move(out_dir)) {}

  Config cfg;
  json seeds = json::object();
  json inputs = json::object();
  json notes = json::object();

  void emit(const std::string& name, std::string content) {
    outputs_.emplace_back(out_dir_ / name, std::move(content));
  }

  template <typename F>
  auto timed(const std::string& name, F&& f) {
    const auto start = std::chrono::steady_clock::now();
    auto result = f();
    timings_[name] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return result;
  }

  std::uint64_t seed(const std::string& name) {
    const auto s = derive_seed(cfg.seed, name);
    seeds[name] = s;
    return s;
  }

  std::vector<fs::path> commit() {
    fs::create_directories(out_dir_);
    std::vector<fs::path> written;
    json artifacts = json::array();
    for (const auto& [path, content] : outputs_) {
      io::write_text_atomic(path, content);
      written.push_back(path);
      artifacts.push_back(path.filename().string());
    }
    json manifest{{"format", "routemlp.manifest/1"},
                  {"tool", "routemlp-cli"},
                  {"version", ROUTEMLP_VERSION},
                  {"command", command_},
                  {"argv", argv_},
                  {"root_seed", cfg.seed},
                  {"seeds", seeds},
                  {"config", to_json(cfg)},
                  {"inputs", inputs},
                  {"notes", notes},
                  {"artifacts", artifacts},
                  {"timings_ms", timings_}};
    const auto path = out_dir_ / ("manifest-" + command_ + ".json");
    io::write_text_atomic(path, manifest.dump(2) + "\n");
    written.push_back(path);
    return written;
  }

 private:
  std::string command_;
  std::vector<std::string> argv_;
  fs::path out_dir_;
  std::vector<std::pair<fs::path, std::string>> outputs_;
  json timings_ = json::object();
};

struct Choice {
  std::string name;
  StrategyKind kind = StrategyKind::kBaseline;
  std::optional<int> k;
};

Choice resolve_strategy(const std::string& name, const std::string& k_text, const Config& cfg) {
  Choice c{name, strategies::parse_kind(name), cfg.k};
  if (k_text != "auto") {
    int k = 0;
    try {
      std::size_t used = 0;
      k = std::stoi(k_text, &used);
      if (used != k_text.size()) throw std::invalid_argument(k_text);
    } catch (const std::exception&) {
      throw UsageError("--k must be 'auto' or a positive integer");
    }
    if (k < 1) throw UsageError("--k must be 'auto' or a positive integer");
    c.k = k;
  }
  const auto fixed = name == "feature2" ? 2 : name == "feature4" ? 4 : 0;
  if (fixed) {
    if (k_text != "auto" && c.k != fixed) throw UsageError(name + " fixes k=" + std::to_string(fixed));
    c.k = fixed;
  }
  if (!strategies::uses_routing(c.kind)) c.k = 1;
  return c;
}

data::Dataset load_dataset(const std::string& path, const std::string& role, Session& s) {
  if (path.empty()) throw UsageError("missing --" + role);
  auto res = data::ingest_csv(path);
  s.inputs[role] = {{"path", path}, {"rows", res.dataset.size()}, {"rejected", res.rejected}};
  if (res.dataset.empty()) throw ValidationError(role + " dataset " + path + " has no valid rows");
  return std::move(res.dataset);
}

std::pair<data::Dataset, data::Dataset> load_split(const Flags& f, Session& s, bool need_test) {
  if (!f.data.empty()) {
    if (!f.train.empty() || !f.test.empty()) throw UsageError("--data excludes --train/--test");
    const auto all = load_dataset(f.data, "data", s);
    data::Day split;
    if (s.cfg.split_date.empty()) {
      const auto [first, last] = *all.span();
      split = first + std::chrono::days((last - first).count() * 4 / 5);
    } else {
      split = data::parse_date(s.cfg.split_date);
    }
    s.notes["split_date"] = data::format_date(split);
    auto parts = data::temporal_split(all, split);
    if (parts.first.empty() || (need_test && parts.second.empty())) {
      throw ValidationError("temporal split at " + data::format_date(split) + " leaves an empty side");
    }
    return parts;
  }
  auto train = load_dataset(f.train, "train", s);
  data::Dataset test;
  if (!f.test.empty()) test = load_dataset(f.test, "test", s);
  else if (need_test) throw UsageError("missing --test (or --data)");
  return {std::move(train), std::move(test)};
}

struct Routed {
  std::optional<strategies::RoutingTable> table;
  json detail;
};

Routed build_routing(Session& s, StrategyKind kind, std::optional<int> k, const data::Dataset& train,
                     const data::Dataset& test) {
  Routed out;
  const auto seed = s.seed("routing");
  if (kind == StrategyKind::kFeatureClustered) {
    strategies::FeatureRoutingOptions o{k, s.cfg.k_min, s.cfg.k_max, s.cfg.restarts, seed, s.cfg.level};
    auto r = strategies::route_by_features(train, test, o);
    out.detail = {{"by", "features"}, {"selection", clustering::to_json(r.selection)}};
    out.table = std::move(r.table);
  } else {
    strategies::LossRoutingOptions o;
    o.k = k;
    o.k_lo = s.cfg.k_lo;
    o.k_hi = s.cfg.k_hi;
    o.restarts = s.cfg.restarts;
    o.seed = seed;
    o.elbow_override = s.cfg.elbow_epoch;
    o.reassign_common = s.cfg.reassign_common;
    o.hidden = s.cfg.build.hidden;
    auto r = strategies::route_by_loss(train, test, s.cfg.train, o);
    out.detail = {{"by", "loss"},
                  {"selection", clustering::to_json(r.selection)},
                  {"elbow_epoch", r.elbow.epoch},
                  {"no_knee", r.elbow.no_knee},
                  {"elbow_overridden", r.elbow.overridden},
                  {"epoch_mean_losses", r.epoch_means},
                  {"train_participant_losses", r.train_losses},
                  {"test_participant_losses", r.test_losses}};
    out.table = std::move(r.table);
  }
  return out;
}

Routed routing_for(Session& s, const Choice& c, const data::Dataset& train, const data::Dataset& test) {
  if (!strategies::uses_routing(c.kind)) return {};
  return build_routing(s, c.kind, c.k, train, test);
}

eval::StrategySpec make_spec(const Choice& c, std::optional<strategies::RoutingTable> routing,
                             const Config& cfg) {
  eval::StrategySpec spec;
  spec.name = c.name;
  spec.kind = c.kind;
  spec.k = routing ? routing->k : 1;
  spec.routing = std::move(routing);
  spec.build = cfg.build;
  spec.config = cfg.train;
  return spec;
}

json parse_json_file(const std::string& path) {
  try {
    return json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

// ---- subcommands ----

void cmd_synth(Session& s, const Flags& f) {
  auto cfg = s.cfg.synth;
  if (f.participants) cfg.participants = *f.participants;
  if (s.cfg.synth_planted) {
    auto planted = data::planted_heterogeneity(cfg.participants, 0);
    planted.days = cfg.days;
    planted.start_date = cfg.start_date;
    planted.offset_scale = cfg.offset_scale;
    planted.noise_scale = cfg.noise_scale;
    planted.female_noise = cfg.female_noise;
    planted.male_noise = cfg.male_noise;
    planted.female_fraction = cfg.female_fraction;
    planted.episode_rate = cfg.episode_rate;
    planted.label_noise = cfg.label_noise;
    planted.missing_day_rate = cfg.missing_day_rate;
    if (!cfg.cluster_weights.empty()) planted.cluster_weights = cfg.cluster_weights;
    cfg = planted;
  }
  cfg.seed = s.seed("synth");
  cfg.validate();
  const auto res = s.timed("generate", [&] { return data::synth_generate(cfg); });
  s.notes["rows"] = res.dataset.size();
  s.notes["participants"] = res.dataset.roster().size();
  s.emit("dataset.csv", data::to_csv(res.dataset));
  s.emit("ground_truth.csv", data::ground_truth_csv(res));
}

void cmd_ingest(Session& s, const Flags& f) {
  if (f.input.empty()) throw UsageError("missing --input");
  auto raw = data::ingest_csv(f.input);
  s.inputs["input"] = {{"path", f.input}, {"rows", raw.dataset.size()}, {"rejected", raw.rejected}};
  const auto confirmed = data::confirmed_from_labels(raw.dataset);
  const auto seg = data::segment_by_gaps(raw.dataset, s.cfg.min_segment);
  const auto labeled = data::expand_segments(seg, confirmed);
  if (labeled.dataset.empty()) throw ValidationError("no segment of length >= min_segment survives");
  json summary{{"input_rows", raw.dataset.size() + raw.rejected},
               {"rejected_rows", raw.rejected},
               {"rejections", raw.rejections},
               {"segments", seg.segments.size()},
               {"dropped_segments", seg.dropped_segments},
               {"dropped_records", seg.dropped_records},
               {"unmatched_confirmed_days", labeled.unmatched_confirmed},
               {"output_rows", labeled.dataset.size()}};
  s.emit("dataset.csv", data::to_csv(labeled.dataset));
  s.emit("ingest.json", summary.dump(2) + "\n");
}

void cmd_cluster(Session& s, const Flags& f) {
  if (f.by != "features" && f.by != "loss") throw UsageError("--by must be features or loss");
  auto [train, test] = load_split(f, s, false);
  std::optional<int> k = s.cfg.k;
  if (f.k != "auto") k = resolve_strategy("loss-final", f.k, s.cfg).k;
  const auto kind = f.by == "features" ? StrategyKind::kFeatureClustered : StrategyKind::kLossFinalLayerSeparated;
  auto routed = s.timed("routing", [&] { return build_routing(s, kind, k, train, test); });
  s.emit("routing.json", strategies::to_json(*routed.table).dump(2) + "\n");
  s.emit("routing-detail.json", routed.detail.dump(2) + "\n");
}

void cmd_tune(Session& s, const Flags& f) {
  const auto choice = resolve_strategy(f.strategy, f.k, s.cfg);
  const auto folds = f.folds.value_or(s.cfg.folds);
  if (folds < 2) throw UsageError("--folds must be >= 2");
  auto [train, test] = load_split(f, s, false);
  auto routed = s.timed("routing", [&] { return routing_for(s, choice, train, data::Dataset{}); });
  const auto spec = make_spec(choice, routed.table, s.cfg);
  const auto grid = eval::make_grid(s.cfg.grid_learning_rates, s.cfg.grid_dropout_rates);
  const auto seed = s.seed("tune");
  auto result = s.timed("grid", [&] {
    return eval::grid_search(spec, train, grid, folds, seed, s.cfg.protocol);
  });
  auto j = eval::to_json(result);
  j["strategy"] = choice.name;
  j["k"] = spec.k;
  s.emit("grid-" + choice.name + ".json", j.dump(2) + "\n");
}

void cmd_train(Session& s, const Flags& f) {
  const auto choice = resolve_strategy(f.strategy, f.k, s.cfg);
  auto [train, test] = load_split(f, s, false);
  if (!f.grid.empty()) {
    const auto g = eval::grid_result_from_json(parse_json_file(f.grid));
    s.cfg.train.learning_rate = g.best().learning_rate;
    s.cfg.train.dropout_rate = g.best().dropout_rate;
    s.inputs["grid"] = f.grid;
  }
  auto routed = s.timed("routing", [&] { return routing_for(s, choice, train, test); });
  const auto spec = make_spec(choice, routed.table, s.cfg);
  const auto seed = s.seed("fit");
  auto fitted = s.timed("fit", [&] { return eval::fit_strategy(spec, train, seed); });
  strategies::SavedStrategy saved{std::move(fitted.model), spec.routing, spec.config};
  saved.config.seed = derive_seed(seed, "train");
  auto j = strategies::to_json(saved);
  j["name"] = choice.name;
  j["fit_seed"] = seed;
  j["epoch_mean_losses"] = fitted.training.epoch_means();
  s.emit("model-" + choice.name + ".json", j.dump(2) + "\n");
  if (!routed.detail.is_null()) s.emit("routing-" + choice.name + ".json", routed.detail.dump(2) + "\n");
}

void cmd_evaluate(Session& s, const Flags& f) {
  if (f.model.empty()) throw UsageError("missing --model");
  if (f.protocol != "resample" && f.protocol != "cv" && f.protocol != "fixed") {
    throw UsageError("--protocol must be resample, cv or fixed");
  }
  const auto j = parse_json_file(f.model);
  auto saved = strategies::strategy_from_json(j);
  const std::string name = j.value("name", std::string(strategies::to_string(saved.model.kind)));
  s.inputs["model"] = f.model;

  eval::StrategySpec spec;
  spec.name = name;
  spec.kind = saved.model.kind;
  spec.k = saved.model.k;
  spec.routing = saved.routing;
  spec.build = s.cfg.build;
  spec.build.hidden = saved.model.hidden;
  spec.build.input_dim = saved.model.input_dim;
  if (saved.model.embedding) spec.build.embedding_dim = static_cast<int>(saved.model.embedding->dim());
  spec.config = saved.config;

  eval::RunReport report;
  const auto seed = s.seed("evaluate");
  if (f.protocol == "fixed") {
    auto [train, test] = f.data.empty() && f.train.empty()
                             ? std::pair{data::Dataset{}, load_dataset(f.test, "test", s)}
                             : load_split(f, s, true);
    if (spec.routing) spec.routing = spec.routing->extended(test);
    const auto ev = eval::evaluate_fitted(spec, saved.model, test);
    report.strategy = name;
    report.kind = strategies::to_string(spec.kind);
    report.protocol = "fixed";
    report.seed = seed;
    report.run_seeds = {j.value("fit_seed", std::uint64_t{0})};
    report.runs = {ev.metrics};
    report.excluded = {ev.excluded};
    report.summary = eval::aggregate(report.runs);
  } else if (f.protocol == "resample") {
    const auto runs = f.runs.value_or(s.cfg.runs);
    if (runs < 1) throw UsageError("--runs must be >= 1");
    auto [train, test] = load_split(f, s, true);
    if (spec.routing) spec.routing = spec.routing->extended(test);
    report = s.timed("resample", [&] {
      return eval::resample_evaluate(spec, train, test, runs, seed, s.cfg.protocol);
    });
  } else {
    const auto folds = f.folds.value_or(s.cfg.folds);
    if (folds < 2) throw UsageError("--folds must be >= 2");
    auto [train, test] = load_split(f, s, false);
    if (spec.routing) spec.routing = spec.routing->extended(train);
    report = s.timed("cross_validate", [&] {
      return eval::cross_validate(spec, train, folds, seed, s.cfg.protocol);
    });
  }
  const std::vector<eval::RunReport> one{report};
  s.emit("report-" + name + ".json", eval::to_json(report).dump(2) + "\n");
  s.emit("report-" + name + ".csv", eval::table_csv(one));
}

void cmd_tsne(Session& s, const Flags& f) {
  auto [train, test] = load_split(f, s, false);
  auto routed = s.timed("routing", [&] {
    return build_routing(s, StrategyKind::kLossFinalLayerSeparated, s.cfg.k, train, test);
  });
  const auto& table = *routed.table;
  const auto& params = table.snapshot->params;

  std::vector<analysis::EmbeddingPoint> points;
  std::vector<std::vector<double>> rows;
  const auto add = [&](const data::Dataset& ds, const char* split) {
    if (ds.empty()) return;
    const auto labeled = ds.rows();
    auto losses = nn::sample_losses(params, labeled);
    if (s.cfg.tsne_participant_mean) {
      const auto means = strategies::participant_means(losses, labeled.participants);
      for (std::size_t i = 0; i < losses.size(); ++i) losses[i] = means.at(labeled.participants[i]);
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& r = ds.records()[i];
      points.push_back({r.participant_id, data::format_date(r.date), split, 0.0, 0.0, losses[i]});
    }
  };
  add(train, "train");
  add(test, "test");

  const auto standardizer = clustering::standardize_fit(train.feature_matrix());
  Eigen::MatrixXd all(static_cast<Eigen::Index>(points.size()), data::kFeatureCount);
  all.topRows(static_cast<Eigen::Index>(train.size())) = standardizer.apply(train.feature_matrix());
  if (!test.empty()) {
    all.bottomRows(static_cast<Eigen::Index>(test.size())) = standardizer.apply(test.feature_matrix());
  }
  auto opts = s.cfg.tsne;
  opts.seed = s.seed("tsne");
  const auto result = s.timed("tsne", [&] { return analysis::tsne_embed(all, opts); });
  for (std::size_t i = 0; i < points.size(); ++i) {
    points[i].x = result.embedding(static_cast<Eigen::Index>(i), 0);
    points[i].y = result.embedding(static_cast<Eigen::Index>(i), 1);
  }
  s.notes["final_kl"] = result.kl_trace.back().second;
  s.notes["elbow_epoch"] = routed.detail["elbow_epoch"];

  const auto train_rows = train.rows();
  const auto means = strategies::participant_means(nn::sample_losses(params, train_rows), train_rows.participants);
  const auto hist = analysis::participant_loss_histogram(means, table, s.cfg.histogram_bins);
  s.emit("embedding.csv", analysis::embedding_csv(points));
  s.emit("embedding.svg", analysis::embedding_svg(points));
  s.emit("histogram.csv", analysis::histogram_csv(hist));
  s.emit("histogram.svg", analysis::histogram_svg(hist));
}

void cmd_report(Session& s, const Flags& f) {
  if (f.inputs.empty()) throw UsageError("report needs at least one --input report JSON");
  std::vector<eval::RunReport> reports;
  for (const auto& path : f.inputs) reports.push_back(eval::run_report_from_json(parse_json_file(path)));
  s.inputs["reports"] = f.inputs;
  s.emit("table.csv", eval::table_csv(reports));
  s.emit("table.md", eval::table_markdown(reports));
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Participant-routed MLP classifiers: data, training, evaluation and analysis"};
  app.set_version_flag("--version", ROUTEMLP_VERSION);
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config_path, "INI config file")->check(CLI::ExistingFile);
  app.add_option("--seed", f.seed, "root seed (overrides [run] seed)");
  app.add_option("--out-dir", f.out_dir, "output directory (default: $ROUTEMLP_OUT_DIR, then [run] out_dir)");

  const std::vector<std::string> strategy_names{"baseline", "feature2", "feature4", "loss-full", "loss-final",
                                                "id-embed", "feature-clustered", "loss-fully-separated",
                                                "loss-final-layer-separated", "id-embedding"};
  const auto add_data = [&](CLI::App* sub, bool with_test) {
    sub->add_option("--train", f.train, "training dataset CSV")->check(CLI::ExistingFile);
    if (with_test) sub->add_option("--test", f.test, "test dataset CSV")->check(CLI::ExistingFile);
    sub->add_option("--data", f.data, "single dataset CSV, split by date")->check(CLI::ExistingFile);
  };
  const auto add_strategy = [&](CLI::App* sub) {
    sub->add_option("--strategy", f.strategy, "model family")->check(CLI::IsMember(strategy_names));
    sub->add_option("--k", f.k, "cluster count: auto or N");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset with planted clusters");
  synth->add_option("--participants", f.participants, "participant count")->check(CLI::PositiveNumber);
  auto* ingest = app.add_subcommand("ingest", "segment a raw CSV and expand confirmed labels");
  ingest->add_option("--input", f.input, "raw dataset CSV")->required()->check(CLI::ExistingFile);
  auto* tune = app.add_subcommand("tune", "grid search over learning rate and dropout");
  add_data(tune, false);
  add_strategy(tune);
  tune->add_option("--folds", f.folds, "cross-validation folds");
  auto* train = app.add_subcommand("train", "fit a strategy and save it");
  add_data(train, true);
  add_strategy(train);
  train->add_option("--grid", f.grid, "grid result whose best config is used")->check(CLI::ExistingFile);
  auto* evaluate = app.add_subcommand("evaluate", "score a saved strategy");
  add_data(evaluate, true);
  evaluate->add_option("--model", f.model, "saved model JSON")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--runs", f.runs, "resampling runs");
  evaluate->add_option("--folds", f.folds, "cross-validation folds");
  evaluate->add_option("--protocol", f.protocol, "resample | cv | fixed")
      ->check(CLI::IsMember({"resample", "cv", "fixed"}));
  auto* cluster = app.add_subcommand("cluster", "route participants by features or by loss");
  add_data(cluster, true);
  cluster->add_option("--by", f.by, "features | loss")->check(CLI::IsMember({"features", "loss"}));
  cluster->add_option("--k", f.k, "cluster count: auto or N");
  auto* tsne = app.add_subcommand("tsne", "t-SNE embedding and loss histogram exports");
  add_data(tsne, true);
  auto* report = app.add_subcommand("report", "combine run reports into a table");
  report->add_option("--input", f.inputs, "run report JSON (repeatable)")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  std::vector<std::string> args(argv + 1, argv + argc);
  CLI::App* sub = app.get_subcommands().front();
  try {
    Config cfg = f.config_path.empty() ? Config{} : load_config(f.config_path);
    if (f.seed) cfg.seed = *f.seed;
    std::string out_dir = cfg.out_dir;
    if (const char* env = std::getenv("ROUTEMLP_OUT_DIR"); env && *env) out_dir = env;
    if (!f.out_dir.empty()) out_dir = f.out_dir;
    cfg.out_dir = out_dir;
    cfg.validate();

    Session s(sub->get_name(), args, cfg, out_dir);
    const auto& name = sub->get_name();
    if (name == "synth") cmd_synth(s, f);
    else if (name == "ingest") cmd_ingest(s, f);
    else if (name == "tune") cmd_tune(s, f);
    else if (name == "train") cmd_train(s, f);
    else if (name == "evaluate") cmd_evaluate(s, f);
    else if (name == "cluster") cmd_cluster(s, f);
    else if (name == "tsne") cmd_tsne(s, f);
    else if (name == "report") cmd_report(s, f);
    for (const auto& p : s.commit()) out << p.string() << '\n';
    return 0;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"routemlp-cli"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace routemlp::cli
