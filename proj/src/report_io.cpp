#include <cstdio>
#include <sstream>

#include "routemlp/errors.hpp"
#include "routemlp/eval.hpp"

namespace routemlp::eval {
namespace {

nlohmann::json confusion_json(const Confusion& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

Confusion confusion_from(const nlohmann::json& j) {
  return {j.at("tp").get<long>(), j.at("fp").get<long>(), j.at("fn").get<long>(),
          j.at("tn").get<long>()};
}

std::string group_key(std::size_t g) {
  std::string s = kGroupNames[g];
  s[0] = static_cast<char>(s[0] - 'A' + 'a');
  return s;
}

nlohmann::json grid_json(const std::array<std::array<double, 3>, 3>& cells) {
  nlohmann::json j;
  for (std::size_t g = 0; g < 3; ++g) {
    j[group_key(g)] = {{"precision", cells[g][kPrecision]},
                       {"sensitivity", cells[g][kSensitivity]},
                       {"accuracy", cells[g][kAccuracy]}};
  }
  return j;
}

std::array<std::array<double, 3>, 3> grid_from(const nlohmann::json& j) {
  std::array<std::array<double, 3>, 3> out{};
  for (std::size_t g = 0; g < 3; ++g) {
    const auto& x = j.at(group_key(g));
    out[g] = {x.at("precision").get<double>(), x.at("sensitivity").get<double>(),
              x.at("accuracy").get<double>()};
  }
  return out;
}

std::vector<std::string> header() {
  std::vector<std::string> cols{"strategy"};
  for (const char* m : kMetricNames) {
    for (const char* g : kGroupNames) cols.push_back(std::string(m) + " " + g);
  }
  return cols;
}

std::vector<std::string> row(const RunReport& r) {
  std::vector<std::string> cells{r.strategy};
  for (std::size_t m = 0; m < 3; ++m) {
    for (std::size_t g = 0; g < 3; ++g) cells.push_back(format_cell(r.summary.mean[g][m], r.summary.std[g][m]));
  }
  return cells;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

nlohmann::json to_json(const Metrics& m) {
  return {{"precision", m.precision},
          {"sensitivity", m.sensitivity},
          {"accuracy", m.accuracy},
          {"precision_undefined", m.precision_undefined},
          {"sensitivity_undefined", m.sensitivity_undefined},
          {"empty", m.empty}};
}

nlohmann::json to_json(const GroupMetrics& gm) {
  nlohmann::json j;
  for (std::size_t g = 0; g < 3; ++g) {
    auto x = to_json(gm.groups[g]);
    x["confusion"] = confusion_json(gm.confusions[g]);
    j[group_key(g)] = std::move(x);
  }
  return j;
}

namespace {

GroupMetrics group_metrics_from(const nlohmann::json& j) {
  GroupMetrics gm;
  for (std::size_t g = 0; g < 3; ++g) {
    const auto& x = j.at(group_key(g));
    auto& m = gm.groups[g];
    m.precision = x.at("precision").get<double>();
    m.sensitivity = x.at("sensitivity").get<double>();
    m.accuracy = x.at("accuracy").get<double>();
    m.precision_undefined = x.at("precision_undefined").get<bool>();
    m.sensitivity_undefined = x.at("sensitivity_undefined").get<bool>();
    m.empty = x.at("empty").get<bool>();
    gm.confusions[g] = confusion_from(x.at("confusion"));
  }
  return gm;
}

}  // namespace

nlohmann::json to_json(const RunReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    runs.push_back({{"seed", r.run_seeds.at(i)},
                    {"excluded_rows", r.excluded.at(i)},
                    {"metrics", to_json(r.runs[i])}});
  }
  nlohmann::json j{{"format", "routemlp.report/1"},
                   {"strategy", r.strategy},
                   {"kind", r.kind},
                   {"protocol", r.protocol},
                   {"seed", r.seed},
                   {"std", "population"},
                   {"runs", std::move(runs)},
                   {"mean", grid_json(r.summary.mean)},
                   {"stddev", grid_json(r.summary.std)}};
  j["pooled"] = r.pooled ? to_json(*r.pooled) : nlohmann::json();
  return j;
}

RunReport run_report_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "routemlp.report/1") throw ValidationError("not a run report");
  RunReport r;
  r.strategy = j.at("strategy").get<std::string>();
  r.kind = j.at("kind").get<std::string>();
  r.protocol = j.at("protocol").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& run : j.at("runs")) {
    r.run_seeds.push_back(run.at("seed").get<std::uint64_t>());
    r.excluded.push_back(run.at("excluded_rows").get<std::size_t>());
    r.runs.push_back(group_metrics_from(run.at("metrics")));
  }
  r.summary.mean = grid_from(j.at("mean"));
  r.summary.std = grid_from(j.at("stddev"));
  if (j.contains("pooled") && !j["pooled"].is_null()) r.pooled = group_metrics_from(j["pooled"]);
  return r;
}

nlohmann::json to_json(const GridResult& g) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : g.entries) {
    entries.push_back({{"learning_rate", e.point.learning_rate},
                       {"dropout_rate", e.point.dropout_rate},
                       {"fold_losses", e.fold_losses},
                       {"mean_loss", e.mean_loss}});
  }
  return {{"format", "routemlp.grid/1"},
          {"seed", g.seed},
          {"folds", g.folds},
          {"entries", std::move(entries)},
          {"chosen", g.chosen},
          {"best", {{"learning_rate", g.best().learning_rate}, {"dropout_rate", g.best().dropout_rate}}}};
}

GridResult grid_result_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "routemlp.grid/1") throw ValidationError("not a grid result");
  GridResult g;
  g.seed = j.at("seed").get<std::uint64_t>();
  g.folds = j.at("folds").get<int>();
  for (const auto& e : j.at("entries")) {
    g.entries.push_back({{e.at("learning_rate").get<double>(), e.at("dropout_rate").get<double>()},
                         e.at("fold_losses").get<std::vector<double>>(),
                         e.at("mean_loss").get<double>()});
  }
  g.chosen = j.at("chosen").get<std::size_t>();
  if (g.chosen >= g.entries.size()) throw ValidationError("grid result: chosen index out of range");
  return g;
}

std::string format_cell(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f(%.2f)", mean, std);
  return buf;
}

std::string table_csv(std::span<const RunReport> reports) {
  std::ostringstream out;
  const auto write = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << csv_field(cells[i]);
    out << '\n';
  };
  write(header());
  for (const auto& r : reports) write(row(r));
  return out.str();
}

std::string table_markdown(std::span<const RunReport> reports) {
  std::ostringstream out;
  const auto write = [&](const std::vector<std::string>& cells) {
    out << '|';
    for (const auto& c : cells) out << ' ' << c << " |";
    out << '\n';
  };
  const auto h = header();
  write(h);
  out << '|';
  for (std::size_t i = 0; i < h.size(); ++i) out << (i ? " ---: |" : " --- |");
  out << '\n';
  for (const auto& r : reports) write(row(r));
  return out.str();
}

}  // namespace routemlp::eval
