#include "routemlp/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "routemlp/errors.hpp"

namespace routemlp {
namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

std::string show(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return {buf, r.ptr};
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto t = trim(text);
  const auto r = std::from_chars(t.data(), t.data() + t.size(), value);
  if (r.ec != std::errc() || r.ptr != t.data() + t.size()) {
    throw ValidationError("config: " + key + " = '" + text + "' is not a valid number");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const auto t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ValidationError("config: " + key + " = '" + text + "' is not a boolean");
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!trim(item).empty()) out.push_back(parse_number<double>(key, item));
  }
  return out;
}

std::string show_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + show(v[i]);
  return out;
}

std::optional<int> parse_auto(const std::string& key, const std::string& text) {
  if (trim(text) == "auto") return std::nullopt;
  return parse_number<int>(key, text);
}

std::string show_auto(const std::optional<int>& v) { return v ? std::to_string(*v) : "auto"; }

struct Binding {
  std::string section;
  std::string key;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&, const std::string&)> set;
};

#define DOUBLE(sec, name, field)                                                   \
  Binding {                                                                        \
    sec, name, [](const Config& c) { return show(c.field); },                      \
        [](Config& c, const std::string& k, const std::string& v) {               \
          c.field = parse_number<double>(k, v);                                    \
        }                                                                          \
  }
#define INT(sec, name, field)                                                      \
  Binding {                                                                        \
    sec, name, [](const Config& c) { return std::to_string(c.field); },            \
        [](Config& c, const std::string& k, const std::string& v) {               \
          c.field = parse_number<decltype(c.field)>(k, v);                         \
        }                                                                          \
  }
#define BOOL(sec, name, field)                                                     \
  Binding {                                                                        \
    sec, name, [](const Config& c) { return std::string(c.field ? "true" : "false"); }, \
        [](Config& c, const std::string& k, const std::string& v) { c.field = parse_bool(k, v); } \
  }
#define STRING(sec, name, field)                                                   \
  Binding {                                                                        \
    sec, name, [](const Config& c) { return c.field; },                            \
        [](Config& c, const std::string&, const std::string& v) { c.field = trim(v); } \
  }

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table{
      INT("run", "seed", seed),
      STRING("run", "out_dir", out_dir),

      STRING("data", "split_date", split_date),
      INT("data", "min_segment", min_segment),
      INT("data", "half_window", half_window),

      BOOL("synth", "planted", synth_planted),
      INT("synth", "participants", synth.participants),
      INT("synth", "clusters", synth.clusters),
      INT("synth", "days", synth.days),
      STRING("synth", "start_date", synth.start_date),
      DOUBLE("synth", "cluster_separation", synth.cluster_separation),
      DOUBLE("synth", "episode_shift", synth.episode_shift),
      DOUBLE("synth", "offset_scale", synth.offset_scale),
      DOUBLE("synth", "noise_scale", synth.noise_scale),
      DOUBLE("synth", "female_noise", synth.female_noise),
      DOUBLE("synth", "male_noise", synth.male_noise),
      DOUBLE("synth", "female_fraction", synth.female_fraction),
      DOUBLE("synth", "episode_rate", synth.episode_rate),
      DOUBLE("synth", "missing_day_rate", synth.missing_day_rate),
      Binding{"synth", "label_noise", [](const Config& c) { return show_list(c.synth.label_noise); },
              [](Config& c, const std::string& k, const std::string& v) {
                c.synth.label_noise = parse_list(k, v);
              }},
      Binding{"synth", "cluster_weights",
              [](const Config& c) { return show_list(c.synth.cluster_weights); },
              [](Config& c, const std::string& k, const std::string& v) {
                c.synth.cluster_weights = parse_list(k, v);
              }},

      DOUBLE("train", "learning_rate", train.learning_rate),
      DOUBLE("train", "dropout_rate", train.dropout_rate),
      INT("train", "epochs", train.epochs),
      INT("train", "batch_size", train.batch_size),
      DOUBLE("train", "beta1", train.beta1),
      DOUBLE("train", "beta2", train.beta2),
      DOUBLE("train", "epsilon", train.epsilon),
      Binding{"train", "loss_recording",
              [](const Config& c) {
                return std::string(c.train.recording == nn::LossRecording::kBatchPreUpdate
                                       ? "batch-pre-update"
                                       : "epoch-end-pass");
              },
              [](Config& c, const std::string& k, const std::string& v) {
                const auto t = trim(v);
                if (t == "batch-pre-update") c.train.recording = nn::LossRecording::kBatchPreUpdate;
                else if (t == "epoch-end-pass") c.train.recording = nn::LossRecording::kEpochEndPass;
                else throw ValidationError("config: " + k + " must be batch-pre-update or epoch-end-pass");
              }},

      Binding{"model", "hidden",
              [](const Config& c) {
                std::string out;
                for (std::size_t i = 0; i < c.build.hidden.size(); ++i) {
                  out += (i ? "," : "") + std::to_string(c.build.hidden[i]);
                }
                return out;
              },
              [](Config& c, const std::string& k, const std::string& v) {
                c.build.hidden.clear();
                for (double x : parse_list(k, v)) c.build.hidden.push_back(static_cast<nn::Index>(x));
              }},
      INT("model", "embedding_dim", build.embedding_dim),
      DOUBLE("model", "embedding_init", build.embedding_init),

      Binding{"grid", "learning_rates", [](const Config& c) { return show_list(c.grid_learning_rates); },
              [](Config& c, const std::string& k, const std::string& v) {
                c.grid_learning_rates = parse_list(k, v);
              }},
      Binding{"grid", "dropout_rates", [](const Config& c) { return show_list(c.grid_dropout_rates); },
              [](Config& c, const std::string& k, const std::string& v) {
                c.grid_dropout_rates = parse_list(k, v);
              }},

      INT("eval", "folds", folds),
      INT("eval", "runs", runs),
      DOUBLE("eval", "val_fraction", protocol.val_fraction),
      DOUBLE("eval", "resample_fraction", protocol.resample_fraction),
      BOOL("eval", "disjoint_folds", protocol.disjoint_folds),
      BOOL("eval", "stratified_split", protocol.stratified_split),
      BOOL("eval", "pooled", protocol.pooled),

      Binding{"routing", "k", [](const Config& c) { return show_auto(c.k); },
              [](Config& c, const std::string& k, const std::string& v) { c.k = parse_auto(k, v); }},
      INT("routing", "k_min", k_min),
      INT("routing", "k_max", k_max),
      INT("routing", "k_lo", k_lo),
      INT("routing", "k_hi", k_hi),
      INT("routing", "restarts", restarts),
      Binding{"routing", "elbow_epoch", [](const Config& c) { return show_auto(c.elbow_epoch); },
              [](Config& c, const std::string& k, const std::string& v) {
                c.elbow_epoch = parse_auto(k, v);
              }},
      Binding{"routing", "level",
              [](const Config& c) {
                return std::string(c.level == strategies::RoutingLevel::kRow ? "row" : "participant");
              },
              [](Config& c, const std::string& k, const std::string& v) {
                const auto t = trim(v);
                if (t == "row") c.level = strategies::RoutingLevel::kRow;
                else if (t == "participant") c.level = strategies::RoutingLevel::kParticipant;
                else throw ValidationError("config: " + k + " must be participant or row");
              }},
      BOOL("routing", "reassign_common", reassign_common),

      DOUBLE("tsne", "perplexity", tsne.perplexity),
      INT("tsne", "iterations", tsne.iterations),
      DOUBLE("tsne", "early_exaggeration", tsne.early_exaggeration),
      INT("tsne", "exaggeration_iterations", tsne.exaggeration_iterations),
      DOUBLE("tsne", "learning_rate", tsne.learning_rate),
      DOUBLE("tsne", "initial_momentum", tsne.initial_momentum),
      DOUBLE("tsne", "final_momentum", tsne.final_momentum),
      INT("tsne", "momentum_switch", tsne.momentum_switch),
      INT("tsne", "histogram_bins", histogram_bins),
      BOOL("tsne", "participant_mean", tsne_participant_mean),
  };
  return table;
}

#undef DOUBLE
#undef INT
#undef BOOL
#undef STRING

}  // namespace

void Config::validate() const {
  train.validate();
  if (min_segment < 1) throw ValidationError("config: data.min_segment must be >= 1");
  if (half_window < 0) throw ValidationError("config: data.half_window must be >= 0");
  if (folds < 2) throw ValidationError("config: eval.folds must be >= 2");
  if (runs < 1) throw ValidationError("config: eval.runs must be >= 1");
  if (grid_learning_rates.empty() || grid_dropout_rates.empty()) {
    throw ValidationError("config: grid lists must be non-empty");
  }
  for (double lr : grid_learning_rates) {
    if (!(lr > 0.0)) throw ValidationError("config: grid learning rates must be positive");
  }
  for (double p : grid_dropout_rates) {
    if (!(p >= 0.0 && p < 1.0)) throw ValidationError("config: grid dropout rates must be in [0,1)");
  }
  if (!(protocol.val_fraction > 0.0 && protocol.val_fraction < 1.0)) {
    throw ValidationError("config: eval.val_fraction must be in (0,1)");
  }
  if (!(protocol.resample_fraction > 0.0 && protocol.resample_fraction <= 1.0)) {
    throw ValidationError("config: eval.resample_fraction must be in (0,1]");
  }
  if (k && *k < 1) throw ValidationError("config: routing.k must be >= 1 or auto");
  if (k_min < 2 || k_max < k_min) throw ValidationError("config: need 2 <= k_min <= k_max");
  if (k_lo < 1 || k_hi < k_lo) throw ValidationError("config: need 1 <= k_lo <= k_hi");
  if (restarts < 1) throw ValidationError("config: routing.restarts must be >= 1");
  if (elbow_epoch && (*elbow_epoch < 1 || *elbow_epoch > train.epochs)) {
    throw ValidationError("config: routing.elbow_epoch must be within [1, epochs]");
  }
  if (build.hidden.empty()) throw ValidationError("config: model.hidden must list at least one width");
  for (auto h : build.hidden) {
    if (h < 1) throw ValidationError("config: model.hidden widths must be >= 1");
  }
  if (build.embedding_dim < 1) throw ValidationError("config: model.embedding_dim must be >= 1");
  if (histogram_bins < 1) throw ValidationError("config: tsne.histogram_bins must be >= 1");
  if (!(tsne.perplexity > 0.0) || tsne.iterations < 1) {
    throw ValidationError("config: tsne perplexity and iterations must be positive");
  }
}

Config parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  std::set<std::string> known_sections;
  for (const auto& b : bindings()) known_sections.insert(b.section);
  Config config;
  for (const auto& [section, keys] : tree) {
    if (!known_sections.count(section)) throw ValidationError("config: unknown section [" + section + "]");
    for (const auto& [key, value] : keys) {
      const auto it = std::find_if(bindings().begin(), bindings().end(), [&](const Binding& b) {
        return b.section == section && b.key == key;
      });
      if (it == bindings().end()) throw ValidationError("config: unknown key " + section + "." + key);
      it->set(config, section + "." + key, value.data());
    }
  }
  config.validate();
  return config;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  return parse_config(in);
}

std::string render_config(const Config& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& b : bindings()) {
    if (b.section != section) {
      out << (section.empty() ? "" : "\n") << '[' << b.section << "]\n";
      section = b.section;
    }
    out << b.key << " = " << b.get(config) << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const Config& config) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& b : bindings()) j[b.section][b.key] = b.get(config);
  return j;
}

}  // namespace routemlp
