#pragma once

// One INI-style file ([section] key = value) holding every tunable default.
// Command-line flags override individual entries after loading.

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "routemlp/analysis.hpp"
#include "routemlp/eval.hpp"
#include "routemlp/routing.hpp"
#include "routemlp/strategies.hpp"
#include "routemlp/synth.hpp"

namespace routemlp {

struct Config {
  // [run]
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  // [data]
  std::string split_date;  // empty: 80 % of the date span
  int min_segment = 3;
  int half_window = 3;
  // [synth]
  data::SynthConfig synth;
  bool synth_planted = true;  // use the planted three-cluster design
  // [train]
  nn::TrainConfig train;
  // [model]
  strategies::BuildOptions build;
  // [grid]
  std::vector<double> grid_learning_rates{0.001, 0.005, 0.01};
  std::vector<double> grid_dropout_rates{0.0, 0.2, 0.5};
  // [eval]
  int folds = 10;
  int runs = 5;
  eval::ProtocolOptions protocol;
  // [routing]
  std::optional<int> k;  // empty: automatic selection
  int k_min = 2;
  int k_max = 8;
  int k_lo = 2;
  int k_hi = 6;
  int restarts = 10;
  std::optional<int> elbow_epoch;
  strategies::RoutingLevel level = strategies::RoutingLevel::kParticipant;
  bool reassign_common = false;
  // [tsne]
  analysis::TsneOptions tsne;
  int histogram_bins = 20;
  bool tsne_participant_mean = false;

  /// Throws ValidationError on out-of-range values.
  void validate() const;
};

/// Unknown sections or keys are errors; missing keys keep their defaults.
Config parse_config(std::istream& in);
Config load_config(const std::filesystem::path& path);
/// Every key with its current value, in the file format.
std::string render_config(const Config& config);
nlohmann::json to_json(const Config& config);

}  // namespace routemlp
