#pragma once

// Synthetic multi-source data with planted participant clusters. Every number
// produced here is synthetic; nothing is calibrated to a real cohort.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "routemlp/data.hpp"

namespace routemlp::data {

struct SynthConfig {
  int participants = 60;
  int clusters = 3;
  int days = 90;
  std::string start_date = "2021-06-28";
  /// Latent cluster feature means, clusters x 20. Empty: random directions of
  /// length `cluster_separation`.
  std::vector<std::vector<double>> cluster_means;
  double cluster_separation = 0.0;
  /// Feature shift applied on labelled days, clusters x 20. Empty: random
  /// directions of length `episode_shift`.
  std::vector<std::vector<double>> episode_shifts;
  double episode_shift = 3.0;
  /// Relative cluster sizes; empty means equal.
  std::vector<double> cluster_weights;
  double offset_scale = 0.3;  // per-participant offset std
  double noise_scale = 1.0;   // per-day noise std before the sex multiplier
  double female_noise = 1.5;
  double male_noise = 1.0;
  double female_fraction = 0.5;
  double episode_rate = 4.0;  // confirmed days per 100 days
  /// Per-cluster probability of flipping each label after expansion.
  std::vector<double> label_noise;
  double missing_day_rate = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthResult {
  Dataset dataset;
  std::map<std::string, int> true_cluster;
  std::map<std::string, std::vector<Day>> confirmed_days;
};

/// Participants draw a latent cluster (balanced quotas), a sex (quota by
/// female_fraction) and an offset. Daily features are cluster mean + offset +
/// sex-scaled noise, shifted by the cluster's episode vector on labelled days.
SynthResult synth_generate(const SynthConfig& config);

/// Three latent clusters whose label/feature relationships conflict: cluster
/// 0 episodes move features along +u+v, cluster 1 sits at +u and its episodes
/// return it to the origin, cluster 2 does the same along v. A single shared
/// model cannot fit clusters 1 and 2 alongside cluster 0.
SynthConfig planted_heterogeneity(int participants, std::uint64_t seed);

/// Sidecar `participant_id,true_cluster`.
std::string ground_truth_csv(const SynthResult& result);

}  // namespace routemlp::data
