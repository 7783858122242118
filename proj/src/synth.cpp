#include "routemlp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "routemlp/errors.hpp"
#include "routemlp/rng.hpp"

namespace routemlp::data {
namespace {

using Vec = std::vector<double>;

Vec random_direction(Rng& rng, double length) {
  Vec v(kFeatureCount);
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x = norm > 0.0 ? x * length / norm : 0.0;
  return v;
}

/// Largest-remainder quotas of `total` items over `weights`.
std::vector<int> quotas(int total, const Vec& weights) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<int> out(weights.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  int assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = total * weights[i] / sum;
    out[i] = static_cast<int>(std::floor(exact));
    assigned += out[i];
    remainders.emplace_back(exact - out[i], i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++out[remainders[i].second];
  return out;
}

std::string participant_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "P%03d", i);
  return buf;
}

}  // namespace

void SynthConfig::validate() const {
  if (participants < 1) throw ValidationError("synth: participants must be >= 1");
  if (clusters < 1) throw ValidationError("synth: clusters must be >= 1");
  if (days < 1) throw ValidationError("synth: days must be >= 1");
  parse_date(start_date);
  auto check_matrix = [&](const std::vector<Vec>& m, const char* name) {
    if (m.empty()) return;
    if (m.size() != static_cast<std::size_t>(clusters)) {
      throw ValidationError(std::string("synth: ") + name + " needs one row per cluster");
    }
    for (const auto& row : m) {
      if (row.size() != static_cast<std::size_t>(kFeatureCount)) {
        throw ValidationError(std::string("synth: ") + name + " rows need 20 values");
      }
    }
  };
  check_matrix(cluster_means, "cluster_means");
  check_matrix(episode_shifts, "episode_shifts");
  if (!cluster_weights.empty()) {
    if (cluster_weights.size() != static_cast<std::size_t>(clusters)) {
      throw ValidationError("synth: cluster_weights needs one value per cluster");
    }
    for (double w : cluster_weights) {
      if (!(w > 0.0)) throw ValidationError("synth: cluster weights must be > 0");
    }
  }
  if (!label_noise.empty()) {
    if (label_noise.size() != static_cast<std::size_t>(clusters)) {
      throw ValidationError("synth: label_noise needs one value per cluster");
    }
    for (double p : label_noise) {
      if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("synth: label noise must lie in [0, 1]");
    }
  }
  if (offset_scale < 0.0 || noise_scale < 0.0 || female_noise < 0.0 || male_noise < 0.0 ||
      cluster_separation < 0.0 || episode_shift < 0.0) {
    throw ValidationError("synth: scales must be >= 0");
  }
  if (!(female_fraction >= 0.0 && female_fraction <= 1.0)) {
    throw ValidationError("synth: female_fraction must lie in [0, 1]");
  }
  if (!(episode_rate >= 0.0 && episode_rate <= 100.0)) {
    throw ValidationError("synth: episode_rate must lie in [0, 100]");
  }
  if (!(missing_day_rate >= 0.0 && missing_day_rate < 1.0)) {
    throw ValidationError("synth: missing_day_rate must lie in [0, 1)");
  }
}

SynthResult synth_generate(const SynthConfig& config) {
  config.validate();
  const auto k = static_cast<std::size_t>(config.clusters);

  std::vector<Vec> means = config.cluster_means;
  std::vector<Vec> shifts = config.episode_shifts;
  {
    Rng rng(derive_seed(config.seed, "geometry"));
    if (means.empty()) {
      for (std::size_t c = 0; c < k; ++c) means.push_back(random_direction(rng, config.cluster_separation));
    }
    if (shifts.empty()) {
      for (std::size_t c = 0; c < k; ++c) shifts.push_back(random_direction(rng, config.episode_shift));
    }
  }

  const int n = config.participants;
  std::vector<int> cluster_of(static_cast<std::size_t>(n));
  {
    const Vec weights = config.cluster_weights.empty() ? Vec(k, 1.0) : config.cluster_weights;
    const auto sizes = quotas(n, weights);
    std::size_t pos = 0;
    for (std::size_t c = 0; c < k; ++c) {
      for (int i = 0; i < sizes[c]; ++i) cluster_of[pos++] = static_cast<int>(c);
    }
    Rng rng(derive_seed(config.seed, "clusters"));
    rng.shuffle(cluster_of);
  }
  std::vector<Sex> sex_of(static_cast<std::size_t>(n), Sex::kMale);
  {
    const auto females = static_cast<int>(std::lround(config.female_fraction * n));
    for (int i = 0; i < females; ++i) sex_of[static_cast<std::size_t>(i)] = Sex::kFemale;
    Rng rng(derive_seed(config.seed, "sex"));
    rng.shuffle(sex_of);
  }

  const Day start = parse_date(config.start_date);
  const double p_confirm = config.episode_rate / 100.0;
  SynthResult result;
  std::vector<Record> all;
  for (int p = 0; p < n; ++p) {
    const std::string id = participant_name(p);
    const auto c = static_cast<std::size_t>(cluster_of[static_cast<std::size_t>(p)]);
    const Sex sex = sex_of[static_cast<std::size_t>(p)];
    result.true_cluster[id] = static_cast<int>(c);
    Rng rng(derive_seed(config.seed, "participant/" + id));

    Vec offset(kFeatureCount);
    for (auto& x : offset) x = config.offset_scale * rng.normal();

    std::vector<Day> present;
    for (int d = 0; d < config.days; ++d) {
      if (config.missing_day_rate > 0.0 && rng.bernoulli(config.missing_day_rate)) continue;
      present.push_back(start + std::chrono::days{d});
    }
    std::vector<Day> confirmed;
    for (Day d : present) {
      if (p_confirm > 0.0 && rng.bernoulli(p_confirm)) confirmed.push_back(d);
    }
    if (!confirmed.empty()) result.confirmed_days[id] = confirmed;

    std::vector<Record> rows;
    for (Day d : present) {
      Record r;
      r.participant_id = id;
      r.date = d;
      r.sex = sex;
      rows.push_back(std::move(r));
    }
    // Label windows are clipped to each consecutive run of present days.
    Dataset own(std::move(rows));
    const auto runs = segment_by_gaps(own, 1);
    const double noise = config.noise_scale *
                         (sex == Sex::kFemale ? config.female_noise : config.male_noise);
    const double flip = config.label_noise.empty() ? 0.0 : config.label_noise[c];
    for (const auto& run : runs.segments) {
      std::vector<Day> inside;
      for (Day d : confirmed) {
        if (d >= run.start() && d <= run.end()) inside.push_back(d);
      }
      auto labeled = expand_labels(run, inside);
      for (auto& r : labeled.records) {
        for (int j = 0; j < kFeatureCount; ++j) {
          const auto jj = static_cast<std::size_t>(j);
          double v = means[c][jj] + offset[jj] + noise * rng.normal();
          if (r.label == 1) v += shifts[c][jj];
          r.features[jj] = v;
        }
        if (flip > 0.0 && rng.bernoulli(flip)) r.label = 1 - r.label;
        all.push_back(std::move(r));
      }
    }
  }
  result.dataset = Dataset(std::move(all));
  return result;
}

SynthConfig planted_heterogeneity(int participants, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.participants = participants;
  cfg.clusters = 3;
  cfg.seed = seed;
  const double step = 1.2;
  Vec u(kFeatureCount, 0.0);
  Vec v(kFeatureCount, 0.0);
  for (int j = 0; j < 5; ++j) {
    u[static_cast<std::size_t>(j)] = step;
    v[static_cast<std::size_t>(j + 5)] = step;
  }
  Vec zero(kFeatureCount, 0.0);
  Vec neg_u = u;
  Vec neg_v = v;
  Vec uv = u;
  for (auto& x : neg_u) x = -x;
  for (auto& x : neg_v) x = -x;
  for (std::size_t j = 0; j < uv.size(); ++j) uv[j] += v[j];
  cfg.cluster_means = {zero, u, v};
  cfg.episode_shifts = {uv, neg_u, neg_v};
  cfg.cluster_weights = {0.5, 0.25, 0.25};
  return cfg;
}

std::string ground_truth_csv(const SynthResult& result) {
  std::string out = "participant_id,true_cluster\n";
  for (const auto& [id, c] : result.true_cluster) {
    out += id + "," + std::to_string(c) + "\n";
  }
  return out;
}

}  // namespace routemlp::data
