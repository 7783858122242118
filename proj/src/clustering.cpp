#include "routemlp/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "routemlp/errors.hpp"
#include "routemlp/rng.hpp"
#include "routemlp/snapshot_io.hpp"

namespace routemlp::clustering {
namespace {

std::vector<int> assign_nearest(const MatrixXd& points, const MatrixXd& centroids,
                                std::vector<double>* sq_dist = nullptr) {
  std::vector<int> out(static_cast<std::size_t>(points.rows()), 0);
  if (sq_dist) sq_dist->assign(out.size(), 0.0);
  for (Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_c = 0;
    for (Index c = 0; c < centroids.rows(); ++c) {
      const double d = (points.row(i) - centroids.row(c)).squaredNorm();
      if (d < best) {
        best = d;
        best_c = static_cast<int>(c);
      }
    }
    out[static_cast<std::size_t>(i)] = best_c;
    if (sq_dist) (*sq_dist)[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

MatrixXd plus_plus_seeds(const MatrixXd& points, int k, Rng& rng) {
  const Index n = points.rows();
  MatrixXd centroids(k, points.cols());
  centroids.row(0) = points.row(static_cast<Index>(rng.below(static_cast<std::size_t>(n))));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    d2[static_cast<std::size_t>(i)] = (points.row(i) - centroids.row(0)).squaredNorm();
  }
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (double d : d2) total += d;
    Index pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        target -= d2[static_cast<std::size_t>(i)];
        if (target < 0.0 && d2[static_cast<std::size_t>(i)] > 0.0) {
          pick = i;
          break;
        }
      }
      while (d2[static_cast<std::size_t>(pick)] == 0.0 && pick > 0) --pick;
    }
    centroids.row(c) = points.row(pick);
    for (Index i = 0; i < n; ++i) {
      auto& d = d2[static_cast<std::size_t>(i)];
      d = std::min(d, (points.row(i) - centroids.row(c)).squaredNorm());
    }
  }
  return centroids;
}

/// Means of each cluster. A cluster left empty takes the point farthest from
/// its current centroid, which is moved into it.
MatrixXd update_centroids(const MatrixXd& points, std::vector<int>& assign,
                          const MatrixXd& previous) {
  const Index k = previous.rows();
  for (int guard = 0; guard <= k; ++guard) {
    MatrixXd sums = MatrixXd::Zero(k, points.cols());
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < points.rows(); ++i) {
      const int c = assign[static_cast<std::size_t>(i)];
      sums.row(c) += points.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    Index empty = -1;
    for (Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) {
        empty = c;
        break;
      }
    }
    if (empty < 0) {
      for (Index c = 0; c < k; ++c) sums.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
      return sums;
    }
    // Farthest point among clusters that can spare one.
    MatrixXd means = sums;
    for (Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        means.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
      }
    }
    double far = -1.0;
    Index far_i = -1;
    for (Index i = 0; i < points.rows(); ++i) {
      const int c = assign[static_cast<std::size_t>(i)];
      if (counts[static_cast<std::size_t>(c)] < 2) continue;
      const double d = (points.row(i) - means.row(c)).squaredNorm();
      if (d > far) {
        far = d;
        far_i = i;
      }
    }
    if (far_i < 0) break;
    assign[static_cast<std::size_t>(far_i)] = static_cast<int>(empty);
  }
  throw ValidationError("kmeans: cannot repair empty clusters");
}

struct RestartResult {
  MatrixXd centroids;
  std::vector<int> assign;
  double inertia = 0.0;
  std::vector<double> history;
};

RestartResult lloyd(const MatrixXd& points, int k, Rng& rng, int max_iter) {
  RestartResult r;
  r.centroids = plus_plus_seeds(points, k, rng);
  std::vector<double> d2;
  r.assign = assign_nearest(points, r.centroids, &d2);
  for (int iter = 0; iter < max_iter; ++iter) {
    double inertia = 0.0;
    for (double d : d2) inertia += d;
    r.history.push_back(inertia);
    r.centroids = update_centroids(points, r.assign, r.centroids);
    auto next = assign_nearest(points, r.centroids, &d2);
    if (next == r.assign) break;
    r.assign = std::move(next);
  }
  r.centroids = update_centroids(points, r.assign, r.centroids);
  r.inertia = wcss(points, r.assign);
  return r;
}

}  // namespace

MatrixXd Standardizer::apply(const MatrixXd& points) const {
  if (points.cols() != mean.size()) {
    throw ShapeError("standardize_apply: expected " + std::to_string(mean.size()) +
                     " features, got " + std::to_string(points.cols()));
  }
  MatrixXd out = points.rowwise() - mean.transpose();
  out.array().rowwise() /= stddev.transpose().array();
  return out;
}

Standardizer standardize_fit(const MatrixXd& points) {
  if (points.rows() < 2) throw ValidationError("standardize_fit: need at least 2 points");
  Standardizer s;
  s.mean = points.colwise().mean().transpose();
  s.stddev.resize(points.cols());
  s.degenerate.assign(static_cast<std::size_t>(points.cols()), false);
  for (Index j = 0; j < points.cols(); ++j) {
    const double var = (points.col(j).array() - s.mean(j)).square().mean();
    const double sd = std::sqrt(var);
    if (!(sd > 0.0)) {
      s.stddev(j) = 1.0;
      s.degenerate[static_cast<std::size_t>(j)] = true;
    } else {
      s.stddev(j) = sd;
    }
  }
  return s;
}

std::size_t distinct_rows(const MatrixXd& points) {
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<std::size_t>(points.rows()));
  for (Index i = 0; i < points.rows(); ++i) {
    const Eigen::RowVectorXd row = points.row(i);
    rows.emplace_back(row.data(), row.data() + row.size());
  }
  std::sort(rows.begin(), rows.end());
  return static_cast<std::size_t>(std::unique(rows.begin(), rows.end()) - rows.begin());
}

double wcss(const MatrixXd& points, std::span<const int> assignments) {
  if (static_cast<Index>(assignments.size()) != points.rows()) {
    throw ShapeError("wcss: assignment count differs from point count");
  }
  std::map<int, std::pair<VectorXd, Index>> sums;
  for (Index i = 0; i < points.rows(); ++i) {
    auto [it, inserted] = sums.try_emplace(assignments[static_cast<std::size_t>(i)],
                                           VectorXd::Zero(points.cols()), 0);
    it->second.first += points.row(i).transpose();
    ++it->second.second;
  }
  double total = 0.0;
  for (Index i = 0; i < points.rows(); ++i) {
    const auto& [sum, count] = sums.at(assignments[static_cast<std::size_t>(i)]);
    total += (points.row(i).transpose() - sum / static_cast<double>(count)).squaredNorm();
  }
  return total;
}

KMeansModel kmeans_fit(const MatrixXd& points, int k, int restarts, std::uint64_t seed,
                       int max_iter) {
  if (k < 1) throw ValidationError("kmeans_fit: k must be >= 1");
  if (restarts < 1) throw ValidationError("kmeans_fit: restarts must be >= 1");
  if (max_iter < 1) throw ValidationError("kmeans_fit: max_iter must be >= 1");
  if (points.rows() == 0) throw ValidationError("kmeans_fit: no points");
  if (!points.allFinite()) throw ValidationError("kmeans_fit: non-finite point");
  const std::size_t distinct = distinct_rows(points);
  if (static_cast<std::size_t>(k) > distinct) {
    throw ValidationError("kmeans_fit: k=" + std::to_string(k) + " exceeds " +
                          std::to_string(distinct) + " distinct points");
  }
  KMeansModel model;
  model.k = k;
  model.seed = seed;
  model.restarts = restarts;
  RestartResult best;
  bool have = false;
  for (int r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(seed, "restart", static_cast<std::size_t>(r)));
    RestartResult run = lloyd(points, k, rng, max_iter);
    model.restart_inertias.push_back(run.inertia);
    if (!have || run.inertia < best.inertia) {
      best = std::move(run);
      have = true;
    }
  }
  model.centroids = std::move(best.centroids);
  model.inertia = best.inertia;
  model.assignments = std::move(best.assign);
  model.inertia_history = std::move(best.history);
  return model;
}

std::vector<int> kmeans_predict(const KMeansModel& model, const MatrixXd& points) {
  if (points.cols() != model.centroids.cols()) {
    throw ShapeError("kmeans_predict: points have " + std::to_string(points.cols()) +
                     " dims, centroids " + std::to_string(model.centroids.cols()));
  }
  return assign_nearest(points, model.centroids);
}

double silhouette(const MatrixXd& points, std::span<const int> assignments) {
  const Index n = points.rows();
  if (static_cast<Index>(assignments.size()) != n) {
    throw ShapeError("silhouette: assignment count differs from point count");
  }
  std::map<int, int> dense;
  for (int a : assignments) dense.try_emplace(a, 0);
  if (dense.size() < 2) throw ValidationError("silhouette: need at least 2 clusters");
  int next = 0;
  for (auto& [label, id] : dense) id = next++;
  const auto k = static_cast<std::size_t>(next);
  std::vector<int> ids(static_cast<std::size_t>(n));
  std::vector<Index> sizes(k, 0);
  for (Index i = 0; i < n; ++i) {
    ids[static_cast<std::size_t>(i)] = dense.at(assignments[static_cast<std::size_t>(i)]);
    ++sizes[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])];
  }
  double total = 0.0;
  std::vector<double> dist_sum(k);
  for (Index i = 0; i < n; ++i) {
    const auto own = static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]);
    if (sizes[own] < 2) continue;
    std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      dist_sum[static_cast<std::size_t>(ids[static_cast<std::size_t>(j)])] +=
          (points.row(i) - points.row(j)).norm();
    }
    const double a = dist_sum[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (c != own) b = std::min(b, dist_sum[c] / static_cast<double>(sizes[c]));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

namespace {

std::vector<KMeansModel> fit_range(const MatrixXd& points, int k_min, int k_max, int restarts,
                                   std::uint64_t seed) {
  if (k_min < 1 || k_max < k_min) {
    throw ValidationError("invalid k range [" + std::to_string(k_min) + ", " +
                          std::to_string(k_max) + "]");
  }
  if (static_cast<std::size_t>(k_max) > distinct_rows(points)) {
    throw ValidationError("k_max=" + std::to_string(k_max) +
                          " exceeds the number of distinct points");
  }
  std::vector<KMeansModel> models;
  for (int k = k_min; k <= k_max; ++k) {
    models.push_back(
        kmeans_fit(points, k, restarts, derive_seed(seed, "k", static_cast<std::size_t>(k))));
  }
  return models;
}

KSelection selection_from(const std::vector<KMeansModel>& models, int k_min, int k_max) {
  KSelection sel;
  sel.k_min = k_min;
  sel.k_max = k_max;
  for (const auto& m : models) sel.wcss.push_back(m.inertia);
  return sel;
}

}  // namespace

KSelection wcss_curve(const MatrixXd& points, int k_min, int k_max, int restarts,
                      std::uint64_t seed) {
  return selection_from(fit_range(points, k_min, k_max, restarts, seed), k_min, k_max);
}

Knee knee(std::span<const double> values) {
  if (values.size() < 3) throw ValidationError("knee: need at least 3 values");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  Knee best;
  if (!(range > 0.0)) return best;
  const double last = static_cast<double>(values.size() - 1);
  const double y0 = (values.front() - lo) / range;
  const double y1 = (values.back() - lo) / range;
  // Chord from (0, y0) to (1, y1); distances are compared unnormalized by the chord length.
  const double dy = y1 - y0;
  const double norm = std::sqrt(1.0 + dy * dy);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = static_cast<double>(i) / last;
    const double y = (values[i] - lo) / range;
    const double d = std::abs(dy * x - y + y0) / norm;
    if (d > best.distance) {
      best.distance = d;
      best.index = i;
    }
  }
  best.found = best.distance > 1e-12;
  if (!best.found) {
    best.index = 0;
    best.distance = 0.0;
  }
  return best;
}

KSelection select_k_silhouette(const MatrixXd& points, int k_min, int k_max, int restarts,
                               std::uint64_t seed) {
  if (k_min < 2) throw ValidationError("select_k_silhouette: k_min must be >= 2");
  const auto models = fit_range(points, k_min, k_max, restarts, seed);
  KSelection sel = selection_from(models, k_min, k_max);
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& model : models) {
    const double s = silhouette(points, model.assignments);
    sel.silhouette.push_back(s);
    if (s > best) {
      best = s;
      sel.chosen_k = model.k;
    }
  }
  sel.chosen_by = ChosenBy::kSilhouette;
  return sel;
}

KSelection select_k_elbow(const MatrixXd& points, int k_min, int k_max, int k_lo, int k_hi,
                          int restarts, std::uint64_t seed) {
  KSelection sel = wcss_curve(points, k_min, k_max, restarts, seed);
  sel.chosen_by = ChosenBy::kElbow;
  if (sel.wcss.size() < 3) {
    sel.no_knee = true;
    sel.chosen_k = std::clamp(k_lo, k_min, k_max);
    return sel;
  }
  const Knee kn = knee(sel.wcss);
  sel.no_knee = !kn.found;
  const int k = kn.found ? k_min + static_cast<int>(kn.index) : k_lo;
  sel.chosen_k = std::clamp(k, k_lo, k_hi);
  return sel;
}

nlohmann::json to_json(const Standardizer& s) {
  return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
          {"std", std::vector<double>(s.stddev.data(), s.stddev.data() + s.stddev.size())},
          {"degenerate", s.degenerate}};
}

Standardizer standardizer_from_json(const nlohmann::json& j) {
  Standardizer s;
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto sd = j.at("std").get<std::vector<double>>();
  if (mean.size() != sd.size()) throw ValidationError("standardizer json: length mismatch");
  s.mean = Eigen::Map<const VectorXd>(mean.data(), static_cast<Index>(mean.size()));
  s.stddev = Eigen::Map<const VectorXd>(sd.data(), static_cast<Index>(sd.size()));
  s.degenerate = j.at("degenerate").get<std::vector<bool>>();
  return s;
}

nlohmann::json to_json(const KMeansModel& model) {
  nlohmann::json j{{"k", model.k},
                   {"centroids", io::matrix_to_json(model.centroids)},
                   {"inertia", model.inertia},
                   {"seed", model.seed},
                   {"restarts", model.restarts}};
  j["standardizer"] = model.standardizer ? to_json(*model.standardizer) : nlohmann::json();
  return j;
}

KMeansModel kmeans_from_json(const nlohmann::json& j) {
  KMeansModel m;
  m.k = j.at("k").get<int>();
  m.centroids = io::matrix_from_json(j.at("centroids"));
  m.inertia = j.at("inertia").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.restarts = j.at("restarts").get<int>();
  if (m.k < 1 || m.centroids.rows() != m.k) {
    throw ValidationError("kmeans json: centroid count differs from k");
  }
  if (j.contains("standardizer") && !j["standardizer"].is_null()) {
    m.standardizer = standardizer_from_json(j["standardizer"]);
  }
  return m;
}

nlohmann::json to_json(const KSelection& sel) {
  const char* by = sel.chosen_by == ChosenBy::kSilhouette ? "silhouette"
                   : sel.chosen_by == ChosenBy::kElbow    ? "elbow"
                                                          : "manual";
  return {{"k_min", sel.k_min},   {"k_max", sel.k_max},     {"silhouette", sel.silhouette},
          {"wcss", sel.wcss},     {"chosen_k", sel.chosen_k}, {"chosen_by", by},
          {"no_knee", sel.no_knee}};
}

}  // namespace routemlp::clustering
