#pragma once

// K-means with k-means++ restarts, silhouette scoring, WCSS curves and
// chord-distance knee detection. Points are the rows of a dense matrix.

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace routemlp::clustering {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Per-feature z-scoring with population standard deviation.
/// Zero-variance features keep std = 1 and are flagged degenerate.
struct Standardizer {
  VectorXd mean;
  VectorXd stddev;
  std::vector<bool> degenerate;

  MatrixXd apply(const MatrixXd& points) const;
  Index dim() const { return mean.size(); }
};

Standardizer standardize_fit(const MatrixXd& points);
inline MatrixXd standardize_apply(const Standardizer& s, const MatrixXd& points) {
  return s.apply(points);
}

struct KMeansModel {
  int k = 0;
  MatrixXd centroids;  // [k x d]
  double inertia = 0.0;
  std::uint64_t seed = 0;
  int restarts = 0;
  /// Scaling applied to raw features before they reach the centroids' space.
  std::optional<Standardizer> standardizer;

  // Fit diagnostics, not serialized.
  std::vector<int> assignments;
  std::vector<double> restart_inertias;
  std::vector<double> inertia_history;  // best restart, one entry per Lloyd assignment
};

/// Number of pairwise-distinct rows.
std::size_t distinct_rows(const MatrixXd& points);

/// Lloyd iterations from k-means++ seeds until the assignment stops changing
/// (or max_iter), best of `restarts` by WCSS; earlier restarts win ties.
KMeansModel kmeans_fit(const MatrixXd& points, int k, int restarts, std::uint64_t seed,
                       int max_iter = 300);

/// Nearest centroid by Euclidean distance; ties go to the lowest cluster id.
std::vector<int> kmeans_predict(const KMeansModel& model, const MatrixXd& points);

/// Within-cluster sum of squares of `assignments` around their means.
double wcss(const MatrixXd& points, std::span<const int> assignments);

/// Mean silhouette. Points alone in their cluster score 0.
double silhouette(const MatrixXd& points, std::span<const int> assignments);

enum class ChosenBy { kSilhouette, kElbow, kManual };

struct KSelection {
  int k_min = 0;
  int k_max = 0;
  std::vector<double> silhouette;  // per k in [k_min, k_max], empty if not computed
  std::vector<double> wcss;        // per k in [k_min, k_max]
  int chosen_k = 0;
  ChosenBy chosen_by = ChosenBy::kManual;
  bool no_knee = false;
};

KSelection wcss_curve(const MatrixXd& points, int k_min, int k_max, int restarts,
                      std::uint64_t seed);

struct Knee {
  std::size_t index = 0;
  bool found = false;  // false when every point lies on the chord
  double distance = 0.0;
};

/// Index of the point farthest from the chord joining the first and last
/// points, after scaling both axes to [0, 1]. Ties go to the smallest index.
Knee knee(std::span<const double> values);

/// Best mean silhouette over [k_min, k_max]; ties go to the smaller k.
KSelection select_k_silhouette(const MatrixXd& points, int k_min, int k_max, int restarts,
                               std::uint64_t seed);

/// Knee of the WCSS curve over [k_min, k_max], clamped to [k_lo, k_hi].
/// Without a knee the result is k_lo and `no_knee` is set.
KSelection select_k_elbow(const MatrixXd& points, int k_min, int k_max, int k_lo, int k_hi,
                          int restarts, std::uint64_t seed);

nlohmann::json to_json(const Standardizer& s);
Standardizer standardizer_from_json(const nlohmann::json& j);
nlohmann::json to_json(const KMeansModel& model);
KMeansModel kmeans_from_json(const nlohmann::json& j);
nlohmann::json to_json(const KSelection& sel);

}  // namespace routemlp::clustering
