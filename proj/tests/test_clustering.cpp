#include <doctest.h>

#include <cmath>
#include <limits>

#include "routemlp/clustering.hpp"
#include "routemlp/errors.hpp"
#include "routemlp/rng.hpp"

using namespace routemlp;
using namespace routemlp::clustering;

namespace {

// Exhaustive optimum over all two-cluster partitions.
double brute_force_wcss2(const MatrixXd& x) {
  const auto n = static_cast<int>(x.rows());
  double best = std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask < (1u << (n - 1)); ++mask) {
    std::vector<int> a(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) a[static_cast<std::size_t>(i)] = (mask >> i) & 1u;
    best = std::min(best, wcss(x, a));
  }
  return best;
}

MatrixXd blobs(const std::vector<std::vector<double>>& centers, int per, double spread, Rng& rng) {
  const auto d = static_cast<Index>(centers[0].size());
  MatrixXd x(static_cast<Index>(centers.size()) * per, d);
  Index r = 0;
  for (const auto& c : centers)
    for (int i = 0; i < per; ++i, ++r)
      for (Index j = 0; j < d; ++j) x(r, j) = c[static_cast<std::size_t>(j)] + spread * rng.normal();
  return x;
}

}  // namespace

TEST_CASE("standardize {1,2,3} uses the population std") {
  MatrixXd x(3, 2);
  x << 1, 5, 2, 5, 3, 5;
  const auto s = standardize_fit(x);
  const auto z = s.apply(x);
  CHECK(z(0, 0) == doctest::Approx(-1.224745).epsilon(1e-6));
  CHECK(z(2, 0) == doctest::Approx(1.224745).epsilon(1e-6));
  CHECK(s.degenerate[1]);
  CHECK(!s.degenerate[0]);
  CHECK(z.col(1).isZero());
  CHECK_THROWS_AS(standardize_fit(MatrixXd::Zero(1, 2)), ValidationError);
}

TEST_CASE("k-means matches the exhaustive two-cluster optimum") {
  Rng rng(17);
  for (int inst = 0; inst < 20; ++inst) {
    const auto n = static_cast<Index>(3 + rng.below(6));
    MatrixXd x(n, 2);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-5, 5);
    const auto model = kmeans_fit(x, 2, 50, static_cast<std::uint64_t>(inst));
    CHECK(std::abs(model.inertia - brute_force_wcss2(x)) < 1e-9);
  }
}

TEST_CASE("k-means is deterministic and WCSS never rises between Lloyd steps") {
  Rng rng(2);
  const auto x = blobs({{0, 0}, {5, 5}, {0, 5}}, 20, 1.0, rng);
  const auto a = kmeans_fit(x, 3, 5, 9);
  const auto b = kmeans_fit(x, 3, 5, 9);
  CHECK(a.centroids == b.centroids);
  CHECK(a.assignments == b.assignments);
  for (std::size_t i = 1; i < a.inertia_history.size(); ++i) {
    CHECK(a.inertia_history[i] <= a.inertia_history[i - 1] + 1e-9);
  }
  CHECK(a.inertia == doctest::Approx(wcss(x, a.assignments)));
  CHECK(kmeans_predict(a, x) == a.assignments);
}

TEST_CASE("k-means preconditions") {
  MatrixXd x(3, 1);
  x << 1, 1, 2;
  CHECK_THROWS_AS(kmeans_fit(x, 3, 2, 0), ValidationError);  // only 2 distinct points
  CHECK_THROWS_AS(kmeans_fit(x, 0, 2, 0), ValidationError);
  CHECK(distinct_rows(x) == 2);
  const auto one = kmeans_fit(x, 1, 1, 0);
  CHECK(one.centroids(0, 0) == doctest::Approx(4.0 / 3.0));
}

TEST_CASE("silhouette of two tight pairs") {
  MatrixXd x(4, 1);
  x << 0, 0.1, 10, 10.1;
  const std::vector<int> a{0, 0, 1, 1};
  CHECK(silhouette(x, a) == doctest::Approx(0.990).epsilon(1e-4));
  // singleton clusters score zero
  const std::vector<int> s{0, 1, 2, 2};
  // nearest other cluster of 10 is {0.1} at 9.9, of 10.1 is {0.1} at 10.0
  const double expected = (0.0 + 0.0 + (1.0 - 0.1 / 9.9) + (1.0 - 0.1 / 10.0)) / 4.0;
  CHECK(silhouette(x, s) == doctest::Approx(expected));
}

TEST_CASE("knee of a bent curve") {
  const std::vector<double> curve{100, 30, 25, 24, 23};
  const auto k = knee(curve);
  CHECK(k.found);
  CHECK(k.index == 1);
  const std::vector<double> line{5, 4, 3, 2, 1};
  const auto flat = knee(line);
  CHECK(!flat.found);
  CHECK(flat.index == 0);
  // affine rescaling of either axis keeps the knee
  std::vector<double> scaled;
  for (double v : curve) scaled.push_back(3.0 * v + 7.0);
  CHECK(knee(scaled).index == 1);
}

TEST_CASE("silhouette picks two blobs, the elbow picks three") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto two = blobs({{0, 0}, {10, 10}}, 15, 0.5, rng);
    CHECK(select_k_silhouette(two, 2, 8, 10, seed).chosen_k == 2);
    const auto three = blobs({{0, 0}, {10, 0}, {5, 9}}, 15, 0.5, rng);
    const auto sel = select_k_elbow(three, 1, 6, 2, 6, 10, seed);
    CHECK(sel.chosen_k == 3);
    CHECK(sel.chosen_by == ChosenBy::kElbow);
  }
}

TEST_CASE("model JSON round-trips") {
  Rng rng(1);
  const auto x = blobs({{0, 0}, {4, 4}}, 5, 0.3, rng);
  auto m = kmeans_fit(x, 2, 3, 1);
  m.standardizer = standardize_fit(x);
  const auto back = kmeans_from_json(to_json(m));
  CHECK(back.centroids == m.centroids);
  CHECK(back.k == 2);
  REQUIRE(back.standardizer);
  CHECK(back.standardizer->mean == m.standardizer->mean);
  CHECK(kmeans_predict(back, x) == kmeans_predict(m, x));
}
