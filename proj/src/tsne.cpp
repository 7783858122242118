#include <cmath>
#include <limits>

#include "routemlp/analysis.hpp"
#include "routemlp/errors.hpp"
#include "routemlp/rng.hpp"

namespace routemlp::analysis {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd squared_distances(const MatrixXd& points) {
  const Index n = points.rows();
  MatrixXd d(n, n);
  for (Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Index j = i + 1; j < n; ++j) {
      d(i, j) = d(j, i) = (points.row(i) - points.row(j)).squaredNorm();
    }
  }
  return d;
}

namespace {

struct RowFit {
  double perplexity;
  double beta;
};

// Fills p with the Gaussian affinities of row i at `beta` and returns the
// perplexity exp(H) of the row.
double row_perplexity(const MatrixXd& d, Index i, double beta, double shift, Eigen::Ref<VectorXd> p) {
  double sum = 0.0;
  double weighted = 0.0;
  for (Index j = 0; j < d.cols(); ++j) {
    if (j == i) {
      p(j) = 0.0;
      continue;
    }
    const double x = d(i, j) - shift;
    p(j) = std::exp(-beta * x);
    sum += p(j);
    weighted += p(j) * x;
  }
  p /= sum;
  return std::exp(std::log(sum) + beta * weighted / sum);
}

}  // namespace

ConditionalP conditional_affinities(const MatrixXd& d, double perplexity, double tolerance) {
  const Index n = d.rows();
  if (d.cols() != n) throw ShapeError("conditional_affinities: distance matrix must be square");
  if (n < 2) throw ValidationError("conditional_affinities: need at least two points");
  if (!(perplexity >= 1.0) || perplexity > static_cast<double>(n - 1)) {
    throw ValidationError("conditional_affinities: perplexity infeasible for n=" + std::to_string(n));
  }
  ConditionalP out{MatrixXd::Zero(n, n), VectorXd(n), VectorXd(n)};
  VectorXd p(n);
  for (Index i = 0; i < n; ++i) {
    double shift = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < n; ++j) {
      if (j != i) shift = std::min(shift, d(i, j));
    }
    double beta = 1.0;
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    double perp = row_perplexity(d, i, beta, shift, p);
    for (int it = 0; it < 1000 && std::abs(perp - perplexity) > tolerance; ++it) {
      if (perp > perplexity) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
      perp = row_perplexity(d, i, beta, shift, p);
    }
    if (std::abs(perp - perplexity) > tolerance) {
      throw NumericError("conditional_affinities: row " + std::to_string(i) +
                         " cannot reach the target perplexity");
    }
    out.p.row(i) = p.transpose();
    out.beta(i) = beta;
    out.perplexity(i) = perp;
  }
  return out;
}

MatrixXd joint_affinities(const ConditionalP& conditional) {
  const auto& p = conditional.p;
  return (p + p.transpose()) / (2.0 * static_cast<double>(p.rows()));
}

double kl_divergence(const MatrixXd& joint_p, const MatrixXd& embedding) {
  const MatrixXd d = squared_distances(embedding);
  const Index n = d.rows();
  double z = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i != j) z += 1.0 / (1.0 + d(i, j));
    }
  }
  double kl = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double p = joint_p(i, j);
      if (i == j || p <= 0.0) continue;
      const double q = std::max(1.0 / (1.0 + d(i, j)) / z, 1e-300);
      kl += p * std::log(p / q);
    }
  }
  return kl;
}

TsneResult tsne_embed(const MatrixXd& points, const TsneOptions& o) {
  const Index n = points.rows();
  if (n < 5) throw ValidationError("tsne_embed: need at least 5 points");
  if (!(o.perplexity < static_cast<double>(n - 1) / 3.0)) {
    throw ValidationError("tsne_embed: perplexity must be < (n-1)/3");
  }
  if (o.iterations < 1 || o.learning_rate <= 0.0) {
    throw ValidationError("tsne_embed: iterations and learning rate must be positive");
  }
  if (!points.allFinite()) throw ValidationError("tsne_embed: non-finite input");

  TsneResult result;
  result.conditional = conditional_affinities(squared_distances(points), o.perplexity,
                                              o.perplexity_tolerance);
  MatrixXd p = joint_affinities(result.conditional).cwiseMax(1e-12);
  p.diagonal().setZero();

  Rng rng(o.seed);
  MatrixXd y(n, 2);
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < 2; ++c) y(i, c) = 1e-2 * rng.normal();
  }
  MatrixXd update = MatrixXd::Zero(n, 2);
  MatrixXd gains = MatrixXd::Ones(n, 2);
  MatrixXd num(n, n);
  MatrixXd grad(n, 2);

  for (int it = 0; it < o.iterations; ++it) {
    const double exaggeration = it < o.exaggeration_iterations ? o.early_exaggeration : 1.0;
    const double momentum = it < o.momentum_switch ? o.initial_momentum : o.final_momentum;
    double z = 0.0;
    for (Index i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (Index j = i + 1; j < n; ++j) {
        num(i, j) = num(j, i) = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
        z += 2.0 * num(i, j);
      }
    }
    grad.setZero();
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double w = (exaggeration * p(i, j) - num(i, j) / z) * num(i, j);
        grad.row(i) += 4.0 * w * (y.row(i) - y.row(j));
      }
    }
    for (Index i = 0; i < n; ++i) {
      for (Index c = 0; c < 2; ++c) {
        const bool same = (grad(i, c) > 0.0) == (update(i, c) > 0.0);
        gains(i, c) = std::max(same ? gains(i, c) * 0.8 : gains(i, c) + 0.2, o.min_gain);
        update(i, c) = momentum * update(i, c) - o.learning_rate * gains(i, c) * grad(i, c);
      }
    }
    y += update;
    y.rowwise() -= y.colwise().mean();
    if (!y.allFinite()) throw NumericError("tsne_embed: embedding diverged");
    if ((o.kl_every > 0 && (it + 1) % o.kl_every == 0) || it + 1 == o.iterations) {
      result.kl_trace.emplace_back(it + 1, kl_divergence(p, y));
    }
  }
  result.embedding = std::move(y);
  return result;
}

}  // namespace routemlp::analysis
