#pragma once

// CMA-ES search distribution and its update, shared by the clients' local
// search and the server-level aggregation. Notation follows Hansen's CMA-ES
// tutorial: mean m, step sigma, covariance C, paths p_c and p_sigma.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fedbpt/errors.hpp"
#include "fedbpt/rng.hpp"

namespace fedbpt {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

enum class WeightScheme { Equal, Logarithmic };

template <typename Scalar = double>
struct CmaParams {
  int population = 1;  // lambda
  int parents = 1;     // mu
  Vector<Scalar> weights;
  Scalar mu_eff = 1;
  Scalar c_c = 0;
  Scalar c_sigma = 0;
  Scalar c_1 = 0;
  Scalar c_mu = 0;
  Scalar d_sigma = 1;

  Scalar sigma_min = Scalar(1e-12);
  Scalar regularization = Scalar(1e-10);
  // Generations between eigendecompositions of C; 1 recomputes every update.
  int eigen_refresh_interval = 1;
  // When set, p_c accumulates C^{-1/2}-whitened displacements (the server
  // derivation's form). Otherwise p_c follows the tutorial and is unwhitened.
  bool whiten_cov_path = true;
};

template <typename Scalar = double>
struct SearchDistribution {
  Eigen::Index dim = 0;
  Vector<Scalar> mean;
  Scalar step = 1;
  Matrix<Scalar> cov;
  Vector<Scalar> path_cov;
  Vector<Scalar> path_step;
  std::int64_t generation = 0;

  // cov == eigenbasis * diag(eigenvalues) * eigenbasis^T as of the last refresh.
  Matrix<Scalar> eigenbasis;
  Vector<Scalar> eigenvalues;
};

template <typename Scalar = double>
struct RankedSample {
  Vector<Scalar> point;
  Scalar fitness;
};

/// 4 + floor(3 ln n).
inline int default_population(Eigen::Index dim) {
  return 4 + static_cast<int>(std::floor(3.0 * std::log(static_cast<double>(dim))));
}

/// Recombination weights and learning rates from the tutorial's default
/// formulas. parents == 0 selects floor(population / 2), at least 1.
template <typename Scalar = double>
CmaParams<Scalar> make_cma_params(Eigen::Index dim, int population, int parents = 0,
                                  WeightScheme scheme = WeightScheme::Equal) {
  if (dim < 1) throw InvalidArgument("CMA-ES dimension must be positive");
  if (population < 1) throw InvalidArgument("CMA-ES population must be positive");
  if (parents == 0) parents = std::max(1, population / 2);
  if (parents < 1 || parents > population)
    throw InvalidArgument("CMA-ES parents must lie in [1, population]");

  CmaParams<Scalar> p;
  p.population = population;
  p.parents = parents;
  p.weights.resize(parents);
  if (scheme == WeightScheme::Equal) {
    p.weights.setConstant(Scalar(1) / Scalar(parents));
  } else {
    for (int i = 0; i < parents; ++i)
      p.weights(i) = std::log(Scalar(parents) + Scalar(0.5)) - std::log(Scalar(i + 1));
    p.weights /= p.weights.sum();
  }
  p.mu_eff = Scalar(1) / p.weights.squaredNorm();

  const Scalar n = static_cast<Scalar>(dim);
  const Scalar mu_eff = p.mu_eff;
  p.c_sigma = (mu_eff + 2) / (n + mu_eff + 5);
  p.d_sigma = 1 + 2 * std::max(Scalar(0), std::sqrt((mu_eff - 1) / (n + 1)) - 1) + p.c_sigma;
  p.c_c = (4 + mu_eff / n) / (n + 4 + 2 * mu_eff / n);
  p.c_1 = 2 / ((n + Scalar(1.3)) * (n + Scalar(1.3)) + mu_eff);
  p.c_mu = std::min(Scalar(1) - p.c_1,
                    2 * (mu_eff - 2 + 1 / mu_eff) / ((n + 2) * (n + 2) + mu_eff));
  return p;
}

namespace detail {

// Recomputes the cached eigensystem of dist.cov. A non-SPD covariance gets
// one regularization attempt (cov += eps * I) before giving up.
template <typename Scalar>
void refresh_eigensystem(SearchDistribution<Scalar>& dist, Scalar regularization) {
  for (int attempt = 0; attempt < 2; ++attempt) {
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> solver(dist.cov);
    if (solver.info() == Eigen::Success && solver.eigenvalues().minCoeff() > Scalar(0)) {
      dist.eigenbasis = solver.eigenvectors();
      dist.eigenvalues = solver.eigenvalues();
      return;
    }
    dist.cov.diagonal().array() += regularization;
  }
  throw NumericFailure("covariance is not positive-definite after regularization");
}

template <typename Scalar>
Matrix<Scalar> inverse_sqrt_from(const SearchDistribution<Scalar>& dist) {
  return dist.eigenbasis * dist.eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal() *
         dist.eigenbasis.transpose();
}

}  // namespace detail

template <typename Scalar = double>
SearchDistribution<Scalar> init_distribution(Eigen::Index dim, const Vector<Scalar>& mean0, Scalar sigma0) {
  if (dim < 1) throw InvalidArgument("dimension must be positive");
  if (!(sigma0 > Scalar(0))) throw InvalidArgument("initial step must be positive");
  if (mean0.size() != dim) throw InvalidArgument("initial mean length differs from dimension");

  SearchDistribution<Scalar> dist;
  dist.dim = dim;
  dist.mean = mean0;
  dist.step = sigma0;
  dist.cov = Matrix<Scalar>::Identity(dim, dim);
  dist.path_cov = Vector<Scalar>::Zero(dim);
  dist.path_step = Vector<Scalar>::Zero(dim);
  dist.generation = 0;
  dist.eigenbasis = Matrix<Scalar>::Identity(dim, dim);
  dist.eigenvalues = Vector<Scalar>::Ones(dim);
  return dist;
}

/// Builds a distribution around an externally supplied (mean, step, cov),
/// e.g. a round broadcast. Paths start at zero.
template <typename Scalar = double>
SearchDistribution<Scalar> distribution_from(const Vector<Scalar>& mean, Scalar step, const Matrix<Scalar>& cov,
                                             Scalar regularization = Scalar(1e-10)) {
  if (cov.rows() != mean.size() || cov.cols() != mean.size())
    throw InvalidArgument("covariance shape does not match mean length");
  auto dist = init_distribution<Scalar>(mean.size(), mean, step);
  dist.cov = (cov + cov.transpose()) / Scalar(2);
  detail::refresh_eigensystem(dist, regularization);
  return dist;
}

/// Draws population points mean + step * B D u, u ~ N(0, I), with
/// B D^2 B^T = cov. Coordinates of u are drawn in index order, sample by sample.
template <typename Scalar = double>
std::vector<Vector<Scalar>> sample_population(const SearchDistribution<Scalar>& dist, int population, Rng& rng) {
  if (population < 1) throw InvalidArgument("population must be positive");
  const Matrix<Scalar> factor = dist.eigenbasis * dist.eigenvalues.cwiseSqrt().asDiagonal();
  std::vector<Vector<Scalar>> out;
  out.reserve(static_cast<std::size_t>(population));
  Vector<Scalar> u(dist.dim);
  for (int k = 0; k < population; ++k) {
    for (Eigen::Index i = 0; i < dist.dim; ++i) u(i) = static_cast<Scalar>(rng.normal());
    out.push_back(dist.mean + dist.step * (factor * u));
  }
  return out;
}

/// Symmetric inverse square root of dist.cov, recomputed from cov.
template <typename Scalar = double>
Matrix<Scalar> inverse_sqrt_cov(const SearchDistribution<Scalar>& dist, Scalar regularization = Scalar(1e-10)) {
  SearchDistribution<Scalar> copy;
  copy.cov = dist.cov;
  detail::refresh_eigensystem(copy, regularization);
  return detail::inverse_sqrt_from(copy);
}

/// CSA multiplier exp((c_sigma / d_sigma) * (|p_sigma| / E|N(0, I)| - 1)) for
/// the step-size path of `dist`.
template <typename Scalar = double>
Scalar step_size_factor(const SearchDistribution<Scalar>& dist, const CmaParams<Scalar>& params) {
  const Scalar n = static_cast<Scalar>(dist.dim);
  const Scalar chi_n = std::sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n));
  return std::exp((params.c_sigma / params.d_sigma) * (dist.path_step.norm() / chi_n - 1));
}

/// One CMA-ES generation. effective_step normalizes the mean displacement and
/// the rank-mu steps; the new step is the CSA update applied to it.
template <typename Scalar = double>
SearchDistribution<Scalar> update(const SearchDistribution<Scalar>& dist, std::span<const RankedSample<Scalar>> samples,
                                  const CmaParams<Scalar>& params, Scalar effective_step) {
  const auto mu = static_cast<std::size_t>(params.parents);
  if (samples.size() < mu) throw InvalidArgument("fewer samples than CMA-ES parents");
  if (!(effective_step > Scalar(0)) || !std::isfinite(effective_step))
    throw InvalidArgument("effective step must be positive and finite");
  for (const auto& s : samples) {
    if (!std::isfinite(s.fitness)) throw InvalidArgument("non-finite fitness in CMA-ES update");
    if (s.point.size() != dist.dim) throw InvalidArgument("sample dimension mismatch");
  }

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return samples[a].fitness < samples[b].fitness; });

  const Scalar n = static_cast<Scalar>(dist.dim);
  SearchDistribution<Scalar> next = dist;

  next.mean.setZero();
  for (std::size_t k = 0; k < mu; ++k) next.mean += params.weights(static_cast<Eigen::Index>(k)) * samples[order[k]].point;

  const Vector<Scalar> shift = (next.mean - dist.mean) / effective_step;
  const Matrix<Scalar> inv_sqrt = detail::inverse_sqrt_from(dist);
  const Vector<Scalar> whitened = inv_sqrt * shift;

  const Scalar cs = params.c_sigma;
  next.path_step = (1 - cs) * dist.path_step + std::sqrt(cs * (2 - cs) * params.mu_eff) * whitened;

  const Scalar chi_n = std::sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n));
  const Scalar gen = static_cast<Scalar>(dist.generation + 1);
  const Scalar path_norm = next.path_step.norm();
  const bool stalled =
      path_norm / std::sqrt(1 - std::pow(1 - cs, 2 * gen)) >= (Scalar(1.4) + 2 / (n + 1)) * chi_n;
  const Scalar h_sigma = stalled ? Scalar(0) : Scalar(1);

  const Scalar cc = params.c_c;
  const Vector<Scalar>& cov_direction = params.whiten_cov_path ? whitened : shift;
  next.path_cov = (1 - cc) * dist.path_cov + h_sigma * std::sqrt(cc * (2 - cc) * params.mu_eff) * cov_direction;

  Matrix<Scalar> rank_mu = Matrix<Scalar>::Zero(dist.dim, dist.dim);
  for (std::size_t k = 0; k < mu; ++k) {
    const Vector<Scalar> y = (samples[order[k]].point - dist.mean) / effective_step;
    rank_mu.noalias() += params.weights(static_cast<Eigen::Index>(k)) * y * y.transpose();
  }
  const Scalar c1 = params.c_1;
  const Scalar cmu = params.c_mu;
  const Scalar decay = 1 - c1 - cmu * params.weights.sum() + (1 - h_sigma) * c1 * cc * (2 - cc);
  next.cov = decay * dist.cov + c1 * next.path_cov * next.path_cov.transpose() + cmu * rank_mu;
  next.cov = ((next.cov + next.cov.transpose()) / Scalar(2)).eval();

  next.step = effective_step * step_size_factor(next, params);
  if (!(next.step >= params.sigma_min)) next.step = params.sigma_min;

  next.generation = dist.generation + 1;
  const int interval = std::max(1, params.eigen_refresh_interval);
  if (next.generation % interval == 0) detail::refresh_eigensystem(next, params.regularization);
  return next;
}

template <typename Scalar = double>
SearchDistribution<Scalar> update(const SearchDistribution<Scalar>& dist, const std::vector<RankedSample<Scalar>>& samples,
                                  const CmaParams<Scalar>& params, Scalar effective_step) {
  return update(dist, std::span<const RankedSample<Scalar>>(samples), params, effective_step);
}

}  // namespace fedbpt
