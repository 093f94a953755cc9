#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "fedbpt/errors.hpp"
#include "fedbpt/log.hpp"
#include "fedbpt/rng.hpp"

namespace fedbpt {

/// Everything needed to regenerate the projection A (D x d). Parties exchange
/// this ProjectionSpec rather than the matrix.
struct ProjectionSpec {
  Eigen::Index full_dim = 0;  // D = prompt_tokens * embed_dim
  Eigen::Index sub_dim = 0;   // d
  std::uint64_t seed = 0;
  double gamma = 1.0;

  friend bool operator==(const ProjectionSpec&, const ProjectionSpec&) = default;
};

/// Entries i.i.d. N(0, gamma^2), drawn row-major from Rng(spec.seed).
template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> generate_projection(const ProjectionSpec& spec) {
  if (spec.full_dim < 1 || spec.sub_dim < 1) throw InvalidArgument("projection dimensions must be positive");
  if (spec.sub_dim > spec.full_dim) throw InvalidArgument("projection sub_dim exceeds full_dim");
  if (spec.gamma < 0) throw InvalidArgument("projection scale must be non-negative");
  if (spec.gamma == 0) warn("projection scale gamma is 0: every prompt projects to zero");

  Rng rng(spec.seed);
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> a(spec.full_dim, spec.sub_dim);
  for (Eigen::Index i = 0; i < spec.full_dim; ++i)
    for (Eigen::Index j = 0; j < spec.sub_dim; ++j) a(i, j) = static_cast<Scalar>(spec.gamma * rng.normal());
  return a;
}

/// p = A z.
template <typename MatrixDerived, typename VectorDerived>
auto project(const Eigen::MatrixBase<MatrixDerived>& a, const Eigen::MatrixBase<VectorDerived>& z) {
  if (a.cols() != z.size()) throw InvalidArgument("projection shape mismatch: A has " + std::to_string(a.cols()) +
                                                  " columns, z has " + std::to_string(z.size()) + " entries");
  using Scalar = typename MatrixDerived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> p = a * z;
  return p;
}

}  // namespace fedbpt
