#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fedbpt/cma.hpp"
#include "fedbpt/datasets.hpp"
#include "fedbpt/messages.hpp"
#include "fedbpt/oracle.hpp"
#include "fedbpt/rng.hpp"

namespace fedbpt {

struct ClientRoundConfig {
  int local_iterations = 8;  // I
  int population = 5;        // lambda_k
  double mask_rate = 0.4;    // r_p
  double denominator_floor = 1e-8;
  WeightScheme weights = WeightScheme::Equal;
  double sigma_min = 1e-12;

  std::uint64_t global_seed = 0;
  int round = 0;
  int client_id = 0;
};

struct ClientUpdate {
  ClientResult upload;
  LocalState local;
};

/// Replaces exactly round(rate * L) uniformly chosen positions of every sample
/// with uniform tokens from [0, vocab_size). Labels are untouched.
std::vector<Sample> perturb_batch(std::span<const Sample> batch, double rate, int vocab_size, Rng& rng);

/// L_clean / max(L_perturbed, floor) at prompt A z.
double ratio_objective(const Oracle& oracle, const Eigen::MatrixXd& projection, const Eigen::VectorXd& z,
                       std::span<const Sample> clean, std::span<const Sample> perturbed, double floor);

/// Local black-box tuning for one round: I - 1 CMA-ES generations from the
/// broadcast, scored on the whole shard, then the clean loss at the final mean.
ClientUpdate run_client_update(const Broadcast& broadcast, const Shard& shard, const Oracle& oracle,
                               const Eigen::MatrixXd& projection, int vocab_size, const ClientRoundConfig& config);

inline ClientResult run_local_round(const Broadcast& broadcast, const Shard& shard, const Oracle& oracle,
                                    const Eigen::MatrixXd& projection, int vocab_size,
                                    const ClientRoundConfig& config) {
  return run_client_update(broadcast, shard, oracle, projection, vocab_size, config).upload;
}

/// Oracle calls one local round makes.
long client_round_evaluations(const ClientRoundConfig& config);

}  // namespace fedbpt
