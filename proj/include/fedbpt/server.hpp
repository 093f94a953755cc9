#pragma once

#include <span>
#include <string_view>

#include "fedbpt/cma.hpp"
#include "fedbpt/messages.hpp"

namespace fedbpt {

enum class AggregatorKind { FedBpt, FedAvgBbt };

std::string_view to_string(AggregatorKind kind);
AggregatorKind aggregator_from_string(std::string_view name);

/// Server-level step length reconstructed from the clients' local steps:
///   2 * sqrt( sum_{k in S'} sum_j sigma_{k,j}^2 / (|S| * lambda_k) ),
/// where S' holds the floor(|S|/2) uploads with the lowest local loss
/// (ties by client id). Floored at sigma_min.
double corrected_sigma(std::span<const ClientResult> results, int local_population, double sigma_min = 1e-12);

/// Server CMA-ES parameters: lambda = |S|, mu = floor(|S|/2), equal weights.
CmaParams<double> server_cma_params(Eigen::Index dim, int num_results);

/// Which step the server's CSA multiplier is applied to when producing the
/// next broadcast step. The corrected step always normalizes the update.
enum class ServerStepRule {
  Broadcast,  // sigma_{t+1} = sigma_t * csa
  Corrected,  // sigma_{t+1} = sigma'_t * csa; grows by ~sigma'_t / sigma_t per round
};

struct FedBptOptions {
  int local_population = 5;
  ServerStepRule step_rule = ServerStepRule::Broadcast;
  // Debug switch: normalize with the broadcast step instead of the corrected one.
  bool uncorrected_sigma = false;
};

/// Treats the uploaded means as a population scored by their local losses and
/// runs one CMA-ES update with effective step corrected_sigma(). Uploads are
/// ordered by client id before ranking so ties resolve to the lowest id.
SearchDistribution<double> aggregate_fedbpt(const SearchDistribution<double>& state,
                                            std::span<const ClientResult> results, const CmaParams<double>& params,
                                            const FedBptOptions& options);

inline SearchDistribution<double> aggregate_fedbpt(const SearchDistribution<double>& state,
                                                   std::span<const ClientResult> results,
                                                   const FedBptOptions& options = {}) {
  return aggregate_fedbpt(state, results, server_cma_params(state.dim, static_cast<int>(results.size())), options);
}

/// Sample-count weighted average of the clients' final (mean, step, cov).
/// Evolution paths restart at zero.
SearchDistribution<double> aggregate_fedavg_bbt(const SearchDistribution<double>& state,
                                                std::span<const LocalState> locals);

Broadcast make_broadcast(const SearchDistribution<double>& state, int round, const ProjectionSpec& projection);

}  // namespace fedbpt
