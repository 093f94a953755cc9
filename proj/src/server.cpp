#include "fedbpt/server.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedbpt/errors.hpp"

namespace fedbpt {

std::string_view to_string(AggregatorKind kind) {
  return kind == AggregatorKind::FedBpt ? "fedbpt" : "fedavg_bbt";
}

AggregatorKind aggregator_from_string(std::string_view name) {
  if (name == "fedbpt") return AggregatorKind::FedBpt;
  if (name == "fedavg_bbt") return AggregatorKind::FedAvgBbt;
  throw InvalidArgument("unknown aggregator '" + std::string(name) + "' (expected fedbpt or fedavg_bbt)");
}

double corrected_sigma(std::span<const ClientResult> results, int local_population, double sigma_min) {
  if (results.size() < 2) throw InvalidArgument("corrected sigma needs at least two client results");
  if (local_population < 1) throw InvalidArgument("local population must be positive");
  const std::size_t iterations = results.front().step_lengths.size();
  for (const auto& r : results)
    if (r.step_lengths.size() != iterations) throw InvalidArgument("clients report different numbers of step lengths");

  std::vector<const ClientResult*> ranked;
  ranked.reserve(results.size());
  for (const auto& r : results) ranked.push_back(&r);
  std::sort(ranked.begin(), ranked.end(), [](const ClientResult* a, const ClientResult* b) {
    if (a->local_loss != b->local_loss) return a->local_loss < b->local_loss;
    return a->client_id < b->client_id;
  });

  const std::size_t selected = results.size() / 2;
  double sum = 0.0;
  for (std::size_t k = 0; k < selected; ++k)
    for (double s : ranked[k]->step_lengths) sum += s * s;

  const double sigma = 2.0 * std::sqrt(sum / (static_cast<double>(results.size()) * local_population));
  return std::max(sigma, sigma_min);
}

CmaParams<double> server_cma_params(Eigen::Index dim, int num_results) {
  if (num_results < 2) throw InvalidArgument("server aggregation needs at least two client results");
  return make_cma_params<double>(dim, num_results, num_results / 2, WeightScheme::Equal);
}

SearchDistribution<double> aggregate_fedbpt(const SearchDistribution<double>& state,
                                            std::span<const ClientResult> results, const CmaParams<double>& params,
                                            const FedBptOptions& options) {
  if (results.size() < 2) throw InvalidArgument("server aggregation needs at least two client results");

  std::vector<const ClientResult*> by_id;
  for (const auto& r : results) by_id.push_back(&r);
  std::stable_sort(by_id.begin(), by_id.end(),
                   [](const ClientResult* a, const ClientResult* b) { return a->client_id < b->client_id; });

  std::vector<RankedSample<double>> population;
  population.reserve(by_id.size());
  for (const auto* r : by_id) {
    if (r->final_mean.size() != state.dim) throw InvalidArgument("client mean dimension mismatch");
    population.push_back({r->final_mean, r->local_loss});
  }

  const double effective_step =
      options.uncorrected_sigma ? state.step : corrected_sigma(results, options.local_population, params.sigma_min);
  auto next = update(state, population, params, effective_step);
  if (options.step_rule == ServerStepRule::Broadcast)
    next.step = std::max(params.sigma_min, state.step * step_size_factor(next, params));
  return next;
}

SearchDistribution<double> aggregate_fedavg_bbt(const SearchDistribution<double>& state,
                                                std::span<const LocalState> locals) {
  if (locals.empty()) throw InvalidArgument("direct averaging needs at least one client state");
  double total = 0.0;
  for (const auto& l : locals) {
    if (l.mean.size() != state.dim || l.cov.rows() != state.dim || l.cov.cols() != state.dim)
      throw InvalidArgument("client state dimension mismatch");
    if (l.sample_count < 1) throw InvalidArgument("client sample count must be positive");
    total += l.sample_count;
  }

  SearchDistribution<double> next = state;
  next.mean.setZero();
  next.cov.setZero();
  next.step = 0.0;
  for (const auto& l : locals) {
    const double w = l.sample_count / total;
    next.mean += w * l.mean;
    next.step += w * l.step;
    next.cov += w * l.cov;
  }
  next.cov = ((next.cov + next.cov.transpose()) / 2.0).eval();
  next.path_cov.setZero();
  next.path_step.setZero();
  next.generation = state.generation + 1;
  detail::refresh_eigensystem(next, 1e-10);
  return next;
}

Broadcast make_broadcast(const SearchDistribution<double>& state, int round, const ProjectionSpec& projection) {
  return Broadcast{state.mean, state.step, state.cov, round, projection};
}

}  // namespace fedbpt
