#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <doctest.h>

#include "fedbpt/errors.hpp"
#include "fedbpt/server.hpp"

using namespace fedbpt;

namespace {

ClientResult result(int id, double loss, std::vector<double> steps, Eigen::VectorXd z = Eigen::VectorXd::Zero(2),
                    int n = 1) {
  return ClientResult{id, std::move(z), std::move(steps), loss, n};
}

// Straight from the definition: pick the floor(|S|/2) lowest-loss uploads
// (ties by id), sum their squared steps.
double reference_sigma(std::vector<ClientResult> rs, int lambda) {
  std::sort(rs.begin(), rs.end(), [](const auto& a, const auto& b) {
    return a.local_loss != b.local_loss ? a.local_loss < b.local_loss : a.client_id < b.client_id;
  });
  double sum = 0;
  for (std::size_t k = 0; k < rs.size() / 2; ++k)
    for (double s : rs[k].step_lengths) sum += s * s;
  return 2.0 * std::sqrt(sum / (double(rs.size()) * lambda));
}

std::vector<ClientResult> random_results(Rng& rng, int clients, int iterations, int dim = 3) {
  std::vector<ClientResult> rs;
  for (int k = 0; k < clients; ++k) {
    std::vector<double> steps;
    for (int j = 0; j < iterations; ++j) steps.push_back(0.01 + 2 * rng.uniform01());
    Eigen::VectorXd z(dim);
    for (int i = 0; i < dim; ++i) z(i) = rng.normal();
    rs.push_back(result(k, rng.uniform01(), steps, z, 1 + static_cast<int>(rng.uniform_int(0, 20))));
  }
  return rs;
}

}  // namespace

TEST_SUITE("server") {

TEST_CASE("corrected step: uniform steps") {
  std::vector<ClientResult> rs;
  for (int k = 0; k < 10; ++k) rs.push_back(result(k, 0.1 * k, std::vector<double>(8, 1.0)));
  CHECK(std::abs(corrected_sigma(rs, 5) - 2 * std::sqrt(0.8)) <= 1e-12);
}

TEST_CASE("corrected step: two clients") {
  std::vector<ClientResult> rs = {result(0, 0.1, {0.5}), result(1, 0.9, {2.0})};
  CHECK(corrected_sigma(rs, 5) == doctest::Approx(0.3162278).epsilon(1e-7));
  std::swap(rs[0], rs[1]);
  CHECK(corrected_sigma(rs, 5) == doctest::Approx(0.3162278).epsilon(1e-7));
}

TEST_CASE("corrected step: floor and preconditions") {
  std::vector<ClientResult> rs = {result(0, 0.1, {0.0, 0.0}), result(1, 0.2, {0.0, 0.0})};
  CHECK(corrected_sigma(rs, 5) == 1e-12);
  std::vector<ClientResult> one = {result(0, 0.1, {1.0})};
  CHECK_THROWS_AS(corrected_sigma(one, 5), InvalidArgument);
}

TEST_CASE("corrected step: ties resolve to the lower id") {
  std::vector<ClientResult> rs = {result(1, 0.5, {3.0}), result(0, 0.5, {1.0})};
  CHECK(corrected_sigma(rs, 1) == doctest::Approx(2.0 * std::sqrt(1.0 / 2.0)));
}

TEST_CASE("corrected step against the definition, scale-equivariant, permutation-invariant") {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const int clients = 2 + static_cast<int>(rng.uniform_int(0, 12));
    const int iterations = 1 + static_cast<int>(rng.uniform_int(0, 9));
    const int lambda = 1 + static_cast<int>(rng.uniform_int(0, 9));
    auto rs = random_results(rng, clients, iterations);
    const double base = corrected_sigma(rs, lambda);
    REQUIRE(base == doctest::Approx(reference_sigma(rs, lambda)).epsilon(1e-12));

    const double c = std::exp(rng.normal() * 3);
    auto scaled = rs;
    for (auto& r : scaled)
      for (auto& s : r.step_lengths) s *= c;
    REQUIRE(corrected_sigma(scaled, lambda) == doctest::Approx(std::max(c * base, 1e-12)).epsilon(1e-12));

    auto shuffled = rs;
    rng.shuffle(shuffled);
    REQUIRE(corrected_sigma(shuffled, lambda) == base);
  }
}

TEST_CASE("aggregation: tie picks client 0") {
  auto state = init_distribution<double>(2, Eigen::VectorXd::Ones(2), 1.0);
  std::vector<ClientResult> rs = {result(1, 0.3, {1.0}, Eigen::Vector2d(2, 2)),
                                  result(0, 0.3, {1.0}, Eigen::Vector2d(0, 0))};
  const auto next = aggregate_fedbpt(state, rs);
  CHECK(next.mean == Eigen::VectorXd(Eigen::Vector2d(0, 0)));
}

TEST_CASE("aggregation: mean of the two best") {
  auto state = init_distribution<double>(2, Eigen::VectorXd::Zero(2), 1.0);
  std::vector<ClientResult> rs = {result(0, 0.1, {1.0}, Eigen::Vector2d(1, 0)),
                                  result(1, 0.2, {1.0}, Eigen::Vector2d(3, 4)),
                                  result(2, 0.9, {1.0}, Eigen::Vector2d(-5, 5)),
                                  result(3, 0.8, {1.0}, Eigen::Vector2d(9, 9))};
  const auto next = aggregate_fedbpt(state, rs);
  CHECK(next.mean.isApprox(Eigen::Vector2d(2, 2), 1e-12));
  CHECK(next.generation == 1);
}

TEST_CASE("server parameters") {
  const auto p = server_cma_params(500, 10);
  CHECK(p.population == 10);
  CHECK(p.parents == 5);
  CHECK(p.weights.isApprox(Eigen::VectorXd::Constant(5, 0.2)));
  CHECK(server_cma_params(10, 7).parents == 3);
  CHECK_THROWS_AS(server_cma_params(10, 1), InvalidArgument);
}

TEST_CASE("step rules") {
  Rng rng(4);
  auto state = init_distribution<double>(3, Eigen::VectorXd::Zero(3), 0.8);
  const auto rs = random_results(rng, 10, 8);
  const auto params = server_cma_params(3, 10);
  const double sp = corrected_sigma(rs, 5);

  FedBptOptions broadcast_rule;
  const auto a = aggregate_fedbpt(state, rs, params, broadcast_rule);
  CHECK(a.step == doctest::Approx(0.8 * step_size_factor(a, params)));

  FedBptOptions corrected_rule;
  corrected_rule.step_rule = ServerStepRule::Corrected;
  const auto b = aggregate_fedbpt(state, rs, params, corrected_rule);
  CHECK(b.step == doctest::Approx(sp * step_size_factor(b, params)));
  CHECK(a.mean == b.mean);
  CHECK(a.cov == b.cov);

  // Normalizing with the broadcast step scales the whitened displacement up.
  FedBptOptions uncorrected;
  uncorrected.uncorrected_sigma = true;
  const auto c = aggregate_fedbpt(state, rs, params, uncorrected);
  CHECK(c.mean == a.mean);
  CHECK(c.path_step.norm() == doctest::Approx(a.path_step.norm() * sp / 0.8));
}

TEST_CASE("aggregation stress: SPD covariance and finite mean") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const int dim = 1 + static_cast<int>(rng.uniform_int(0, 8));
    auto state = init_distribution<double>(dim, Eigen::VectorXd::Zero(dim), 0.01 + rng.uniform01());
    const double spread = std::pow(10.0, 4 * rng.uniform01() - 3);
    for (int round = 0; round < 10; ++round) {
      auto rs = random_results(rng, 2 + static_cast<int>(rng.uniform_int(0, 10)), 1 + trial % 8, dim);
      for (auto& r : rs) r.final_mean = state.mean + spread * r.final_mean;
      state = aggregate_fedbpt(state, rs);
      REQUIRE(state.mean.allFinite());
      REQUIRE(std::isfinite(state.step));
      REQUIRE(state.step > 0);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(state.cov);
      REQUIRE(es.eigenvalues().minCoeff() > 0);
    }
  }
}

TEST_CASE("direct averaging baseline") {
  auto state = init_distribution<double>(2, Eigen::VectorXd::Zero(2), 1.0);
  state.path_cov.setOnes();
  state.path_step.setOnes();

  LocalState same{Eigen::Vector2d(1, -1), 0.4, Eigen::Matrix2d::Identity() * 2, 5};
  std::vector<LocalState> equal = {same, same, same};
  const auto e = aggregate_fedavg_bbt(state, equal);
  CHECK(e.mean.isApprox(same.mean));
  CHECK(e.step == doctest::Approx(0.4));
  CHECK(e.cov.isApprox(same.cov));
  CHECK(e.path_cov.isZero(0));
  CHECK(e.path_step.isZero(0));

  std::vector<LocalState> weighted = {{Eigen::Vector2d(0, 0), 1.0, Eigen::Matrix2d::Identity(), 1},
                                      {Eigen::Vector2d(4, 4), 3.0, Eigen::Matrix2d::Identity() * 5, 3}};
  const auto w = aggregate_fedavg_bbt(state, weighted);
  CHECK(w.mean.isApprox(Eigen::Vector2d(3, 3)));
  CHECK(w.step == doctest::Approx(2.5));
  CHECK(w.cov.isApprox(Eigen::Matrix2d::Identity() * 4));
}

TEST_CASE("aggregator names") {
  CHECK(to_string(AggregatorKind::FedBpt) == "fedbpt");
  CHECK(to_string(AggregatorKind::FedAvgBbt) == "fedavg_bbt");
  CHECK(aggregator_from_string("fedavg_bbt") == AggregatorKind::FedAvgBbt);
  CHECK_THROWS_AS(aggregator_from_string("fedsgd"), InvalidArgument);
}

TEST_CASE("broadcast carries the state") {
  auto state = init_distribution<double>(3, Eigen::VectorXd::Ones(3), 0.3);
  const ProjectionSpec spec{9, 3, 4, 1.0};
  const auto b = make_broadcast(state, 7, spec);
  CHECK(b.mean == state.mean);
  CHECK(b.step == 0.3);
  CHECK(b.cov == state.cov);
  CHECK(b.round == 7);
  CHECK(b.projection == spec);
}

}  // TEST_SUITE
