#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "fedbpt/errors.hpp"
#include "fedbpt/harness.hpp"
#include "fedbpt/synthetic_plm.hpp"

using namespace fedbpt;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ExperimentConfig small(int rounds) {
  ExperimentConfig c;
  c.d = 10;
  c.prompt_tokens = 5;
  c.embed_dim = 20;
  c.rounds = rounds;
  c.seed = 21;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("zero rounds evaluates the initial prompt only") {
  const auto c = small(0);
  const auto data = prepare_experiment(c);
  const auto r = run_federated(c, data);
  REQUIRE(r.metrics.size() == 1);
  CHECK(r.metrics[0].round == 0);
  REQUIRE(r.metrics[0].test_accuracy);
  CHECK(*r.metrics[0].test_accuracy == *data.floor_accuracy);
  CHECK(r.final_state.mean.isZero(0));
  CHECK(count_lines(metrics_csv(r.metrics)) == 2);
}

TEST_CASE("metrics rows and strides") {
  auto c = small(5);
  c.eval_stride = 2;
  const auto r = run_federated(c, prepare_experiment(c));
  REQUIRE(r.metrics.size() == 6);
  CHECK(r.metrics[1].test_accuracy.has_value() == false);
  CHECK(r.metrics[2].test_accuracy.has_value());
  CHECK(r.metrics[5].test_accuracy.has_value());
  for (int t = 1; t <= 5; ++t) {
    CHECK(r.metrics[t].round == t);
    CHECK(r.metrics[t].local_losses.size() == 10);
    CHECK(r.metrics[t].corrected_sigma.has_value());
    CHECK(r.metrics[t].uplink_floats == 10 + 8 + 1);
    CHECK(r.metrics[t].downlink_floats == 10 + 100 + 1);
  }
  CHECK(r.confusions.size() == 4);  // rounds 0, 2, 4, 5
  CHECK(r.oracle_calls == 5 * 10 * 71 + 4 * 1);
}

TEST_CASE("identical config gives identical metrics bytes") {
  const auto c = small(3);
  const auto a = run_federated(c, prepare_experiment(c));
  const auto b = run_federated(c, prepare_experiment(c));
  CHECK(metrics_csv(a.metrics) == metrics_csv(b.metrics));
  auto other = c;
  other.seed = 22;
  CHECK(metrics_csv(run_federated(other, prepare_experiment(other)).metrics) != metrics_csv(a.metrics));
}

TEST_CASE("worker threads do not change the result") {
  auto c = small(2);
  c.partition = PartitionMode::Iid;
  const auto data = prepare_experiment(c);
  const auto a = run_federated(c, data);
  c.workers = 4;
  const auto b = run_federated(c, data);
  CHECK(metrics_csv(a.metrics) == metrics_csv(b.metrics));
}

TEST_CASE("direct averaging baseline runs and uploads more") {
  auto c = small(2);
  c.aggregator = AggregatorKind::FedAvgBbt;
  const auto r = run_federated(c, prepare_experiment(c));
  CHECK(r.metrics.back().uplink_floats == 10 + 8 + 1 + 1 + 100);
  CHECK_FALSE(r.metrics.back().corrected_sigma.has_value());
}

TEST_CASE("communication accounting") {
  const std::vector<BaselineCount> baselines = {{"FedPrompt", 51000}, {"FedP-tuning", 15000000}};
  const auto a = comm_accounting(500, 8, AggregatorKind::FedBpt, baselines);
  CHECK(a.uplink_floats == 509);
  CHECK(a.downlink_floats == 500 + 250000 + 1);
  CHECK(a.trainable_params == 500);
  CHECK(a.trainable_vector_bytes == 4000);
  CHECK(a.round_bytes == (509 + 250501) * 8);
  REQUIRE(a.ratios.size() == 2);
  CHECK(a.ratios[0].ratio == 102.0);
  CHECK(a.ratios[1].ratio == 30000.0);
  CHECK(comm_accounting(500, 8, AggregatorKind::FedAvgBbt).uplink_floats == 509 + 1 + 250000);
  CHECK_THROWS_AS(comm_accounting(0, 8, AggregatorKind::FedBpt), InvalidArgument);
}

TEST_CASE("confusion matrices") {
  TaskConfig tc;
  tc.model = SyntheticPlmConfig{100, 20, 5, 32, 4, 10.0};
  const auto task = generate_task(tc, 3);
  const Eigen::VectorXd golden = project(generate_projection(task.projection), task.golden_z);
  const Eigen::MatrixXi perfect = confusion_matrix(task.model, golden, task.test);
  CHECK(perfect.isApprox(Eigen::MatrixXi::Identity(4, 4) * 100));

  const auto flat = SyntheticPLM::degenerate(tc.model);
  const Eigen::MatrixXi constant = confusion_matrix(flat, golden, task.test);
  CHECK(constant.col(0).sum() == 400);
  CHECK(constant.rightCols(3).sum() == 0);

  const auto j = confusion_json(4, perfect);
  CHECK(j.at("round") == 4);
  CHECK(j.at("matrix")[2][2] == 100);
}

TEST_CASE("config JSON") {
  auto c = small(7);
  c.aggregator = AggregatorKind::FedAvgBbt;
  c.partition = PartitionMode::Iid;
  c.r_p = 0.25;
  const auto back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.rounds == 7);
  CHECK(back.aggregator == AggregatorKind::FedAvgBbt);

  CHECK_THROWS_AS(config_from_json(json{{"roundz", 3}}), InvalidArgument);
  CHECK_THROWS_AS(config_from_json(json{{"rounds", "three"}}), InvalidArgument);
  CHECK_THROWS_AS(config_from_json(json::array()), InvalidArgument);

  auto bad = small(1);
  bad.d = 101;
  CHECK_THROWS_AS(validate(bad), InvalidArgument);
  bad = small(1);
  bad.r_p = 1.5;
  CHECK_THROWS_AS(validate(bad), InvalidArgument);
  bad = small(1);
  bad.oracle = OracleKind::Remote;
  CHECK_THROWS_AS(validate(bad), InvalidArgument);
}

TEST_CASE("run_experiment writes its outputs") {
  auto c = small(2);
  c.out = (fs::temp_directory_path() / "fedbpt_harness_out").string();
  fs::remove_all(c.out);
  const auto r = run_experiment(c);
  const fs::path out(c.out);
  CHECK(slurp(out / "metrics.csv") == metrics_csv(r.metrics));
  CHECK(fs::exists(out / "confusion_round0.json"));
  CHECK(fs::exists(out / "confusion_round2.json"));
  const auto [z, spec] = parse_final_z(json::parse(slurp(out / "final_z.json")));
  CHECK(z == r.final_state.mean);
  CHECK(spec == r.projection);
}

TEST_CASE("final_z parsing rejects inconsistent files") {
  auto j = final_z_json(Eigen::Vector3d(1, 2, 3), ProjectionSpec{12, 3, 5, 1.0});
  j["d"] = 4;
  CHECK_THROWS_AS(parse_final_z(j), InvalidArgument);
}

TEST_CASE("accuracy plot") {
  const auto c = small(2);
  const auto r = run_federated(c, prepare_experiment(c));
  const auto svg = accuracy_svg(metrics_csv(r.metrics));
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("<polyline") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
}

}  // TEST_SUITE
