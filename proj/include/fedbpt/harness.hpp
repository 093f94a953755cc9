#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fedbpt/client.hpp"
#include "fedbpt/cma.hpp"
#include "fedbpt/datasets.hpp"
#include "fedbpt/oracle.hpp"
#include "fedbpt/server.hpp"
#include "fedbpt/subspace.hpp"
#include "fedbpt/synthetic_plm.hpp"

namespace fedbpt {

enum class OracleKind { Synthetic, Remote };

/// Experiment configuration. JSON keys are the member names.
struct ExperimentConfig {
  // search space; D = prompt_tokens * embed_dim
  int d = 500;
  int prompt_tokens = 5;
  int embed_dim = 128;
  double gamma = 1.0;

  // synthetic task
  int vocab_size = 100;
  int hidden_dim = 32;
  double logit_scale = 10.0;
  int num_classes = 4;
  int seq_len = 16;
  int test_per_class = 100;

  // federation
  int rounds = 100;
  int clients = 10;
  std::string participation = "all";
  PartitionMode partition = PartitionMode::Dirichlet;
  double alpha = 1.0;
  int per_class = 40;

  // local search
  int local_iterations = 8;
  int population = 5;
  double sigma0 = 1.0;
  double r_p = 0.4;

  AggregatorKind aggregator = AggregatorKind::FedBpt;
  bool uncorrected_sigma = false;

  OracleKind oracle = OracleKind::Synthetic;
  std::string endpoint;
  std::string train_path;
  std::string test_path;
  double timeout_s = 30.0;

  std::uint64_t seed = 0;
  std::string out;
  int eval_stride = 1;
  int workers = 1;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Throws InvalidArgument on the first inconsistent field.
void validate(const ExperimentConfig& config);

struct RoundMetrics {
  int round = 0;  // number of completed rounds; 0 is the initial prompt
  std::optional<double> test_accuracy;
  std::optional<double> test_loss;
  std::vector<double> local_losses;  // by client id
  double broadcast_sigma = 0.0;
  std::optional<double> corrected_sigma;
  long uplink_floats = 0;    // per client
  long downlink_floats = 0;  // per client
};

/// Oracle, data and projection an experiment runs against.
struct ExperimentData {
  std::shared_ptr<const Oracle> oracle;
  std::vector<Sample> train_pool;
  std::vector<Sample> test;
  ProjectionSpec projection;
  int vocab_size = 0;
  std::optional<double> floor_accuracy;  // known for generated tasks
};

ExperimentData prepare_experiment(const ExperimentConfig& config);

struct ExperimentResult {
  std::vector<RoundMetrics> metrics;
  SearchDistribution<double> final_state;
  ProjectionSpec projection;
  Eigen::MatrixXi final_confusion;
  std::vector<std::pair<int, Eigen::MatrixXi>> confusions;  // (round, matrix) per evaluated round
  std::optional<double> floor_accuracy;
  long oracle_calls = 0;
};

/// The training loop over prepared data. Writes nothing.
ExperimentResult run_federated(const ExperimentConfig& config, const ExperimentData& data);

/// prepare_experiment + run_federated, then writes metrics.csv,
/// confusion_round<t>.json and final_z.json into config.out when it is set.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Counts by (true label, predicted label).
Eigen::MatrixXi confusion_matrix(const Oracle& oracle, const Eigen::VectorXd& prompt, std::span<const Sample> test);

/// Repeated local rounds by one client that keeps its own state between
/// rounds (no server). Losses are the clean shard loss at the start and after
/// every round.
struct LocalTrainingResult {
  std::vector<double> losses;
  Eigen::VectorXd final_mean;
};
LocalTrainingResult train_single_client(const Shard& shard, const Oracle& oracle, const Eigen::MatrixXd& projection,
                                        int vocab_size, ClientRoundConfig config, int rounds, double sigma0);

// Communication accounting, in floats per client per round.
struct BaselineCount {
  std::string name;
  std::int64_t params = 0;
};

struct BaselineRatio {
  std::string name;
  std::int64_t params = 0;
  double ratio = 0.0;  // params / trainable_params
};

struct CommAccounting {
  std::int64_t uplink_floats = 0;
  std::int64_t downlink_floats = 0;
  std::int64_t trainable_params = 0;
  std::int64_t trainable_vector_bytes = 0;  // d float64 values, the vector alone
  std::int64_t round_bytes = 0;             // (uplink + downlink) float64 values
  std::vector<BaselineRatio> ratios;
};

CommAccounting comm_accounting(std::int64_t d, std::int64_t local_iterations, AggregatorKind aggregator,
                               std::span<const BaselineCount> baselines = {});
CommAccounting comm_accounting(const ExperimentConfig& config, std::span<const BaselineCount> baselines = {});

// Output files.
std::string metrics_csv(std::span<const RoundMetrics> metrics);
nlohmann::json confusion_json(int round, const Eigen::MatrixXi& matrix);
nlohmann::json final_z_json(const Eigen::VectorXd& z, const ProjectionSpec& projection);
/// Inverse of final_z_json.
std::pair<Eigen::VectorXd, ProjectionSpec> parse_final_z(const nlohmann::json& j);

/// SVG line chart of test accuracy per round from metrics.csv contents.
std::string accuracy_svg(const std::string& csv);

}  // namespace fedbpt
