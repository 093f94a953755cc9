#include "fedbpt/harness.hpp"

#include <exception>
#include <fstream>
#include <thread>

#include <fmt/format.h>

#include "fedbpt/errors.hpp"
#include "fedbpt/remote_oracle.hpp"
#include "fedbpt/rng.hpp"

namespace fedbpt {
namespace {

using nlohmann::json;

template <typename T>
void read_key(const json& j, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidArgument(fmt::format("config key '{}': {}", key, e.what()));
  }
}

PartitionMode partition_from_string(const std::string& s) {
  if (s == "iid") return PartitionMode::Iid;
  if (s == "dirichlet") return PartitionMode::Dirichlet;
  throw InvalidArgument("unknown partition '" + s + "' (expected iid or dirichlet)");
}

OracleKind oracle_from_string(const std::string& s) {
  if (s == "synthetic") return OracleKind::Synthetic;
  if (s == "remote") return OracleKind::Remote;
  throw InvalidArgument("unknown oracle '" + s + "' (expected synthetic or remote)");
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  static const std::vector<std::string> known = {
      "d",          "prompt_tokens", "embed_dim",        "gamma",      "vocab_size",    "hidden_dim",
      "logit_scale",
      "num_classes", "seq_len",      "test_per_class",   "rounds",     "clients",       "participation",
      "partition",  "alpha",         "per_class",        "local_iterations", "population", "sigma0",
      "r_p",        "aggregator",    "uncorrected_sigma", "oracle",    "endpoint",      "train_path",
      "test_path",  "timeout_s",     "seed",             "out",        "eval_stride",   "workers"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw InvalidArgument("unknown config key '" + key + "'");

  ExperimentConfig c;
  read_key(j, "d", c.d);
  read_key(j, "prompt_tokens", c.prompt_tokens);
  read_key(j, "embed_dim", c.embed_dim);
  read_key(j, "gamma", c.gamma);
  read_key(j, "vocab_size", c.vocab_size);
  read_key(j, "hidden_dim", c.hidden_dim);
  read_key(j, "logit_scale", c.logit_scale);
  read_key(j, "num_classes", c.num_classes);
  read_key(j, "seq_len", c.seq_len);
  read_key(j, "test_per_class", c.test_per_class);
  read_key(j, "rounds", c.rounds);
  read_key(j, "clients", c.clients);
  read_key(j, "participation", c.participation);
  if (j.contains("partition")) c.partition = partition_from_string(j.at("partition").get<std::string>());
  read_key(j, "alpha", c.alpha);
  read_key(j, "per_class", c.per_class);
  read_key(j, "local_iterations", c.local_iterations);
  read_key(j, "population", c.population);
  read_key(j, "sigma0", c.sigma0);
  read_key(j, "r_p", c.r_p);
  if (j.contains("aggregator")) c.aggregator = aggregator_from_string(j.at("aggregator").get<std::string>());
  read_key(j, "uncorrected_sigma", c.uncorrected_sigma);
  if (j.contains("oracle")) c.oracle = oracle_from_string(j.at("oracle").get<std::string>());
  read_key(j, "endpoint", c.endpoint);
  read_key(j, "train_path", c.train_path);
  read_key(j, "test_path", c.test_path);
  read_key(j, "timeout_s", c.timeout_s);
  read_key(j, "seed", c.seed);
  read_key(j, "out", c.out);
  read_key(j, "eval_stride", c.eval_stride);
  read_key(j, "workers", c.workers);
  return c;
}

json to_json(const ExperimentConfig& c) {
  return json{{"d", c.d},
              {"prompt_tokens", c.prompt_tokens},
              {"embed_dim", c.embed_dim},
              {"gamma", c.gamma},
              {"vocab_size", c.vocab_size},
              {"hidden_dim", c.hidden_dim},
              {"logit_scale", c.logit_scale},
              {"num_classes", c.num_classes},
              {"seq_len", c.seq_len},
              {"test_per_class", c.test_per_class},
              {"rounds", c.rounds},
              {"clients", c.clients},
              {"participation", c.participation},
              {"partition", c.partition == PartitionMode::Iid ? "iid" : "dirichlet"},
              {"alpha", c.alpha},
              {"per_class", c.per_class},
              {"local_iterations", c.local_iterations},
              {"population", c.population},
              {"sigma0", c.sigma0},
              {"r_p", c.r_p},
              {"aggregator", std::string(to_string(c.aggregator))},
              {"uncorrected_sigma", c.uncorrected_sigma},
              {"oracle", c.oracle == OracleKind::Synthetic ? "synthetic" : "remote"},
              {"endpoint", c.endpoint},
              {"train_path", c.train_path},
              {"test_path", c.test_path},
              {"timeout_s", c.timeout_s},
              {"seed", c.seed},
              {"out", c.out},
              {"eval_stride", c.eval_stride},
              {"workers", c.workers}};
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config " + path.string());
  try {
    return config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw InvalidArgument("config " + path.string() + ": " + e.what());
  }
}

void validate(const ExperimentConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw InvalidArgument(std::string("invalid config: ") + what);
  };
  require(c.d >= 1, "d must be positive");
  require(c.rounds >= 0, "rounds must be non-negative");
  require(c.clients >= 1, "clients must be positive");
  require(c.participation == "all", "only participation = all is supported");
  require(c.per_class >= 1, "per_class must be positive");
  require(c.local_iterations >= 1, "local_iterations must be positive");
  require(c.population >= 1, "population must be positive");
  require(c.sigma0 > 0, "sigma0 must be positive");
  require(c.r_p >= 0 && c.r_p <= 1, "r_p must lie in [0, 1]");
  require(c.partition == PartitionMode::Iid || c.alpha > 0, "alpha must be positive");
  require(c.aggregator != AggregatorKind::FedBpt || c.clients >= 2, "fedbpt aggregation needs at least two clients");
  require(c.eval_stride >= 1, "eval_stride must be positive");
  require(c.workers >= 1, "workers must be positive");
  require(c.gamma >= 0, "gamma must be non-negative");
  require(c.timeout_s > 0, "timeout_s must be positive");
  if (c.oracle == OracleKind::Synthetic) {
    require(static_cast<long>(c.prompt_tokens) * c.embed_dim >= c.d, "d must not exceed prompt_tokens * embed_dim");
    require(c.vocab_size >= 1 && c.hidden_dim >= 1 && c.logit_scale > 0 && c.num_classes >= 2 && c.seq_len >= 1,
            "synthetic model sizes must be positive with at least two classes");
  } else {
    require(!c.endpoint.empty(), "remote oracle needs an endpoint");
    require(!c.train_path.empty() && !c.test_path.empty(), "remote oracle needs train_path and test_path");
  }
}

ExperimentData prepare_experiment(const ExperimentConfig& c) {
  validate(c);
  ExperimentData data;
  data.vocab_size = c.vocab_size;
  if (c.oracle == OracleKind::Synthetic) {
    TaskConfig task_config;
    task_config.model = SyntheticPlmConfig{c.vocab_size, c.embed_dim, c.prompt_tokens, c.hidden_dim, c.num_classes, c.logit_scale};
    task_config.sub_dim = c.d;
    task_config.gamma = c.gamma;
    task_config.seq_len = c.seq_len;
    task_config.train_per_class = c.per_class;
    task_config.test_per_class = c.test_per_class;
    auto task = generate_task(task_config, derive_seed(c.seed, "task"));
    data.oracle = std::make_shared<SyntheticPLM>(task.model);
    data.train_pool = std::move(task.train);
    data.test = std::move(task.test);
    data.projection = task.projection;
    data.floor_accuracy = task.floor_accuracy;
  } else {
    const auto timeout = std::chrono::milliseconds(static_cast<long>(c.timeout_s * 1000.0));
    auto oracle = std::make_shared<RemoteOracle>(c.endpoint, timeout);
    data.projection = ProjectionSpec{oracle->prompt_dim(), c.d, derive_seed(c.seed, "projection"), c.gamma};
    data.oracle = std::move(oracle);
    data.train_pool = load_jsonl(c.train_path, c.vocab_size);
    data.test = load_jsonl(c.test_path, c.vocab_size);
  }
  return data;
}

Eigen::MatrixXi confusion_matrix(const Oracle& oracle, const Eigen::VectorXd& prompt, std::span<const Sample> test) {
  if (test.empty()) throw InvalidArgument("confusion matrix needs a non-empty test set");
  const int classes = oracle.num_classes();
  Eigen::MatrixXi m = Eigen::MatrixXi::Zero(classes, classes);
  const auto predicted = oracle.predict(prompt, test);
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test[i].label < 0 || test[i].label >= classes) throw InvalidArgument("test label out of range");
    ++m(test[i].label, predicted[i]);
  }
  return m;
}

namespace {

std::vector<ClientUpdate> run_clients(const ExperimentConfig& c, const Broadcast& broadcast,
                                      const std::vector<Shard>& shards, const Oracle& oracle,
                                      const Eigen::MatrixXd& projection, int vocab_size) {
  std::vector<std::optional<ClientUpdate>> slots(shards.size());
  std::vector<std::exception_ptr> errors(shards.size());

  auto work = [&](std::size_t k) {
    ClientRoundConfig cfg;
    cfg.local_iterations = c.local_iterations;
    cfg.population = c.population;
    cfg.mask_rate = c.r_p;
    cfg.global_seed = c.seed;
    cfg.round = broadcast.round;
    cfg.client_id = shards[k].client_id;
    try {
      slots[k] = run_client_update(broadcast, shards[k], oracle, projection, vocab_size, cfg);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };

  const auto workers = static_cast<std::size_t>(std::max(1, c.workers));
  if (workers == 1) {
    for (std::size_t k = 0; k < shards.size(); ++k) work(k);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t k = w; k < shards.size(); k += workers) work(k);
      });
  }

  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<ClientUpdate> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace

ExperimentResult run_federated(const ExperimentConfig& c, const ExperimentData& data) {
  validate(c);
  if (!data.oracle) throw InvalidArgument("experiment has no oracle");
  const Eigen::MatrixXd projection = generate_projection(data.projection);
  if (projection.rows() != data.oracle->prompt_dim())
    throw InvalidArgument("projection rows differ from the oracle's prompt_dim");

  const auto train = few_shot_select(data.train_pool, c.per_class, derive_seed(c.seed, "few-shot"));
  const auto shards = dirichlet_partition(train, PartitionSpec{c.clients, c.alpha, derive_seed(c.seed, "partition"),
                                                               c.partition});
  const CountingOracle oracle(*data.oracle);
  const auto cost = comm_accounting(c);

  ExperimentResult result;
  result.projection = data.projection;
  result.floor_accuracy = data.floor_accuracy;

  auto state = init_distribution<double>(c.d, Eigen::VectorXd::Zero(c.d), c.sigma0);

  auto evaluate_into = [&](RoundMetrics& row) {
    const Eigen::VectorXd prompt = project(projection, state.mean);
    const auto report = oracle.evaluate(prompt, data.test);
    row.test_accuracy = report.accuracy;
    row.test_loss = report.loss;
    auto confusion = confusion_matrix(*data.oracle, prompt, data.test);
    result.final_confusion = confusion;
    result.confusions.emplace_back(row.round, std::move(confusion));
  };

  RoundMetrics initial;
  initial.round = 0;
  initial.broadcast_sigma = state.step;
  evaluate_into(initial);
  result.metrics.push_back(std::move(initial));

  for (int t = 0; t < c.rounds; ++t) {
    try {
      RoundMetrics row;
      row.round = t + 1;
      row.broadcast_sigma = state.step;
      row.uplink_floats = cost.uplink_floats;
      row.downlink_floats = cost.downlink_floats;

      const auto broadcast = make_broadcast(state, t, data.projection);
      auto updates = run_clients(c, broadcast, shards, oracle, projection, data.vocab_size);
      std::vector<ClientResult> uploads;
      std::vector<LocalState> locals;
      for (auto& u : updates) {
        row.local_losses.push_back(u.upload.local_loss);
        uploads.push_back(std::move(u.upload));
        locals.push_back(std::move(u.local));
      }

      if (c.aggregator == AggregatorKind::FedBpt) {
        FedBptOptions options;
        options.local_population = c.population;
        options.uncorrected_sigma = c.uncorrected_sigma;
        row.corrected_sigma = c.uncorrected_sigma ? state.step : corrected_sigma(uploads, c.population);
        state = aggregate_fedbpt(state, uploads, options);
      } else {
        state = aggregate_fedavg_bbt(state, locals);
      }

      if ((t + 1) % c.eval_stride == 0 || t + 1 == c.rounds) evaluate_into(row);
      result.metrics.push_back(std::move(row));
    } catch (const std::exception& e) {
      throw std::runtime_error(fmt::format("round {}: {}", t, e.what()));
    }
  }

  result.final_state = std::move(state);
  result.oracle_calls = oracle.calls();
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& c) {
  const auto data = prepare_experiment(c);
  auto result = run_federated(c, data);
  if (c.out.empty()) return result;

  const std::filesystem::path out(c.out);
  std::filesystem::create_directories(out);
  auto write = [&](const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InvalidArgument("cannot write " + path.string());
    f << text;
  };
  write(out / "metrics.csv", metrics_csv(result.metrics));
  for (const auto& [round, matrix] : result.confusions)
    write(out / fmt::format("confusion_round{}.json", round), confusion_json(round, matrix).dump(2) + "\n");
  write(out / "final_z.json", final_z_json(result.final_state.mean, result.projection).dump(2) + "\n");
  return result;
}

LocalTrainingResult train_single_client(const Shard& shard, const Oracle& oracle, const Eigen::MatrixXd& projection,
                                        int vocab_size, ClientRoundConfig config, int rounds, double sigma0) {
  const auto dim = projection.cols();
  auto state = init_distribution<double>(dim, Eigen::VectorXd::Zero(dim), sigma0);

  LocalTrainingResult result;
  result.losses.push_back(oracle.evaluate(project(projection, state.mean), shard.samples).loss);
  for (int r = 0; r < rounds; ++r) {
    config.round = r;
    const Broadcast broadcast{state.mean, state.step, state.cov, r, {}};
    auto update = run_client_update(broadcast, shard, oracle, projection, vocab_size, config);
    result.losses.push_back(update.upload.local_loss);
    state = distribution_from<double>(update.local.mean, update.local.step, update.local.cov);
  }
  result.final_mean = state.mean;
  return result;
}

}  // namespace fedbpt
