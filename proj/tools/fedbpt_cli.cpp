// fedbpt: run federated black-box prompt tuning experiments.
//
//   fedbpt run     [--config cfg.json] [--rounds N --alpha A --r-p R ...]
//   fedbpt account --d 500 --local-iterations 8 [--baseline name=count ...]
//   fedbpt eval    --config cfg.json --z out/final_z.json
//   fedbpt plot    --csv out/metrics.csv --out accuracy.svg

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "fedbpt/errors.hpp"
#include "fedbpt/harness.hpp"

namespace {

using nlohmann::json;

const std::vector<std::string> kStringKeys = {"participation", "partition", "aggregator", "oracle",
                                              "endpoint",      "train_path", "test_path", "out"};
const std::vector<std::string> kValueKeys = {
    "d",         "prompt_tokens",    "embed_dim",  "gamma",  "vocab_size", "hidden_dim", "logit_scale", "num_classes",
    "seq_len",   "test_per_class",   "rounds",     "clients", "alpha",     "per_class",  "local_iterations",
    "population", "sigma0",          "r_p",        "timeout_s", "seed",    "eval_stride", "workers"};

std::string dashed(std::string key) {
  for (auto& ch : key)
    if (ch == '_') ch = '-';
  return key;
}

// Config file values overridden by whichever flags were given.
struct ConfigOptions {
  std::string config_path;
  std::map<std::string, std::string> values;
  bool uncorrected_sigma = false;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    for (const auto& key : kStringKeys) cmd.add_option("--" + dashed(key), values[key]);
    for (const auto& key : kValueKeys) cmd.add_option("--" + dashed(key), values[key]);
    cmd.add_flag("--uncorrected-sigma", uncorrected_sigma,
                 "debug: normalize the server update with the broadcast step");
  }

  fedbpt::ExperimentConfig resolve() const {
    json j = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      j = json::parse(in);
    }
    for (const auto& [key, raw] : values) {
      if (raw.empty()) continue;
      if (std::find(kStringKeys.begin(), kStringKeys.end(), key) != kStringKeys.end()) {
        j[key] = raw;
      } else {
        try {
          j[key] = json::parse(raw);
        } catch (const json::exception&) {
          throw fedbpt::InvalidArgument("--" + dashed(key) + " expects a number, got '" + raw + "'");
        }
      }
    }
    if (uncorrected_sigma) j["uncorrected_sigma"] = true;
    return fedbpt::config_from_json(j);
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw fedbpt::InvalidArgument("cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run(const ConfigOptions& options) {
  auto config = options.resolve();
  if (config.out.empty()) config.out = "fedbpt_out";
  const auto result = fedbpt::run_experiment(config);
  const auto& last = result.metrics.back();
  std::cout << fmt::format("rounds={} final_test_accuracy={:.4f} final_test_loss={:.6f}", config.rounds,
                           last.test_accuracy.value_or(0.0), last.test_loss.value_or(0.0));
  if (result.floor_accuracy) std::cout << fmt::format(" zero_prompt_accuracy={:.4f}", *result.floor_accuracy);
  std::cout << fmt::format(" oracle_calls={} out={}\n", result.oracle_calls, config.out);
  return 0;
}

int account(const ConfigOptions& options, const std::vector<std::string>& baseline_args) {
  const auto config = options.resolve();
  std::vector<fedbpt::BaselineCount> baselines;
  for (const auto& arg : baseline_args) {
    const auto eq = arg.find('=');
    if (eq == std::string::npos) throw fedbpt::InvalidArgument("--baseline expects name=count, got '" + arg + "'");
    baselines.push_back({arg.substr(0, eq), std::stoll(arg.substr(eq + 1))});
  }
  const auto a = fedbpt::comm_accounting(config, baselines);
  json ratios = json::array();
  for (const auto& r : a.ratios) ratios.push_back({{"name", r.name}, {"params", r.params}, {"ratio", r.ratio}});
  json out{{"aggregator", std::string(fedbpt::to_string(config.aggregator))},
           {"uplink_floats", a.uplink_floats},
           {"downlink_floats", a.downlink_floats},
           {"trainable_params", a.trainable_params},
           {"trainable_vector_bytes", a.trainable_vector_bytes},
           {"round_bytes", a.round_bytes},
           {"ratios", ratios}};
  std::cout << out.dump(2) << '\n';
  return 0;
}

int eval(const ConfigOptions& options, const std::string& z_path) {
  const auto config = options.resolve();
  const auto [z, projection] = fedbpt::parse_final_z(json::parse(read_file(z_path)));
  const auto data = fedbpt::prepare_experiment(config);
  if (!(projection == data.projection))
    throw fedbpt::InvalidArgument("final_z projection does not match the projection this config produces");
  const Eigen::VectorXd prompt = fedbpt::project(fedbpt::generate_projection(projection), z);
  const auto report = data.oracle->evaluate(prompt, data.test);
  std::cout << json{{"loss", report.loss}, {"accuracy", report.accuracy}, {"num_classes", report.num_classes},
                    {"test_samples", data.test.size()}}
                   .dump(2)
            << '\n';
  return 0;
}

int plot(const std::string& csv_path, const std::string& out_path) {
  const auto svg = fedbpt::accuracy_svg(read_file(csv_path));
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw fedbpt::InvalidArgument("cannot write " + out_path);
  out << svg;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated black-box prompt tuning simulator"};
  app.require_subcommand(1);

  ConfigOptions run_options;
  auto* run_cmd = app.add_subcommand("run", "run an experiment and write metrics, confusion matrices and final_z.json");
  run_options.attach(*run_cmd);

  ConfigOptions account_options;
  std::vector<std::string> baselines;
  auto* account_cmd = app.add_subcommand("account", "per-round communication cost and parameter ratios");
  account_options.attach(*account_cmd);
  account_cmd->add_option("--baseline", baselines, "baseline trainable parameter count as name=count");

  ConfigOptions eval_options;
  std::string z_path;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved final_z.json on the configured test set");
  eval_options.attach(*eval_cmd);
  eval_cmd->add_option("--z", z_path, "final_z.json")->required()->check(CLI::ExistingFile);

  std::string csv_path;
  std::string svg_path = "accuracy.svg";
  auto* plot_cmd = app.add_subcommand("plot", "render test accuracy per round from metrics.csv as SVG");
  plot_cmd->add_option("--csv", csv_path, "metrics.csv")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("--out", svg_path, "output SVG path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return run(run_options);
    if (account_cmd->parsed()) return account(account_options, baselines);
    if (eval_cmd->parsed()) return eval(eval_options, z_path);
    if (plot_cmd->parsed()) return plot(csv_path, svg_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
