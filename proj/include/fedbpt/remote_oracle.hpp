#pragma once

#include <chrono>
#include <span>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fedbpt/oracle.hpp"

namespace fedbpt {

/// Reply of GET /info.
struct OracleInfo {
  Eigen::Index prompt_dim = 0;
  int num_classes = 0;
  std::string model_name;
};

// Wire encoding of the oracle protocol. Shared by the client below and by
// anything serving the protocol (tests use it to build stub servers).
nlohmann::json evaluate_request_json(const Eigen::VectorXd& prompt, std::span<const Sample> batch,
                                     bool return_per_sample);
/// Parses a 200 /evaluate body. A per_sample_loss whose mean differs from
/// loss by more than 1e-9 is kept but logged as a warning.
LossReport parse_loss_report(const nlohmann::json& body);
OracleInfo parse_info(const nlohmann::json& body);

/// Oracle served over HTTP: GET /info, POST /evaluate.
class RemoteOracle final : public Oracle {
 public:
  /// endpoint is "http://host:port". Fetches /info immediately.
  explicit RemoteOracle(std::string endpoint, std::chrono::milliseconds timeout = std::chrono::seconds(30));

  const OracleInfo& info() const { return info_; }
  Eigen::Index prompt_dim() const override { return info_.prompt_dim; }
  int num_classes() const override { return info_.num_classes; }
  LossReport evaluate(const Eigen::VectorXd& prompt, std::span<const Sample> batch,
                      bool per_sample = false) const override;

 private:
  std::string endpoint_;
  std::chrono::milliseconds timeout_;
  OracleInfo info_;
};

LossReport remote_evaluate(const std::string& endpoint, const Eigen::VectorXd& prompt, std::span<const Sample> batch,
                           std::chrono::milliseconds timeout = std::chrono::seconds(30));

}  // namespace fedbpt
