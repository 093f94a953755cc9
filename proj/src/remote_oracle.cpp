#include "fedbpt/remote_oracle.hpp"

#include <cmath>

#include <fmt/format.h>
#include <httplib.h>

#include "fedbpt/errors.hpp"
#include "fedbpt/log.hpp"

namespace fedbpt {
namespace {

using nlohmann::json;

httplib::Client make_client(const std::string& endpoint, std::chrono::milliseconds timeout) {
  httplib::Client client(endpoint);
  if (!client.is_valid()) throw InvalidArgument("invalid oracle endpoint: " + endpoint);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  return client;
}

json parse_body(const std::string& body, const std::string& what) {
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    throw TransportError(what + ": response is not JSON: " + e.what());
  }
}

[[noreturn]] void raise_for(const httplib::Result& res, const std::string& what) {
  if (!res) throw TransportError(what + ": " + httplib::to_string(res.error()));
  if (res->status == 400) {
    std::string message = res->body;
    try {
      message = json::parse(res->body).at("error").get<std::string>();
    } catch (const json::exception&) {
    }
    throw RemoteRejection(message);
  }
  throw TransportError(what + ": HTTP " + std::to_string(res->status));
}

}  // namespace

json evaluate_request_json(const Eigen::VectorXd& prompt, std::span<const Sample> batch, bool return_per_sample) {
  json samples = json::array();
  for (const auto& s : batch) {
    json item;
    if (!s.text.empty()) {
      item["text"] = s.text;
    } else {
      item["token_ids"] = s.token_ids;
    }
    item["label"] = s.label;
    samples.push_back(std::move(item));
  }
  return json{{"prompt", std::vector<double>(prompt.data(), prompt.data() + prompt.size())},
              {"samples", std::move(samples)},
              {"return_per_sample", return_per_sample}};
}

LossReport parse_loss_report(const json& body) {
  LossReport report;
  try {
    report.loss = body.at("loss").get<double>();
    report.accuracy = body.at("accuracy").get<double>();
    report.num_classes = body.at("num_classes").get<int>();
    if (body.contains("per_sample_loss") && !body.at("per_sample_loss").is_null())
      report.per_sample_loss = body.at("per_sample_loss").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw TransportError(std::string("malformed /evaluate response: ") + e.what());
  }
  if (report.per_sample_loss && !report.per_sample_loss->empty()) {
    double sum = 0.0;
    for (double l : *report.per_sample_loss) sum += l;
    const double mean = sum / static_cast<double>(report.per_sample_loss->size());
    if (std::abs(mean - report.loss) > 1e-9)
      warn(fmt::format("remote oracle: per_sample_loss mean {:.12g} differs from loss {:.12g}", mean, report.loss));
  }
  return report;
}

OracleInfo parse_info(const json& body) {
  try {
    return OracleInfo{body.at("prompt_dim").get<Eigen::Index>(), body.at("num_classes").get<int>(),
                      body.value("model_name", std::string{})};
  } catch (const json::exception& e) {
    throw TransportError(std::string("malformed /info response: ") + e.what());
  }
}

RemoteOracle::RemoteOracle(std::string endpoint, std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout) {
  auto client = make_client(endpoint_, timeout_);
  auto res = client.Get("/info");
  if (!res || res->status != 200) raise_for(res, "GET /info");
  info_ = parse_info(parse_body(res->body, "GET /info"));
}

LossReport RemoteOracle::evaluate(const Eigen::VectorXd& prompt, std::span<const Sample> batch, bool per_sample) const {
  if (prompt.size() != info_.prompt_dim)
    throw InvalidArgument(fmt::format("prompt length {} differs from remote prompt_dim {}", prompt.size(),
                                      info_.prompt_dim));
  if (batch.empty()) throw InvalidArgument("empty batch");
  auto client = make_client(endpoint_, timeout_);
  const std::string body = evaluate_request_json(prompt, batch, per_sample).dump();
  auto res = client.Post("/evaluate", body, "application/json");
  if (!res || res->status != 200) raise_for(res, "POST /evaluate");
  return parse_loss_report(parse_body(res->body, "POST /evaluate"));
}

LossReport remote_evaluate(const std::string& endpoint, const Eigen::VectorXd& prompt, std::span<const Sample> batch,
                           std::chrono::milliseconds timeout) {
  return RemoteOracle(endpoint, timeout).evaluate(prompt, batch);
}

}  // namespace fedbpt
