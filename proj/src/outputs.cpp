#include <algorithm>
#include <sstream>

#include <fmt/format.h>

#include "fedbpt/errors.hpp"
#include "fedbpt/harness.hpp"

namespace fedbpt {

using nlohmann::json;

CommAccounting comm_accounting(std::int64_t d, std::int64_t local_iterations, AggregatorKind aggregator,
                               std::span<const BaselineCount> baselines) {
  if (d < 1 || local_iterations < 1) throw InvalidArgument("d and local_iterations must be positive");
  CommAccounting a;
  a.uplink_floats = d + local_iterations + 1;  // z, sigma list, loss
  if (aggregator == AggregatorKind::FedAvgBbt) a.uplink_floats += 1 + d * d;  // final local sigma and C
  a.downlink_floats = d + d * d + 1;           // z, C, sigma
  a.trainable_params = d;
  a.trainable_vector_bytes = d * 8;
  a.round_bytes = (a.uplink_floats + a.downlink_floats) * 8;
  for (const auto& b : baselines)
    a.ratios.push_back({b.name, b.params, static_cast<double>(b.params) / static_cast<double>(d)});
  return a;
}

CommAccounting comm_accounting(const ExperimentConfig& config, std::span<const BaselineCount> baselines) {
  return comm_accounting(config.d, config.local_iterations, config.aggregator, baselines);
}

namespace {

std::string number(double v) { return fmt::format("{:.17g}", v); }
std::string number(const std::optional<double>& v) { return v ? number(*v) : std::string(); }

}  // namespace

std::string metrics_csv(std::span<const RoundMetrics> metrics) {
  std::string out =
      "round,test_accuracy,test_loss,broadcast_sigma,corrected_sigma,mean_local_loss,local_losses,uplink_floats,"
      "downlink_floats\n";
  for (const auto& m : metrics) {
    std::string losses;
    double sum = 0.0;
    for (std::size_t i = 0; i < m.local_losses.size(); ++i) {
      losses += (i ? ";" : "") + number(m.local_losses[i]);
      sum += m.local_losses[i];
    }
    const std::string mean = m.local_losses.empty() ? "" : number(sum / static_cast<double>(m.local_losses.size()));
    out += fmt::format("{},{},{},{},{},{},{},{},{}\n", m.round, number(m.test_accuracy), number(m.test_loss),
                       number(m.broadcast_sigma), number(m.corrected_sigma), mean, losses, m.uplink_floats,
                       m.downlink_floats);
  }
  return out;
}

json confusion_json(int round, const Eigen::MatrixXi& matrix) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < matrix.rows(); ++i) {
    std::vector<int> row(static_cast<std::size_t>(matrix.cols()));
    for (Eigen::Index j = 0; j < matrix.cols(); ++j) row[static_cast<std::size_t>(j)] = matrix(i, j);
    rows.push_back(row);
  }
  return json{{"round", round}, {"num_classes", matrix.rows()}, {"matrix", rows}};
}

json final_z_json(const Eigen::VectorXd& z, const ProjectionSpec& projection) {
  return json{{"d", z.size()},
              {"z", std::vector<double>(z.data(), z.data() + z.size())},
              {"projection",
               {{"D", projection.full_dim}, {"d", projection.sub_dim}, {"seed", projection.seed}, {"gamma", projection.gamma}}}};
}

std::pair<Eigen::VectorXd, ProjectionSpec> parse_final_z(const json& j) {
  try {
    const auto values = j.at("z").get<std::vector<double>>();
    if (static_cast<std::size_t>(j.at("d").get<long>()) != values.size())
      throw InvalidArgument("final_z: d does not match the length of z");
    const auto& p = j.at("projection");
    ProjectionSpec spec{p.at("D").get<Eigen::Index>(), p.at("d").get<Eigen::Index>(), p.at("seed").get<std::uint64_t>(),
                        p.at("gamma").get<double>()};
    return {Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())), spec};
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed final_z: ") + e.what());
  }
}

std::string accuracy_svg(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("metrics CSV is empty");

  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream row(s);
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  const auto header = split(line);
  const auto round_col = std::find(header.begin(), header.end(), "round") - header.begin();
  const auto acc_col = std::find(header.begin(), header.end(), "test_accuracy") - header.begin();
  if (round_col == static_cast<long>(header.size()) || acc_col == static_cast<long>(header.size()))
    throw InvalidArgument("metrics CSV lacks round/test_accuracy columns");

  std::vector<std::pair<double, double>> points;
  while (std::getline(in, line)) {
    const auto cells = split(line);
    if (static_cast<long>(cells.size()) <= std::max(round_col, acc_col) || cells[static_cast<std::size_t>(acc_col)].empty())
      continue;
    points.emplace_back(std::stod(cells[static_cast<std::size_t>(round_col)]),
                        std::stod(cells[static_cast<std::size_t>(acc_col)]));
  }

  constexpr double width = 640, height = 400, left = 60, right = 20, top = 20, bottom = 50;
  const double max_round = points.empty() ? 1.0 : std::max(1.0, points.back().first);
  auto sx = [&](double r) { return left + (width - left - right) * r / max_round; };
  auto sy = [&](double a) { return top + (height - top - bottom) * (1.0 - a); };

  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      width, height);
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", left, sy(0), sx(max_round));
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", left, sy(0), sy(1));
  for (double a : {0.0, 0.25, 0.5, 0.75, 1.0})
    svg += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{:.2f}</text>\n", left - 6,
                       sy(a) + 4, a);
  svg += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">0</text>\n", sx(0), sy(0) + 18);
  svg += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n", sx(max_round),
                     sy(0) + 18, max_round);
  svg += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">round</text>\n",
                     (left + width - right) / 2, height - 10);
  svg += fmt::format("<text x=\"15\" y=\"{}\" font-size=\"13\" transform=\"rotate(-90 15 {})\" "
                     "text-anchor=\"middle\">test accuracy</text>\n",
                     (top + height - bottom) / 2, (top + height - bottom) / 2);
  std::string polyline;
  for (const auto& [r, a] : points) polyline += fmt::format("{:.2f},{:.2f} ", sx(r), sy(a));
  svg += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"" + polyline + "\"/>\n</svg>\n";
  return svg;
}

}  // namespace fedbpt
