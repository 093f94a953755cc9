#include "fedbpt/oracle.hpp"

#include <cmath>
#include <limits>

#include "fedbpt/errors.hpp"

namespace fedbpt {

LossReport score_logits(const Eigen::MatrixXd& logits, std::span<const Sample> batch, bool per_sample) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (n == 0) throw InvalidArgument("cannot score an empty batch");
  const auto classes = logits.rows();

  LossReport report;
  report.num_classes = static_cast<int>(classes);
  std::vector<double> losses(batch.size());
  double total = 0.0;
  int correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int label = batch[static_cast<std::size_t>(i)].label;
    if (label < 0 || label >= classes) throw InvalidArgument("label " + std::to_string(label) + " out of range");
    const auto col = logits.col(i);
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < classes; ++c)
      if (col(c) > col(best)) best = c;
    const double top = col(best);
    const double log_norm = top + std::log((col.array() - top).exp().sum());
    losses[static_cast<std::size_t>(i)] = log_norm - col(label);
    total += losses[static_cast<std::size_t>(i)];
    if (best == label) ++correct;
  }
  report.loss = total / static_cast<double>(n);
  report.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  if (per_sample) report.per_sample_loss = std::move(losses);
  return report;
}

std::vector<int> Oracle::predict(const Eigen::VectorXd& prompt, std::span<const Sample> batch) const {
  const int classes = num_classes();
  std::vector<Sample> expanded;
  expanded.reserve(batch.size() * static_cast<std::size_t>(classes));
  for (const auto& s : batch) {
    for (int c = 0; c < classes; ++c) {
      expanded.push_back(s);
      expanded.back().label = c;
    }
  }
  const auto report = evaluate(prompt, expanded, true);
  if (!report.per_sample_loss || report.per_sample_loss->size() != expanded.size())
    throw TransportError("oracle did not return per-sample losses for prediction");

  std::vector<int> predicted(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    int best = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    for (int c = 0; c < classes; ++c) {
      const double l = (*report.per_sample_loss)[i * static_cast<std::size_t>(classes) + static_cast<std::size_t>(c)];
      if (l < best_loss) {
        best_loss = l;
        best = c;
      }
    }
    predicted[i] = best;
  }
  return predicted;
}

LossReport TestFunctionOracle::evaluate(const Eigen::VectorXd& prompt, std::span<const Sample> /*batch*/,
                                        bool per_sample) const {
  if (prompt.size() != dim_) throw InvalidArgument("test function dimension mismatch");
  LossReport report;
  report.loss = f_(prompt);
  report.accuracy = 0.0;
  report.num_classes = 1;
  if (per_sample) report.per_sample_loss = std::vector<double>{report.loss};
  return report;
}

}  // namespace fedbpt
