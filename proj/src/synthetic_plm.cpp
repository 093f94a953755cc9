#include "fedbpt/synthetic_plm.hpp"

#include <cmath>
#include <set>

#include "fedbpt/errors.hpp"
#include "fedbpt/rng.hpp"

namespace fedbpt {
namespace {

void check_config(const SyntheticPlmConfig& c) {
  if (c.vocab_size < 1 || c.embed_dim < 1 || c.prompt_tokens < 1 || c.hidden_dim < 1 || c.num_classes < 2)
    throw InvalidArgument("synthetic model dimensions must be positive with at least two classes");
}

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, double std, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = std * rng.normal();
  return m;
}

}  // namespace

SyntheticPLM::SyntheticPLM(const SyntheticPlmConfig& config) : config_(config) {
  check_config(config);
  embedding_ = Eigen::MatrixXd::Zero(config.embed_dim, config.vocab_size);
  w1_ = Eigen::MatrixXd::Zero(config.hidden_dim, config.embed_dim);
  w2_ = Eigen::MatrixXd::Zero(config.num_classes, config.hidden_dim);
}

SyntheticPLM::SyntheticPLM(const SyntheticPlmConfig& config, std::uint64_t seed) : config_(config) {
  check_config(config);
  Rng rng(seed);
  embedding_ = gaussian(config.embed_dim, config.vocab_size, 1.0, rng);
  w1_ = gaussian(config.hidden_dim, config.embed_dim, 1.0 / std::sqrt(double(config.embed_dim)), rng);
  w2_ = config.logit_scale * gaussian(config.num_classes, config.hidden_dim, 1.0 / std::sqrt(double(config.hidden_dim)), rng);
}

SyntheticPLM SyntheticPLM::degenerate(const SyntheticPlmConfig& config) { return SyntheticPLM(config); }

void SyntheticPLM::check(const Eigen::VectorXd& prompt, std::span<const Sample> batch) const {
  if (prompt.size() != prompt_dim())
    throw InvalidArgument("prompt length " + std::to_string(prompt.size()) + " differs from prompt_dim " +
                          std::to_string(prompt_dim()));
  if (batch.empty()) throw InvalidArgument("empty batch");
  for (const auto& s : batch) {
    if (s.token_ids.empty()) throw InvalidArgument("sample has no tokens");
    for (int t : s.token_ids)
      if (t < 0 || t >= config_.vocab_size) throw InvalidArgument("token id " + std::to_string(t) + " out of vocabulary");
  }
}

Eigen::MatrixXd SyntheticPLM::logits(const Eigen::VectorXd& prompt, std::span<const Sample> batch) const {
  check(prompt, batch);
  const Eigen::Map<const Eigen::MatrixXd> prompt_tokens(prompt.data(), config_.embed_dim, config_.prompt_tokens);
  const Eigen::VectorXd prompt_sum = prompt_tokens.rowwise().sum();

  Eigen::MatrixXd pooled(config_.embed_dim, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Eigen::VectorXd acc = prompt_sum;
    for (int t : batch[i].token_ids) acc += embedding_.col(t);
    pooled.col(static_cast<Eigen::Index>(i)) =
        acc / static_cast<double>(config_.prompt_tokens + static_cast<int>(batch[i].token_ids.size()));
  }
  const Eigen::MatrixXd hidden = (w1_ * pooled).array().tanh().matrix();
  return w2_ * hidden;
}

LossReport SyntheticPLM::evaluate(const Eigen::VectorXd& prompt, std::span<const Sample> batch, bool per_sample) const {
  return score_logits(logits(prompt, batch), batch, per_sample);
}

std::vector<int> SyntheticPLM::predict(const Eigen::VectorXd& prompt, std::span<const Sample> batch) const {
  const Eigen::MatrixXd l = logits(prompt, batch);
  std::vector<int> out(batch.size());
  for (Eigen::Index i = 0; i < l.cols(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < l.rows(); ++c)
      if (l(c, i) > l(best, i)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

namespace {

// Class-balanced draw: uniform random sequences, labeled by the teacher,
// accepted while their class is below quota. Returns false when the draw cap
// is hit (some class is too rare under this teacher).
bool draw_balanced(const SyntheticPLM& model, const Eigen::VectorXd& golden_prompt, const TaskConfig& cfg, int per_class,
                   Rng& rng, std::set<std::vector<int>>& seen, std::vector<Sample>& out) {
  const int classes = cfg.model.num_classes;
  std::vector<int> counts(static_cast<std::size_t>(classes), 0);
  int remaining = per_class * classes;
  const long cap = 2000L * per_class * classes;
  constexpr int chunk = 64;

  for (long drawn = 0; remaining > 0 && drawn < cap; drawn += chunk) {
    std::vector<Sample> batch(chunk);
    for (auto& s : batch) {
      s.token_ids.resize(static_cast<std::size_t>(cfg.seq_len));
      for (auto& t : s.token_ids) t = static_cast<int>(rng.uniform_int(0, cfg.model.vocab_size - 1));
    }
    const auto labels = model.predict(golden_prompt, batch);
    for (std::size_t i = 0; i < batch.size() && remaining > 0; ++i) {
      auto& count = counts[static_cast<std::size_t>(labels[i])];
      if (count >= per_class || !seen.insert(batch[i].token_ids).second) continue;
      batch[i].label = labels[i];
      out.push_back(std::move(batch[i]));
      ++count;
      --remaining;
    }
  }
  return remaining == 0;
}

}  // namespace

SyntheticTask generate_task(const TaskConfig& config, std::uint64_t seed) {
  check_config(config.model);
  if (config.seq_len < 1 || config.train_per_class < 1 || config.test_per_class < 1 || config.max_retries < 1)
    throw InvalidArgument("task sizes must be positive");

  for (int attempt = 0; attempt < config.max_retries; ++attempt) {
    SyntheticPLM model(config.model, derive_seed(seed, "task-model", static_cast<std::uint64_t>(attempt)));
    ProjectionSpec projection{config.model.prompt_dim(), config.sub_dim,
                              derive_seed(seed, "projection", static_cast<std::uint64_t>(attempt)), config.gamma};
    const Eigen::MatrixXd a = generate_projection(projection);

    Rng rng(derive_seed(seed, "task-data", static_cast<std::uint64_t>(attempt)));
    Eigen::VectorXd golden_z(config.sub_dim);
    for (Eigen::Index i = 0; i < golden_z.size(); ++i) golden_z(i) = rng.normal();
    const Eigen::VectorXd golden_prompt = project(a, golden_z);

    std::set<std::vector<int>> seen;
    std::vector<Sample> train;
    std::vector<Sample> test;
    if (!draw_balanced(model, golden_prompt, config, config.train_per_class, rng, seen, train)) continue;
    if (!draw_balanced(model, golden_prompt, config, config.test_per_class, rng, seen, test)) continue;

    const double ceiling = model.evaluate(golden_prompt, test).accuracy;
    const double floor = model.evaluate(Eigen::VectorXd::Zero(model.prompt_dim()), test).accuracy;
    if (ceiling - floor < config.min_gap) continue;

    return SyntheticTask{std::move(model), projection, std::move(golden_z), std::move(train), std::move(test),
                         floor, ceiling, attempt + 1};
  }
  throw TaskGenerationFailure("no task with golden/zero prompt accuracy gap >= " + std::to_string(config.min_gap) +
                              " after " + std::to_string(config.max_retries) + " attempts");
}

}  // namespace fedbpt
