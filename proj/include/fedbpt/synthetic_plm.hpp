#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fedbpt/oracle.hpp"
#include "fedbpt/subspace.hpp"

namespace fedbpt {

struct SyntheticPlmConfig {
  int vocab_size = 100;
  int embed_dim = 20;
  int prompt_tokens = 5;
  int hidden_dim = 32;
  int num_classes = 4;
  double logit_scale = 10.0;  // multiplies the output layer (inverse temperature)

  Eigen::Index prompt_dim() const { return static_cast<Eigen::Index>(prompt_tokens) * embed_dim; }
};

/// Frozen desk-scale classifier standing in for a PLM. The prompt is reshaped
/// into prompt_tokens pseudo-token embeddings, mean-pooled together with the
/// input token embeddings, and fed through tanh(W1 x) -> W2 -> softmax.
class SyntheticPLM final : public Oracle {
 public:
  /// Weights drawn from Rng(seed): embedding N(0, 1) (one-hot fan-in of 1),
  /// W1 N(0, 1/embed_dim), W2 N(0, 1/hidden_dim), i.e. std 1/sqrt(fan_in).
  SyntheticPLM(const SyntheticPlmConfig& config, std::uint64_t seed);

  /// All weights zero: every input yields uniform logits.
  static SyntheticPLM degenerate(const SyntheticPlmConfig& config);

  const SyntheticPlmConfig& config() const { return config_; }
  Eigen::Index prompt_dim() const override { return config_.prompt_dim(); }
  int num_classes() const override { return config_.num_classes; }

  LossReport evaluate(const Eigen::VectorXd& prompt, std::span<const Sample> batch,
                      bool per_sample = false) const override;
  std::vector<int> predict(const Eigen::VectorXd& prompt, std::span<const Sample> batch) const override;

  /// num_classes x |batch| logits.
  Eigen::MatrixXd logits(const Eigen::VectorXd& prompt, std::span<const Sample> batch) const;

 private:
  explicit SyntheticPLM(const SyntheticPlmConfig& config);
  void check(const Eigen::VectorXd& prompt, std::span<const Sample> batch) const;

  SyntheticPlmConfig config_;
  Eigen::MatrixXd embedding_;  // embed_dim x vocab_size, one column per token
  Eigen::MatrixXd w1_;         // hidden_dim x embed_dim
  Eigen::MatrixXd w2_;         // num_classes x hidden_dim
};

struct TaskConfig {
  SyntheticPlmConfig model;
  Eigen::Index sub_dim = 10;
  double gamma = 1.0;
  int seq_len = 16;
  int train_per_class = 40;
  int test_per_class = 100;
  double min_gap = 0.10;
  int max_retries = 50;
};

/// A generated task: the teacher model, the projection the golden prompt lives
/// behind, and class-balanced train/test sets labeled by the teacher at
/// p* = A * golden_z.
struct SyntheticTask {
  SyntheticPLM model;
  ProjectionSpec projection;
  Eigen::VectorXd golden_z;
  std::vector<Sample> train;
  std::vector<Sample> test;
  double floor_accuracy = 0.0;    // zero-prompt test accuracy
  double ceiling_accuracy = 0.0;  // golden-prompt test accuracy
  int attempts = 0;
};

/// Resamples (model, golden_z, data) until the golden prompt beats the zero
/// prompt by min_gap test accuracy; throws TaskGenerationFailure otherwise.
SyntheticTask generate_task(const TaskConfig& config, std::uint64_t seed);

}  // namespace fedbpt
