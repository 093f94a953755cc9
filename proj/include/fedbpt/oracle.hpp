#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fedbpt {

/// One labeled example. `text` is only carried for remote oracles that do
/// their own tokenization; local oracles read token_ids.
struct Sample {
  std::vector<int> token_ids;
  int label = 0;
  std::string text;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct LossReport {
  double loss = 0.0;      // mean cross-entropy over the batch
  double accuracy = 0.0;  // fraction of argmax-correct predictions
  std::optional<std::vector<double>> per_sample_loss;
  int num_classes = 0;

  friend bool operator==(const LossReport&, const LossReport&) = default;
};

/// Black-box boundary: (prompt, labeled batch) -> loss. Implementations must be
/// pure and safe to call concurrently.
class Oracle {
 public:
  virtual ~Oracle() = default;

  virtual Eigen::Index prompt_dim() const = 0;
  virtual int num_classes() const = 0;
  virtual LossReport evaluate(const Eigen::VectorXd& prompt, std::span<const Sample> batch,
                              bool per_sample = false) const = 0;

  /// Predicted class per sample. The default asks evaluate() for the
  /// per-sample loss under every candidate label in a single batch and takes
  /// the lowest-loss label (lowest index on ties), which is the argmax class
  /// for a cross-entropy oracle.
  virtual std::vector<int> predict(const Eigen::VectorXd& prompt, std::span<const Sample> batch) const;
};

/// Mean cross-entropy and argmax accuracy of a logits matrix (one column per
/// sample). Argmax ties resolve to the lowest class index.
LossReport score_logits(const Eigen::MatrixXd& logits, std::span<const Sample> batch, bool per_sample);

namespace testfn {

template <typename Derived>
double sphere(const Eigen::MatrixBase<Derived>& z) {
  return z.squaredNorm();
}

template <typename Derived>
double rosenbrock(const Eigen::MatrixBase<Derived>& z) {
  double f = 0.0;
  for (Eigen::Index i = 0; i + 1 < z.size(); ++i) {
    const double a = z(i + 1) - z(i) * z(i);
    const double b = 1.0 - z(i);
    f += 100.0 * a * a + b * b;
  }
  return f;
}

template <typename Derived>
double rastrigin(const Eigen::MatrixBase<Derived>& z) {
  double f = 10.0 * static_cast<double>(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) f += z(i) * z(i) - 10.0 * std::cos(2.0 * std::numbers::pi * z(i));
  return f;
}

}  // namespace testfn

/// Wraps an analytic function of the search vector. The batch is ignored and
/// the prompt is taken to be z itself (use with an identity projection).
class TestFunctionOracle final : public Oracle {
 public:
  using Function = std::function<double(const Eigen::VectorXd&)>;

  TestFunctionOracle(Eigen::Index dim, Function f) : dim_(dim), f_(std::move(f)) {}

  Eigen::Index prompt_dim() const override { return dim_; }
  int num_classes() const override { return 1; }
  LossReport evaluate(const Eigen::VectorXd& prompt, std::span<const Sample> batch,
                      bool per_sample = false) const override;

 private:
  Eigen::Index dim_;
  Function f_;
};

/// Forwards to another oracle and counts evaluate() calls.
class CountingOracle final : public Oracle {
 public:
  explicit CountingOracle(const Oracle& inner) : inner_(inner) {}

  Eigen::Index prompt_dim() const override { return inner_.prompt_dim(); }
  int num_classes() const override { return inner_.num_classes(); }
  LossReport evaluate(const Eigen::VectorXd& prompt, std::span<const Sample> batch,
                      bool per_sample = false) const override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return inner_.evaluate(prompt, batch, per_sample);
  }
  std::vector<int> predict(const Eigen::VectorXd& prompt, std::span<const Sample> batch) const override {
    return inner_.predict(prompt, batch);
  }

  long calls() const { return calls_.load(); }
  void reset() { calls_.store(0); }

 private:
  const Oracle& inner_;
  mutable std::atomic<long> calls_{0};
};

}  // namespace fedbpt
