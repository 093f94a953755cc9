#include "fedbpt/client.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fedbpt/errors.hpp"
#include "fedbpt/subspace.hpp"

namespace fedbpt {
namespace {

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(std::move(w));
  return words;
}

std::size_t masked_count(double rate, std::size_t length) {
  return static_cast<std::size_t>(std::lround(rate * static_cast<double>(length)));
}

}  // namespace

std::vector<Sample> perturb_batch(std::span<const Sample> batch, double rate, int vocab_size, Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw InvalidArgument("mask rate must lie in [0, 1]");
  if (vocab_size < 1) throw InvalidArgument("vocab_size must be positive");

  // Text samples are perturbed word by word; replacements come from the
  // batch's own words, which stand in for the vocabulary.
  std::vector<std::string> word_pool;
  for (const auto& s : batch)
    if (!s.text.empty())
      for (auto& w : split_words(s.text)) word_pool.push_back(std::move(w));

  std::vector<Sample> out(batch.begin(), batch.end());
  for (auto& s : out) {
    if (!s.text.empty() && !word_pool.empty()) {
      auto words = split_words(s.text);
      for (std::size_t pos : rng.choose(words.size(), masked_count(rate, words.size())))
        words[pos] = word_pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(word_pool.size()) - 1))];
      std::string joined;
      for (std::size_t i = 0; i < words.size(); ++i) joined += (i ? " " : "") + words[i];
      s.text = std::move(joined);
      std::vector<int> ids;
      for (const auto& w : words) ids.push_back(static_cast<int>(fnv1a(w) % static_cast<std::uint64_t>(vocab_size)));
      s.token_ids = std::move(ids);
      continue;
    }
    for (std::size_t pos : rng.choose(s.token_ids.size(), masked_count(rate, s.token_ids.size())))
      s.token_ids[pos] = static_cast<int>(rng.uniform_int(0, vocab_size - 1));
  }
  return out;
}

double ratio_objective(const Oracle& oracle, const Eigen::MatrixXd& projection, const Eigen::VectorXd& z,
                       std::span<const Sample> clean, std::span<const Sample> perturbed, double floor) {
  if (clean.size() != perturbed.size()) throw InvalidArgument("clean and perturbed batches differ in size");
  const Eigen::VectorXd prompt = project(projection, z);
  const double clean_loss = oracle.evaluate(prompt, clean).loss;
  const double perturbed_loss = oracle.evaluate(prompt, perturbed).loss;
  return clean_loss / std::max(perturbed_loss, floor);
}

long client_round_evaluations(const ClientRoundConfig& config) {
  const long per_candidate = config.mask_rate > 0.0 ? 2 : 1;
  return static_cast<long>(config.local_iterations - 1) * config.population * per_candidate + 1;
}

ClientUpdate run_client_update(const Broadcast& broadcast, const Shard& shard, const Oracle& oracle,
                               const Eigen::MatrixXd& projection, int vocab_size, const ClientRoundConfig& config) {
  if (shard.samples.empty()) throw InvalidArgument("client " + std::to_string(config.client_id) + " has an empty shard");
  if (config.local_iterations < 1) throw InvalidArgument("local_iterations must be positive");
  if (config.population < 1) throw InvalidArgument("population must be positive");
  if (!(config.mask_rate >= 0.0 && config.mask_rate <= 1.0)) throw InvalidArgument("mask rate must lie in [0, 1]");
  if (!(broadcast.step > 0.0)) throw InvalidArgument("broadcast step must be positive");
  if (projection.cols() != broadcast.mean.size()) throw InvalidArgument("projection does not match broadcast mean");

  try {
    auto dist = distribution_from<double>(broadcast.mean, broadcast.step, broadcast.cov);
    auto params = make_cma_params<double>(dist.dim, config.population, 0, config.weights);
    params.sigma_min = config.sigma_min;

    Rng rng(derive_seed(config.global_seed, "client", static_cast<std::uint64_t>(config.round),
                        static_cast<std::uint64_t>(config.client_id)));
    const std::span<const Sample> clean(shard.samples);

    ClientResult upload;
    upload.client_id = config.client_id;
    upload.sample_count = shard.size();
    upload.step_lengths.push_back(broadcast.step);

    for (int j = 1; j < config.local_iterations; ++j) {
      // One mask set per iteration, shared by every candidate of the iteration.
      std::vector<Sample> perturbed;
      if (config.mask_rate > 0.0) perturbed = perturb_batch(clean, config.mask_rate, vocab_size, rng);

      const auto candidates = sample_population(dist, config.population, rng);
      std::vector<RankedSample<double>> ranked;
      ranked.reserve(candidates.size());
      for (const auto& z : candidates) {
        const double fitness = config.mask_rate > 0.0
                                   ? ratio_objective(oracle, projection, z, clean, perturbed, config.denominator_floor)
                                   : oracle.evaluate(project(projection, z), clean).loss;
        ranked.push_back({z, fitness});
      }
      dist = update(dist, ranked, params, dist.step);
      upload.step_lengths.push_back(dist.step);
    }

    upload.final_mean = dist.mean;
    upload.local_loss = oracle.evaluate(project(projection, dist.mean), clean).loss;
    LocalState local{dist.mean, dist.step, dist.cov, shard.size()};
    return ClientUpdate{std::move(upload), std::move(local)};
  } catch (const RoundFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw RoundFailure(config.client_id, e.what());
  }
}

}  // namespace fedbpt
