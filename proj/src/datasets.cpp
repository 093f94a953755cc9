#include "fedbpt/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fedbpt/errors.hpp"
#include "fedbpt/rng.hpp"

namespace fedbpt {

std::vector<int> class_counts(std::span<const Sample> samples, int num_classes) {
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (const auto& s : samples)
    if (s.label >= 0 && s.label < num_classes) ++counts[static_cast<std::size_t>(s.label)];
  return counts;
}

std::vector<Sample> few_shot_select(std::span<const Sample> pool, int per_class, std::uint64_t seed) {
  if (per_class < 1) throw InvalidArgument("per_class must be positive");
  int max_label = -1;
  for (const auto& s : pool) {
    if (s.label < 0) throw InvalidArgument("negative label in pool");
    max_label = std::max(max_label, s.label);
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < pool.size(); ++i) by_class[static_cast<std::size_t>(pool[i].label)].push_back(i);

  Rng rng(seed);
  std::vector<Sample> out;
  out.reserve(by_class.size() * static_cast<std::size_t>(per_class));
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const auto& members = by_class[c];
    if (members.size() < static_cast<std::size_t>(per_class))
      throw InvalidArgument("class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                            " samples, fewer than the " + std::to_string(per_class) + " requested");
    for (std::size_t pick : rng.choose(members.size(), static_cast<std::size_t>(per_class)))
      out.push_back(pool[members[pick]]);
  }
  return out;
}

namespace {

// Splits `total` into integer counts proportional to `shares` (summing to 1).
// Leftover units go to the largest fractional parts, lowest index first on ties.
std::vector<int> largest_remainder(const std::vector<double>& shares, int total) {
  const std::size_t k = shares.size();
  std::vector<int> counts(k);
  std::vector<double> remainder(k);
  int assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = shares[i] * total;
    counts[i] = static_cast<int>(std::floor(exact));
    remainder[i] = exact - counts[i];
    assigned += counts[i];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % k, ++assigned) ++counts[order[i]];
  return counts;
}

}  // namespace

std::vector<Shard> dirichlet_partition(std::span<const Sample> samples, const PartitionSpec& spec) {
  if (spec.num_clients < 1) throw InvalidArgument("num_clients must be positive");
  if (static_cast<std::size_t>(spec.num_clients) > samples.size())
    throw InvalidArgument("more clients (" + std::to_string(spec.num_clients) + ") than samples (" +
                          std::to_string(samples.size()) + ")");
  if (spec.mode == PartitionMode::Dirichlet && !(spec.alpha > 0)) throw InvalidArgument("alpha must be positive");

  const auto k = static_cast<std::size_t>(spec.num_clients);
  std::vector<Shard> shards(k);
  for (std::size_t i = 0; i < k; ++i) shards[i].client_id = static_cast<int>(i);

  Rng rng(spec.seed);
  if (spec.mode == PartitionMode::Iid) {
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    for (std::size_t i = 0; i < order.size(); ++i) shards[i % k].samples.push_back(samples[order[i]]);
    return shards;
  }

  int max_label = -1;
  for (const auto& s : samples) max_label = std::max(max_label, s.label);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[static_cast<std::size_t>(samples[i].label)].push_back(i);

  for (auto& members : by_class) {
    std::vector<double> shares(k);
    double sum = 0.0;
    for (auto& q : shares) sum += (q = rng.gamma(spec.alpha));
    if (!(sum > 0.0)) {
      // Every gamma draw underflowed (tiny alpha): give the class to one client.
      std::fill(shares.begin(), shares.end(), 0.0);
      shares[static_cast<std::size_t>(rng.uniform_int(0, spec.num_clients - 1))] = 1.0;
    } else {
      for (auto& q : shares) q /= sum;
    }
    rng.shuffle(members);
    const auto counts = largest_remainder(shares, static_cast<int>(members.size()));
    std::size_t next = 0;
    for (std::size_t c = 0; c < k; ++c)
      for (int n = 0; n < counts[c]; ++n) shards[c].samples.push_back(samples[members[next++]]);
  }

  for (auto& shard : shards) {
    if (!shard.samples.empty()) continue;
    auto largest = std::max_element(shards.begin(), shards.end(),
                                    [](const Shard& a, const Shard& b) { return a.samples.size() < b.samples.size(); });
    shard.samples.push_back(std::move(largest->samples.back()));
    largest->samples.pop_back();
  }
  return shards;
}

std::vector<int> hash_tokenize(std::string_view text, int vocab_size) {
  if (vocab_size < 1) throw InvalidArgument("vocab_size must be positive");
  std::vector<int> ids;
  std::istringstream words{std::string(text)};
  std::string word;
  while (words >> word) ids.push_back(static_cast<int>(fnv1a(word) % static_cast<std::uint64_t>(vocab_size)));
  return ids;
}

std::vector<Sample> load_jsonl(const std::filesystem::path& path, std::optional<int> vocab_size) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());

  std::vector<Sample> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(lineno, e.what());
    }
    if (!j.is_object()) throw FormatError(lineno, "expected a JSON object");
    if (!j.contains("label") || !j["label"].is_number_integer()) throw FormatError(lineno, "missing integer \"label\"");

    Sample s;
    s.label = j["label"].get<int>();
    if (s.label < 0) throw FormatError(lineno, "negative label");
    if (j.contains("token_ids")) {
      try {
        s.token_ids = j["token_ids"].get<std::vector<int>>();
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(lineno, std::string("bad \"token_ids\": ") + e.what());
      }
      if (j.contains("text") && j["text"].is_string()) s.text = j["text"].get<std::string>();
    } else if (j.contains("text") && j["text"].is_string()) {
      if (!vocab_size) throw FormatError(lineno, "\"text\" sample needs a vocab_size for tokenizing");
      s.text = j["text"].get<std::string>();
      s.token_ids = hash_tokenize(s.text, *vocab_size);
    } else {
      throw FormatError(lineno, "missing \"token_ids\" or \"text\"");
    }
    if (s.token_ids.empty()) throw FormatError(lineno, "empty token sequence");
    out.push_back(std::move(s));
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path, std::span<const Sample> samples) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  for (const auto& s : samples) {
    nlohmann::json j{{"token_ids", s.token_ids}, {"label", s.label}};
    if (!s.text.empty()) j["text"] = s.text;
    out << j.dump() << '\n';
  }
}

}  // namespace fedbpt
