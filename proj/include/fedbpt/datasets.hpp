#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fedbpt/oracle.hpp"

namespace fedbpt {

struct Shard {
  int client_id = 0;
  std::vector<Sample> samples;

  int size() const { return static_cast<int>(samples.size()); }
};

enum class PartitionMode { Iid, Dirichlet };

struct PartitionSpec {
  int num_clients = 10;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  PartitionMode mode = PartitionMode::Dirichlet;
};

/// Exactly per_class samples of every label present in the pool, uniformly
/// without replacement. Classes are 0..max_label; a missing or short class is
/// an error naming that class.
std::vector<Sample> few_shot_select(std::span<const Sample> pool, int per_class, std::uint64_t seed);

/// IID: shuffle then deal round-robin. DIRICHLET: per class, proportions over
/// clients ~ Dir(alpha), converted to counts by largest remainder. Shards that
/// end up empty take one sample from the largest shard.
std::vector<Shard> dirichlet_partition(std::span<const Sample> samples, const PartitionSpec& spec);

/// Whitespace tokenizer: FNV-1a of each word modulo vocab_size.
std::vector<int> hash_tokenize(std::string_view text, int vocab_size);

/// One JSON object per line: {"token_ids": [...], "label": c} or
/// {"text": "...", "label": c}. "text" lines need vocab_size for tokenizing.
std::vector<Sample> load_jsonl(const std::filesystem::path& path, std::optional<int> vocab_size = std::nullopt);
void save_jsonl(const std::filesystem::path& path, std::span<const Sample> samples);

/// Per-class counts, indexed by label.
std::vector<int> class_counts(std::span<const Sample> samples, int num_classes);

}  // namespace fedbpt
