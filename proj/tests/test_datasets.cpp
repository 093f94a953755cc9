#include <algorithm>
#include <filesystem>
#include <fstream>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <doctest.h>

#include "fedbpt/datasets.hpp"
#include "fedbpt/errors.hpp"
#include "fedbpt/rng.hpp"

using namespace fedbpt;
namespace fs = std::filesystem;

namespace {

// Distinct samples: token_ids[0] is a running id.
std::vector<Sample> pool(std::vector<int> per_class) {
  std::vector<Sample> out;
  int id = 0;
  for (std::size_t c = 0; c < per_class.size(); ++c)
    for (int i = 0; i < per_class[c]; ++i) out.push_back({{id++, 7}, static_cast<int>(c), {}});
  return out;
}

std::multiset<int> ids(std::span<const Sample> samples) {
  std::multiset<int> out;
  for (const auto& s : samples) out.insert(s.token_ids[0]);
  return out;
}

std::multiset<int> ids(const std::vector<Shard>& shards) {
  std::multiset<int> out;
  for (const auto& sh : shards)
    for (const auto& s : sh.samples) out.insert(s.token_ids[0]);
  return out;
}

// Mean over shards of the largest class fraction.
double skew(const std::vector<Shard>& shards, int classes) {
  double total = 0;
  for (const auto& sh : shards) {
    const auto counts = class_counts(sh.samples, classes);
    total += double(*std::max_element(counts.begin(), counts.end())) / sh.size();
  }
  return total / double(shards.size());
}

fs::path write_temp(const std::string& name, const std::string& text) {
  const auto path = fs::temp_directory_path() / name;
  std::ofstream(path) << text;
  return path;
}

}  // namespace

TEST_SUITE("datasets") {

TEST_CASE("few-shot selection counts") {
  const auto p = pool({100, 60});
  const auto picked = few_shot_select(p, 40, 3);
  CHECK(picked.size() == 80);
  CHECK(class_counts(picked, 2) == std::vector<int>{40, 40});
  const auto ids_picked = ids(picked);
  CHECK(std::set<int>(ids_picked.begin(), ids_picked.end()).size() == 80);
  CHECK(few_shot_select(p, 40, 3) == picked);
}

TEST_CASE("few-shot selection takes a whole class when asked") {
  const auto p = pool({60, 40});
  const auto picked = few_shot_select(p, 40, 9);
  std::multiset<int> class1;
  for (const auto& s : picked)
    if (s.label == 1) class1.insert(s.token_ids[0]);
  std::multiset<int> expected;
  for (int i = 60; i < 100; ++i) expected.insert(i);
  CHECK(class1 == expected);
}

TEST_CASE("few-shot errors name the class") {
  auto p = pool({10, 10, 10, 0, 10});
  try {
    few_shot_select(p, 5, 1);
    FAIL("expected an error");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("class 3") != std::string::npos);
  }
  CHECK_THROWS_AS(few_shot_select(pool({3, 10}), 5, 1), InvalidArgument);
}

TEST_CASE("IID split is even") {
  const auto shards = dirichlet_partition(pool({40, 40}), PartitionSpec{10, 1.0, 5, PartitionMode::Iid});
  REQUIRE(shards.size() == 10);
  for (int k = 0; k < 10; ++k) {
    CHECK(shards[k].client_id == k);
    CHECK(shards[k].size() == 8);
  }
  CHECK(ids(shards) == ids(pool({40, 40})));
}

TEST_CASE("partition preconditions") {
  CHECK_THROWS_AS(dirichlet_partition(pool({3, 3}), PartitionSpec{7, 1.0, 1, PartitionMode::Iid}), InvalidArgument);
  CHECK_THROWS_AS(dirichlet_partition(pool({3, 3}), PartitionSpec{2, 0.0, 1, PartitionMode::Dirichlet}),
                  InvalidArgument);
}

TEST_CASE("Dirichlet partition is complete and disjoint on random pools") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = static_cast<int>(rng.uniform_int(1, 6));
    std::vector<int> sizes;
    for (int c = 0; c < classes; ++c) sizes.push_back(static_cast<int>(rng.uniform_int(0, 50)));
    sizes[0] += 12;
    const auto p = pool(sizes);
    const int k = static_cast<int>(rng.uniform_int(1, 12));
    const double alpha = std::pow(10.0, rng.uniform01() * 4 - 2);
    const auto mode = trial % 4 == 0 ? PartitionMode::Iid : PartitionMode::Dirichlet;
    const auto shards = dirichlet_partition(p, PartitionSpec{k, alpha, rng.uniform_int(0, 1 << 30) + 0ULL, mode});
    REQUIRE(static_cast<int>(shards.size()) == k);
    REQUIRE(ids(shards) == ids(p));
    for (const auto& sh : shards) REQUIRE(sh.size() >= 1);
  }
}

TEST_CASE("large alpha approaches the IID class mix") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto shards = dirichlet_partition(pool({100, 100, 100, 100}), PartitionSpec{10, 1e6, seed});
    for (const auto& sh : shards)
      for (int n : class_counts(sh.samples, 4)) REQUIRE(std::abs(n - 10) <= 3);
  }
}

TEST_CASE("smaller alpha means more skew") {
  auto mean_skew = [](double alpha) {
    double s = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed)
      s += skew(dirichlet_partition(pool({100, 100, 100, 100}), PartitionSpec{10, alpha, seed}), 4);
    return s / 20;
  };
  const double a01 = mean_skew(0.1), a1 = mean_skew(1.0), a100 = mean_skew(100.0);
  CHECK(a01 > a1);
  CHECK(a1 > a100);
}

TEST_CASE("partition is reproducible") {
  const auto p = pool({30, 30, 30});
  const auto a = dirichlet_partition(p, PartitionSpec{5, 0.5, 8});
  const auto b = dirichlet_partition(p, PartitionSpec{5, 0.5, 8});
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k].samples == b[k].samples);
}

TEST_CASE("hash tokenizer") {
  const auto t = hash_tokenize("the cat  the\tdog", 50);
  REQUIRE(t.size() == 4);
  CHECK(t[0] == t[2]);
  for (int x : t) CHECK((x >= 0 && x < 50));
  CHECK(hash_tokenize("", 50).empty());
}

TEST_CASE("jsonl loading") {
  const auto path = write_temp("fedbpt_ok.jsonl", "{\"token_ids\":[1,2,3],\"label\":0}\n\n{\"text\":\"a b\",\"label\":2}\n");
  const auto samples = load_jsonl(path, 10);
  REQUIRE(samples.size() == 2);
  CHECK(samples[0].token_ids == std::vector<int>{1, 2, 3});
  CHECK(samples[0].label == 0);
  CHECK(samples[1].text == "a b");
  CHECK(samples[1].token_ids == hash_tokenize("a b", 10));

  CHECK(load_jsonl(write_temp("fedbpt_empty.jsonl", "")).empty());

  const auto round_trip = fs::temp_directory_path() / "fedbpt_rt.jsonl";
  save_jsonl(round_trip, samples);
  CHECK(load_jsonl(round_trip, 10) == samples);
}

TEST_CASE("jsonl errors carry the line number") {
  std::string text;
  for (int i = 0; i < 6; ++i) text += "{\"token_ids\":[1],\"label\":1}\n";
  text += "{\"token_ids\":[1]}\n";
  try {
    load_jsonl(write_temp("fedbpt_bad.jsonl", text));
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.line() == 7);
    CHECK(std::string(e.what()).find("line 7") != std::string::npos);
  }
  CHECK_THROWS_AS(load_jsonl(write_temp("fedbpt_bad2.jsonl", "{not json}\n")), FormatError);
  CHECK_THROWS_AS(load_jsonl(write_temp("fedbpt_bad3.jsonl", "{\"text\":\"x\",\"label\":0}\n")), FormatError);
  CHECK_THROWS_AS(load_jsonl(fs::temp_directory_path() / "fedbpt_missing.jsonl"), InvalidArgument);
}

}  // TEST_SUITE
