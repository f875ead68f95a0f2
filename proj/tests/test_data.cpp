// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>
#include <stdexcept>

#include "proxel/data.hpp"
#include "proxel/io.hpp"

using namespace proxel;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec spec;
  spec.classes = 4;
  spec.features = 6;
  spec.train_size = 1000;
  spec.val_size = 50;
  spec.test_size = 80;
  spec.label_noise = 0.2;
  spec.seed = 42;
  return spec;
}

int corrupted_count(const Dataset& d) {
  int n = 0;
  for (auto f : d.corrupted) n += f ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("zero label noise produces zero corrupted flags") {
  SyntheticSpec spec = small_spec();
  spec.label_noise = 0.0;
  const DataSplits s = generate(spec);
  CHECK(corrupted_count(s.train) == 0);
  CHECK(corrupted_count(s.val) == 0);
  CHECK(corrupted_count(s.test) == 0);
}

TEST_CASE("corrupted count at 20 percent noise matches the recorded draw") {
  const DataSplits s = generate(small_spec());
  const int n = corrupted_count(s.train);
  // Frozen from this seed; the binomial mean is 200.
  CHECK(n == 184);
  CHECK(corrupted_count(s.val) == 0);
  CHECK(corrupted_count(s.test) == 0);
}

TEST_CASE("generation is bit-identical for a repeated seed") {
  const DataSplits a = generate(small_spec());
  const DataSplits b = generate(small_spec());
  CHECK(a.train.X == b.train.X);
  CHECK(a.train.y == b.train.y);
  CHECK(a.train.corrupted == b.train.corrupted);
  CHECK(a.test.X == b.test.X);
}

TEST_CASE("every flipped label differs from the original") {
  SyntheticSpec noisy = small_spec();
  SyntheticSpec clean = small_spec();
  clean.label_noise = 0.0;
  const DataSplits a = generate(noisy);
  const DataSplits b = generate(clean);
  // The flip stream is separate from the sampling stream, so the features
  // and pre-flip labels coincide.
  REQUIRE(a.train.X == b.train.X);
  int flips = 0;
  for (std::size_t i = 0; i < a.train.y.size(); ++i) {
    if (a.train.corrupted[i]) {
      CHECK(a.train.y[i] != b.train.y[i]);
      ++flips;
    } else {
      CHECK(a.train.y[i] == b.train.y[i]);
    }
  }
  CHECK(flips == corrupted_count(a.train));
}

TEST_CASE("split index sets are pairwise disjoint") {
  const DataSplits s = generate(small_spec());
  std::set<std::int64_t> seen;
  for (const Dataset* d : {&s.train, &s.val, &s.test})
    for (auto id : d->index) CHECK(seen.insert(id).second);
  CHECK(seen.size() == 1000 + 50 + 80);
}

TEST_CASE("sample_probe with the full size permutes the whole set") {
  const DataSplits s = generate(small_spec());
  const Dataset p = sample_probe(s.train, s.train.size(), 7);
  std::set<std::int64_t> got(p.index.begin(), p.index.end());
  std::set<std::int64_t> want(s.train.index.begin(), s.train.index.end());
  CHECK(got == want);
}

TEST_CASE("sample_probe of one element is a singleton from the set") {
  const DataSplits s = generate(small_spec());
  const Dataset p = sample_probe(s.train, 1, 7);
  CHECK(p.size() == 1);
  CHECK(std::count(s.train.index.begin(), s.train.index.end(), p.index[0]) == 1);
}

TEST_CASE("sample_probe rejects out-of-range sizes") {
  const DataSplits s = generate(small_spec());
  CHECK_THROWS_AS(sample_probe(s.train, s.train.size() + 1, 7), std::invalid_argument);
  CHECK_THROWS_AS(sample_probe(s.train, 0, 7), std::invalid_argument);
}

TEST_CASE("two probe draws overlap near the hypergeometric mean") {
  const DataSplits s = generate(small_spec());
  const Dataset a = sample_probe(s.train, 100, 1);
  const Dataset b = sample_probe(s.train, 100, 2);
  std::set<std::int64_t> sa(a.index.begin(), a.index.end());
  int overlap = 0;
  for (auto id : b.index) overlap += sa.count(id) ? 1 : 0;
  // Frozen from these seeds; the expected overlap is 100*100/1000 = 10.
  CHECK(overlap == 10);
}

TEST_CASE("sample_disjoint avoids the ids already used") {
  const DataSplits s = generate(small_spec());
  const Dataset probe = sample_probe(s.train, 200, 3);
  const Dataset rest = sample_disjoint(s.train, probe, 300, 4);
  std::set<std::int64_t> used(probe.index.begin(), probe.index.end());
  CHECK(rest.size() == 300);
  for (auto id : rest.index) CHECK(used.count(id) == 0);
  CHECK_THROWS_AS(sample_disjoint(s.train, probe, 801, 4), std::invalid_argument);
}

TEST_CASE("dataset CSV round trip is lossless") {
  SyntheticSpec spec = small_spec();
  spec.train_size = 40;
  const DataSplits s = generate(spec);
  const std::string path = "test_data_roundtrip.csv";
  save_dataset_csv(s.train, path);
  const Dataset back = load_dataset_csv(path);
  CHECK(back.X == s.train.X);
  CHECK(back.y == s.train.y);
  CHECK(back.corrupted == s.train.corrupted);
  CHECK(back.index == s.train.index);
  std::remove(path.c_str());
}

TEST_CASE("split persistence keeps data and spec sidecar") {
  SyntheticSpec spec = small_spec();
  spec.train_size = 30;
  spec.val_size = 10;
  spec.test_size = 10;
  const DataSplits s = generate(spec);
  const std::string dir = "test_data_splits";
  save_splits(s, spec, dir);
  const DataSplits back = load_splits(dir);
  CHECK(back.train.X == s.train.X);
  CHECK(back.val.y == s.val.y);
  CHECK(back.test.index == s.test.index);
  const SyntheticSpec side = load_spec_sidecar(dir);
  CHECK(side.seed == spec.seed);
  CHECK(side.label_noise == spec.label_noise);
  CHECK(side.classes == spec.classes);
  for (const char* f : {"train.csv", "val.csv", "test.csv", "dataset.json"})
    std::remove((dir + std::string("/") + f).c_str());
}

TEST_CASE("spec JSON round trip preserves every field") {
  SyntheticSpec spec = small_spec();
  spec.separation = 2.5;
  const SyntheticSpec back = spec_from_json(spec_to_json(spec));
  CHECK(back.classes == spec.classes);
  CHECK(back.features == spec.features);
  CHECK(back.train_size == spec.train_size);
  CHECK(back.val_size == spec.val_size);
  CHECK(back.test_size == spec.test_size);
  CHECK(back.separation == spec.separation);
  CHECK(back.label_noise == spec.label_noise);
  CHECK(back.seed == spec.seed);
}

TEST_CASE("spec validation rejects out-of-range fields") {
  SyntheticSpec spec = small_spec();
  spec.label_noise = 1.0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = small_spec();
  spec.classes = 1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = small_spec();
  spec.train_size = 0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}
