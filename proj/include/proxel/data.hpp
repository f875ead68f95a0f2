// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "proxel/linalg.hpp"

namespace proxel {

struct SyntheticSpec {
  int classes = 8;
  Index features = 32;
  Index train_size = 2000;
  Index val_size = 200;
  Index test_size = 1000;
  double separation = 4.0;   // class-mean radius
  double label_noise = 0.2;  // train-label flip rate, in [0, 1)
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  Matrix X;  // samples x features, row i is sample i
  std::vector<int> y;
  std::vector<std::uint8_t> corrupted;
  std::vector<std::int64_t> index;  // global sample ids, disjoint across splits
  std::uint64_t seed = 0;

  Index size() const { return X.rows(); }
  Index features() const { return X.cols(); }
  Vector sample(Index i) const { return X.row(i).transpose(); }
};

struct DataSplits {
  Dataset train, val, test;
};

/// Gaussian mixture: class means uniform on the sphere of radius
/// spec.separation, unit-variance isotropic noise. A label_noise fraction of
/// train labels is flipped (per-sample Bernoulli) to a different class and
/// flagged; val/test stay clean. Deterministic given spec.seed.
DataSplits generate(const SyntheticSpec& spec);

/// Uniform subset of N samples without replacement; keeps global ids.
/// Throws std::invalid_argument when N is out of range.
Dataset sample_probe(const Dataset& train, Index N, std::uint64_t seed);

/// Complement helper: the rows of `from` whose global ids are not in `used`,
/// uniformly subsampled to N. Used to draw probe and alignment sets that do
/// not overlap.
Dataset sample_disjoint(const Dataset& from, const Dataset& used, Index N, std::uint64_t seed);

void save_dataset_csv(const Dataset& data, const std::string& path);
Dataset load_dataset_csv(const std::string& path);

/// Writes train.csv / val.csv / test.csv plus a dataset.json sidecar with
/// the generating spec and seed.
void save_splits(const DataSplits& splits, const SyntheticSpec& spec, const std::string& dir);
DataSplits load_splits(const std::string& dir);
SyntheticSpec load_spec_sidecar(const std::string& dir);

SyntheticSpec spec_from_json(const std::string& text);
std::string spec_to_json(const SyntheticSpec& spec);

}  // namespace proxel
