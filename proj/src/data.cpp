// SPDX-License-Identifier: Apache-2.0
#include "proxel/data.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "proxel/io.hpp"
#include "proxel/rng.hpp"

namespace proxel {

void SyntheticSpec::validate() const {
  if (classes < 2) throw std::invalid_argument("spec: need at least 2 classes");
  if (features < 1) throw std::invalid_argument("spec: need at least 1 feature");
  if (train_size < 1 || val_size < 1 || test_size < 1)
    throw std::invalid_argument("spec: split sizes must be >= 1");
  if (separation <= 0.0) throw std::invalid_argument("spec: separation must be positive");
  if (label_noise < 0.0 || label_noise >= 1.0)
    throw std::invalid_argument("spec: label_noise must be in [0, 1)");
}

namespace {

Matrix draw_class_means(const SyntheticSpec& spec, Rng& rng) {
  Matrix means(spec.classes, spec.features);
  for (int c = 0; c < spec.classes; ++c) {
    Vector dir(spec.features);
    double norm2 = 0.0;
    do {
      for (Index j = 0; j < spec.features; ++j) dir[j] = rng.normal();
      norm2 = dir.squaredNorm();
    } while (norm2 == 0.0);
    means.row(c) = (spec.separation / std::sqrt(norm2)) * dir.transpose();
  }
  return means;
}

// Label flips draw from their own stream so that the same seed produces the
// same features and original labels at every noise rate.
Dataset draw_split(const SyntheticSpec& spec, const Matrix& means, Index count,
                   std::int64_t first_id, bool corrupt, Rng& rng, Rng& corrupt_rng) {
  Dataset d;
  d.seed = spec.seed;
  d.X.resize(count, spec.features);
  d.y.resize(static_cast<std::size_t>(count));
  d.corrupted.assign(static_cast<std::size_t>(count), 0);
  d.index.resize(static_cast<std::size_t>(count));

  for (Index i = 0; i < count; ++i) {
    const int c = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(spec.classes)));
    for (Index j = 0; j < spec.features; ++j) d.X(i, j) = means(c, j) + rng.normal();
    int label = c;
    if (corrupt && spec.label_noise > 0.0 && corrupt_rng.uniform01() < spec.label_noise) {
      // flip to a different class, uniform over the remaining ones
      const int shift = 1 + static_cast<int>(corrupt_rng.uniform_below(
                                static_cast<std::uint64_t>(spec.classes - 1)));
      label = (c + shift) % spec.classes;
      d.corrupted[static_cast<std::size_t>(i)] = 1;
    }
    d.y[static_cast<std::size_t>(i)] = label;
    d.index[static_cast<std::size_t>(i)] = first_id + i;
  }
  return d;
}

}  // namespace

DataSplits generate(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "data.generate"));
  Rng corrupt_rng(derive_seed(spec.seed, "data.corrupt"));
  const Matrix means = draw_class_means(spec, rng);

  DataSplits splits;
  std::int64_t next_id = 0;
  splits.train = draw_split(spec, means, spec.train_size, next_id, true, rng, corrupt_rng);
  next_id += spec.train_size;
  splits.val = draw_split(spec, means, spec.val_size, next_id, false, rng, corrupt_rng);
  next_id += spec.val_size;
  splits.test = draw_split(spec, means, spec.test_size, next_id, false, rng, corrupt_rng);
  return splits;
}

namespace {

Dataset take_rows(const Dataset& src, const std::vector<Index>& rows) {
  Dataset out;
  out.seed = src.seed;
  out.X.resize(static_cast<Index>(rows.size()), src.X.cols());
  out.y.resize(rows.size());
  out.corrupted.resize(rows.size());
  out.index.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Index r = rows[i];
    out.X.row(static_cast<Index>(i)) = src.X.row(r);
    out.y[i] = src.y[static_cast<std::size_t>(r)];
    out.corrupted[i] = src.corrupted[static_cast<std::size_t>(r)];
    out.index[i] = src.index[static_cast<std::size_t>(r)];
  }
  return out;
}

}  // namespace

Dataset sample_probe(const Dataset& train, Index N, std::uint64_t seed) {
  if (N < 1 || N > train.size())
    throw std::invalid_argument("sample_probe: N=" + std::to_string(N) + " outside [1, " +
                                std::to_string(train.size()) + "]");
  std::vector<Index> rows(static_cast<std::size_t>(train.size()));
  std::iota(rows.begin(), rows.end(), Index{0});
  Rng rng(derive_seed(seed, "data.sample_probe"));
  rng.shuffle(rows);
  rows.resize(static_cast<std::size_t>(N));
  Dataset out = take_rows(train, rows);
  out.seed = seed;
  return out;
}

Dataset sample_disjoint(const Dataset& from, const Dataset& used, Index N, std::uint64_t seed) {
  std::unordered_set<std::int64_t> taken(used.index.begin(), used.index.end());
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(from.size()));
  for (Index i = 0; i < from.size(); ++i)
    if (!taken.count(from.index[static_cast<std::size_t>(i)])) rows.push_back(i);
  if (N < 1 || N > static_cast<Index>(rows.size()))
    throw std::invalid_argument("sample_disjoint: N=" + std::to_string(N) +
                                " exceeds the " + std::to_string(rows.size()) +
                                " available samples");
  Rng rng(derive_seed(seed, "data.sample_disjoint"));
  rng.shuffle(rows);
  rows.resize(static_cast<std::size_t>(N));
  Dataset out = take_rows(from, rows);
  out.seed = seed;
  return out;
}

void save_dataset_csv(const Dataset& data, const std::string& path) {
  std::string out = "index,label,corrupted";
  for (Index j = 0; j < data.features(); ++j) out += ",f" + format_int(j);
  out += '\n';
  for (Index i = 0; i < data.size(); ++i) {
    const std::size_t s = static_cast<std::size_t>(i);
    out += format_int(data.index[s]);
    out += ',';
    out += format_int(data.y[s]);
    out += ',';
    out += data.corrupted[s] ? '1' : '0';
    for (Index j = 0; j < data.features(); ++j) {
      out += ',';
      out += format_double(data.X(i, j));
    }
    out += '\n';
  }
  write_text_file(path, out);
}

Dataset load_dataset_csv(const std::string& path) {
  const std::string text = read_text_file(path);
  Dataset d;
  std::size_t pos = 0;
  bool header = true;
  Index feature_count = -1;
  std::vector<std::vector<double>> rows;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (header) {
      if (fields.size() < 4 || fields[0] != "index" || fields[1] != "label" ||
          fields[2] != "corrupted")
        throw std::runtime_error("dataset csv: unexpected header in " + path);
      feature_count = static_cast<Index>(fields.size()) - 3;
      header = false;
      continue;
    }
    if (static_cast<Index>(fields.size()) != feature_count + 3)
      throw std::runtime_error("dataset csv: ragged row in " + path);
    d.index.push_back(parse_int(fields[0]));
    d.y.push_back(static_cast<int>(parse_int(fields[1])));
    d.corrupted.push_back(static_cast<std::uint8_t>(parse_int(fields[2]) != 0));
    std::vector<double> feats(static_cast<std::size_t>(feature_count));
    for (Index j = 0; j < feature_count; ++j)
      feats[static_cast<std::size_t>(j)] = parse_double(fields[static_cast<std::size_t>(j) + 3]);
    rows.push_back(std::move(feats));
  }
  if (rows.empty()) throw std::runtime_error("dataset csv: no samples in " + path);
  d.X.resize(static_cast<Index>(rows.size()), feature_count);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Index j = 0; j < feature_count; ++j)
      d.X(static_cast<Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  return d;
}

std::string spec_to_json(const SyntheticSpec& spec) {
  JsonWriter w;
  w.begin_object();
  w.field("classes", spec.classes);
  w.field("features", static_cast<std::int64_t>(spec.features));
  w.field("train_size", static_cast<std::int64_t>(spec.train_size));
  w.field("val_size", static_cast<std::int64_t>(spec.val_size));
  w.field("test_size", static_cast<std::int64_t>(spec.test_size));
  w.field("separation", spec.separation);
  w.field("label_noise", spec.label_noise);
  w.field("seed", spec.seed);
  w.end_object();
  return w.str();
}

SyntheticSpec spec_from_json(const std::string& text) {
  const nlohmann::json doc = nlohmann::json::parse(text);
  SyntheticSpec spec;
  if (doc.contains("classes")) spec.classes = doc["classes"].get<int>();
  if (doc.contains("features")) spec.features = doc["features"].get<Index>();
  if (doc.contains("train_size")) spec.train_size = doc["train_size"].get<Index>();
  if (doc.contains("val_size")) spec.val_size = doc["val_size"].get<Index>();
  if (doc.contains("test_size")) spec.test_size = doc["test_size"].get<Index>();
  if (doc.contains("separation")) spec.separation = doc["separation"].get<double>();
  if (doc.contains("label_noise")) spec.label_noise = doc["label_noise"].get<double>();
  if (doc.contains("seed")) spec.seed = doc["seed"].get<std::uint64_t>();
  spec.validate();
  return spec;
}

void save_splits(const DataSplits& splits, const SyntheticSpec& spec, const std::string& dir) {
  ensure_directory(dir);
  save_dataset_csv(splits.train, dir + "/train.csv");
  save_dataset_csv(splits.val, dir + "/val.csv");
  save_dataset_csv(splits.test, dir + "/test.csv");
  write_text_file(dir + "/dataset.json", spec_to_json(spec));
}

SyntheticSpec load_spec_sidecar(const std::string& dir) {
  return spec_from_json(read_text_file(dir + "/dataset.json"));
}

DataSplits load_splits(const std::string& dir) {
  DataSplits splits;
  splits.train = load_dataset_csv(dir + "/train.csv");
  splits.val = load_dataset_csv(dir + "/val.csv");
  splits.test = load_dataset_csv(dir + "/test.csv");
  const SyntheticSpec spec = load_spec_sidecar(dir);
  splits.train.seed = splits.val.seed = splits.test.seed = spec.seed;
  return splits;
}

}  // namespace proxel
