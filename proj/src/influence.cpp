// SPDX-License-Identifier: Apache-2.0
#include "proxel/influence.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "proxel/io.hpp"
#include "proxel/threads.hpp"

namespace proxel {

double tracin_layer(const Vector& delta, const Vector& h, const Vector& delta2, const Vector& h2) {
  if (delta.size() != delta2.size() || h.size() != h2.size())
    throw std::invalid_argument("tracin_layer: dimension mismatch");
  return delta.dot(delta2) * h.dot(h2);
}

std::vector<std::size_t> influence_layers(const Model& model, bool exclude_ends) {
  std::vector<std::size_t> factored;
  for (std::size_t l = 0; l < model.layers.size(); ++l)
    if (!model.layers[l].is_dense()) factored.push_back(l);
  if (!factored.empty()) return factored;

  std::vector<std::size_t> out;
  const std::size_t L = model.layers.size();
  for (std::size_t l = 0; l < L; ++l) {
    if (exclude_ends && L >= 3 && (l == 0 || l == L - 1)) continue;
    out.push_back(l);
  }
  return out;
}

namespace {

// One parameter block: an (input, output) vector pair whose outer product
// is the block's weight gradient.
struct BlockVecs {
  Vector in;
  Vector out;
};

std::vector<BlockVecs> sample_blocks(const Model& model, const std::vector<std::size_t>& layers,
                                     const Vector& x, int label) {
  Trace trace = forward(model, x);
  backward(model, trace, label);
  std::vector<BlockVecs> blocks;
  blocks.reserve(layers.size() * 2);
  for (std::size_t l : layers) {
    if (l >= model.layers.size())
      throw std::invalid_argument("influence: layer index " + std::to_string(l) + " out of range");
    const Layer& layer = model.layers[l];
    const Vector& h = trace.inputs[l];
    const Vector& delta = trace.deltas[l];
    if (layer.is_dense()) {
      blocks.push_back({h, delta});
    } else {
      const FactoredLayer& f = layer.factored();
      blocks.push_back({Vector(f.B * h), delta});             // dA = delta (B h)^T
      blocks.push_back({h, Vector(f.A.transpose() * delta)});  // dB = (A^T delta) h^T
    }
  }
  return blocks;
}

void whiten_blocks(std::vector<BlockVecs>& blocks, const std::vector<std::size_t>& layers,
                   const KfacFactors& factors) {
  std::size_t b = 0;
  for (std::size_t l : layers) {
    const auto it = factors.layers.find(l);
    if (it == factors.layers.end())
      throw std::invalid_argument("if_scores: no factors for layer " + std::to_string(l));
    for (const BlockFactors& bf : it->second) {
      BlockVecs& v = blocks[b++];
      if (bf.inv_root_in.rows() != v.in.size() || bf.inv_root_out.rows() != v.out.size())
        throw std::invalid_argument("if_scores: factor dimensions do not match layer " +
                                    std::to_string(l));
      v.in = bf.inv_root_in * v.in;
      v.out = bf.inv_root_out * v.out;
    }
  }
}

// Shared core of tracin_scores and if_scores: similarity of every train
// gradient against the mean validation gradient, block by block. if_scores
// is this routine on whitened block vectors, which keeps the identity-factor
// case arithmetically identical to the inner variant.
InfluenceScores score_against_val_mean(const Model& model, const Dataset& train,
                                       const Dataset& val, TracinVariant variant,
                                       const std::vector<std::size_t>& layers,
                                       const KfacFactors* factors) {
  model.validate();
  if (val.size() < 1) throw std::invalid_argument("influence: empty validation set");
  if (layers.empty()) throw std::invalid_argument("influence: no eligible layers");

  // Mean validation gradient, one dense matrix per block.
  std::vector<std::vector<BlockVecs>> val_blocks(static_cast<std::size_t>(val.size()));
  parallel_for(val.size(), [&](Index i) {
    auto blocks = sample_blocks(model, layers, val.sample(i), val.y[static_cast<std::size_t>(i)]);
    if (factors) whiten_blocks(blocks, layers, *factors);
    val_blocks[static_cast<std::size_t>(i)] = std::move(blocks);
  });

  const std::size_t n_blocks = val_blocks.front().size();
  std::vector<Matrix> mean_grad(n_blocks);
  for (std::size_t b = 0; b < n_blocks; ++b)
    mean_grad[b] = Matrix::Zero(val_blocks.front()[b].out.size(), val_blocks.front()[b].in.size());
  for (const auto& blocks : val_blocks)
    for (std::size_t b = 0; b < n_blocks; ++b)
      mean_grad[b] += blocks[b].out * blocks[b].in.transpose();
  double mean_sq = 0.0;
  for (std::size_t b = 0; b < n_blocks; ++b) {
    mean_grad[b] /= static_cast<double>(val.size());
    mean_sq += mean_grad[b].squaredNorm();
  }
  const double mean_norm = std::sqrt(mean_sq);

  InfluenceScores out;
  out.scores.assign(static_cast<std::size_t>(train.size()), 0.0);
  out.model_id = model_id(model);
  std::atomic<std::size_t> warnings{0};

  parallel_for(train.size(), [&](Index i) {
    auto blocks = sample_blocks(model, layers, train.sample(i), train.y[static_cast<std::size_t>(i)]);
    if (factors) whiten_blocks(blocks, layers, *factors);
    double inner = 0.0, norm_sq = 0.0;
    for (std::size_t b = 0; b < n_blocks; ++b) {
      inner += blocks[b].out.dot(mean_grad[b] * blocks[b].in);
      norm_sq += blocks[b].out.squaredNorm() * blocks[b].in.squaredNorm();
    }
    if (variant == TracinVariant::Inner) {
      out.scores[static_cast<std::size_t>(i)] = inner;
    } else {
      const double denom = std::sqrt(norm_sq) * mean_norm;
      if (denom == 0.0) {
        warnings.fetch_add(1, std::memory_order_relaxed);
        out.scores[static_cast<std::size_t>(i)] = 0.0;
      } else {
        out.scores[static_cast<std::size_t>(i)] = inner / denom;
      }
    }
  });

  out.warnings = warnings.load();
  return out;
}

}  // namespace

InfluenceScores tracin_scores(const Model& model, const Dataset& train, const Dataset& val,
                              TracinVariant variant, const std::vector<std::size_t>& layers) {
  InfluenceScores out = score_against_val_mean(model, train, val, variant, layers, nullptr);
  out.estimator = variant == TracinVariant::Inner ? "tracin-inner" : "tracin-cos";
  return out;
}

KfacFactors kfac_factors(const Model& model, const Dataset& samples, double lambda,
                         const std::vector<std::size_t>& layers) {
  model.validate();
  if (samples.size() < 1) throw std::invalid_argument("kfac_factors: empty sample set");
  if (layers.empty()) throw std::invalid_argument("kfac_factors: no eligible layers");

  std::vector<std::vector<BlockVecs>> per_sample(static_cast<std::size_t>(samples.size()));
  parallel_for(samples.size(), [&](Index i) {
    per_sample[static_cast<std::size_t>(i)] =
        sample_blocks(model, layers, samples.sample(i), samples.y[static_cast<std::size_t>(i)]);
  });

  const std::size_t n_blocks = per_sample.front().size();
  std::vector<Matrix> C_in(n_blocks), C_out(n_blocks);
  for (std::size_t b = 0; b < n_blocks; ++b) {
    C_in[b] = Matrix::Zero(per_sample.front()[b].in.size(), per_sample.front()[b].in.size());
    C_out[b] = Matrix::Zero(per_sample.front()[b].out.size(), per_sample.front()[b].out.size());
  }
  for (const auto& blocks : per_sample)
    for (std::size_t b = 0; b < n_blocks; ++b) {
      C_in[b].noalias() += blocks[b].in * blocks[b].in.transpose();
      C_out[b].noalias() += blocks[b].out * blocks[b].out.transpose();
    }

  KfacFactors out;
  out.sample_count = samples.size();
  out.damping = lambda;
  const double invN = 1.0 / static_cast<double>(samples.size());
  std::size_t b = 0;
  for (std::size_t l : layers) {
    const std::size_t count = model.layers[l].is_dense() ? 1 : 2;
    for (std::size_t k = 0; k < count; ++k, ++b) {
      BlockFactors bf;
      bf.inv_root_in = sym_root_pair(Matrix(invN * C_in[b]), lambda).inv_root;
      bf.inv_root_out = sym_root_pair(Matrix(invN * C_out[b]), lambda).inv_root;
      out.layers[l].push_back(std::move(bf));
    }
  }
  return out;
}

InfluenceScores if_scores(const Model& model, const Dataset& train, const Dataset& val,
                          const KfacFactors& factors) {
  std::vector<std::size_t> layers;
  layers.reserve(factors.layers.size());
  for (const auto& [l, blocks] : factors.layers) layers.push_back(l);
  InfluenceScores out =
      score_against_val_mean(model, train, val, TracinVariant::Inner, layers, &factors);
  out.estimator = "if-kfac";
  return out;
}

LayerExtraction layer_extraction_scores(const Model& model, const Dataset& probe) {
  model.validate();
  if (probe.size() < 1) throw std::invalid_argument("layer_extraction_scores: empty probe set");

  const std::size_t L = model.layers.size();
  LayerExtraction out;
  out.score.assign(L, 0.0);
  out.defined.assign(L, 0);
  for (std::size_t l = 0; l < L; ++l)
    out.defined[l] = model.layers[l].in_dim() == model.layers[l].out_dim() ? 1 : 0;

  std::vector<double> cos_sum(L, 0.0);
  std::vector<std::int64_t> counted(L, 0);
  for (Index i = 0; i < probe.size(); ++i) {
    const Trace trace = forward(model, probe.sample(i));
    for (std::size_t l = 0; l < L; ++l) {
      if (!out.defined[l]) continue;
      const Vector& before = trace.inputs[l];
      const Vector& after = trace.preacts[l];
      const double denom = before.norm() * after.norm();
      if (denom == 0.0) {
        ++out.skipped;
        continue;
      }
      cos_sum[l] += before.dot(after) / denom;
      ++counted[l];
    }
  }
  for (std::size_t l = 0; l < L; ++l) {
    if (!out.defined[l]) continue;
    if (counted[l] == 0)
      throw std::invalid_argument("layer_extraction_scores: layer " + std::to_string(l) +
                                  " has no usable probe samples");
    out.score[l] = 1.0 - cos_sum[l] / static_cast<double>(counted[l]);
  }
  return out;
}

std::vector<Index> descending_order(const std::vector<double>& scores) {
  std::vector<Index> order(scores.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    return a < b;
  });
  return order;
}

void save_scores_csv(const InfluenceScores& scores, const std::vector<std::int64_t>& sample_ids,
                     const std::string& path) {
  if (sample_ids.size() != scores.scores.size())
    throw std::invalid_argument("save_scores_csv: id/score count mismatch");
  const std::vector<Index> order = descending_order(scores.scores);
  std::vector<std::int64_t> rank(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    rank[static_cast<std::size_t>(order[pos])] = static_cast<std::int64_t>(pos) + 1;

  std::string out = "index,score,rank,estimator,model_id,seed\n";
  for (std::size_t i = 0; i < scores.scores.size(); ++i) {
    out += format_int(sample_ids[i]);
    out += ',';
    out += format_double(scores.scores[i]);
    out += ',';
    out += format_int(rank[i]);
    out += ',';
    out += scores.estimator;
    out += ',';
    out += scores.model_id;
    out += ',';
    out += format_int(static_cast<std::int64_t>(scores.seed));
    out += '\n';
  }
  write_text_file(path, out);
}

LoadedScores load_scores_csv(const std::string& path) {
  const std::string text = read_text_file(path);
  LoadedScores out;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (header) {
      if (fields.size() != 6 || fields[0] != "index" || fields[1] != "score")
        throw std::runtime_error("scores csv: unexpected header in " + path);
      header = false;
      continue;
    }
    if (fields.size() != 6) throw std::runtime_error("scores csv: ragged row in " + path);
    out.sample_ids.push_back(parse_int(fields[0]));
    out.scores.scores.push_back(parse_double(fields[1]));
    out.scores.estimator = fields[3];
    out.scores.model_id = fields[4];
    out.scores.seed = static_cast<std::uint64_t>(parse_int(fields[5]));
  }
  if (out.scores.scores.empty()) throw std::runtime_error("scores csv: no rows in " + path);
  return out;
}

}  // namespace proxel
