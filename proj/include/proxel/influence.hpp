// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "proxel/data.hpp"
#include "proxel/nn.hpp"

namespace proxel {

/// Per-train-sample influence estimates; larger = more beneficial.
struct InfluenceScores {
  std::vector<double> scores;
  std::string estimator;
  std::string model_id;
  std::uint64_t seed = 0;
  std::size_t warnings = 0;  // zero-gradient cosine fallbacks
};

enum class TracinVariant { Inner, Cosine };

/// <delta, delta'> * <h, h'>; equals the Frobenius inner product of the
/// rank-one weight gradients delta h^T and delta' h'^T.
double tracin_layer(const Vector& delta, const Vector& h, const Vector& delta2, const Vector& h2);

/// Layers whose gradients enter the estimators: factored layers when the
/// model has any (the proxy case), otherwise every dense layer minus the
/// end-exclusion rule used for compression.
std::vector<std::size_t> influence_layers(const Model& model, bool exclude_ends = true);

/// Similarity of each train gradient against the mean validation gradient,
/// summed over the given layers. Factored layers contribute their native
/// (dA, dB) gradients; nothing is lifted back to full weight space.
InfluenceScores tracin_scores(const Model& model, const Dataset& train, const Dataset& val,
                              TracinVariant variant, const std::vector<std::size_t>& layers);

/// Whitening factors for one parameter block: inverse symmetric roots of
/// the damped input and output second moments.
struct BlockFactors {
  Matrix inv_root_in;
  Matrix inv_root_out;
};

struct KfacFactors {
  // One block per dense layer; factored layers get two (A block, then B).
  std::map<std::size_t, std::vector<BlockFactors>> layers;
  Index sample_count = 0;
  double damping = 0.0;
};

/// Second moments over the sample sweep, inverted via sym_root_pair.
/// Propagates the singularity error when damping = 0 on deficient moments.
KfacFactors kfac_factors(const Model& model, const Dataset& samples, double lambda,
                         const std::vector<std::size_t>& layers);

/// Influence-function scores under the Kronecker curvature surrogate:
/// the TracIn inner product evaluated on whitened gradients. With identity
/// factors this reproduces tracin_scores(Inner) exactly.
InfluenceScores if_scores(const Model& model, const Dataset& train, const Dataset& val,
                          const KfacFactors& factors);

/// Per-layer representation-change score 1 - E[cos(h_in, W h_in + b)],
/// defined for width-preserving layers only.
struct LayerExtraction {
  std::vector<double> score;          // one per layer; meaningful iff defined
  std::vector<std::uint8_t> defined;  // width-preserving layers
  std::size_t skipped = 0;            // zero-norm samples dropped
};

LayerExtraction layer_extraction_scores(const Model& model, const Dataset& probe);

/// Positions sorted by descending score, ties by ascending position.
std::vector<Index> descending_order(const std::vector<double>& scores);

void save_scores_csv(const InfluenceScores& scores, const std::vector<std::int64_t>& sample_ids,
                     const std::string& path);

struct LoadedScores {
  InfluenceScores scores;
  std::vector<std::int64_t> sample_ids;
};

LoadedScores load_scores_csv(const std::string& path);

}  // namespace proxel
