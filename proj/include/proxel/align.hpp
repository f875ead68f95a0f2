// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "proxel/data.hpp"
#include "proxel/nn.hpp"

namespace proxel {

struct AlignConfig {
  double lr = 0.003;
  double momentum = 0.0;
  double weight_decay = 0.01;
  double lambda_kl = 0.1;
  double tau = 1.0;
  int epochs = 8;
  Index batch_size = 4;
  double hvp_eps = 1e-4;  // finite-difference step, halved on a non-finite result
  std::uint64_t seed = 0;
};

std::string align_config_to_json(const AlignConfig& cfg);
AlignConfig align_config_from_json(const std::string& text);

/// Mean cross-entropy gradient of the model over the given rows.
Gradients mean_gradients(const Model& model, const Dataset& data, const std::vector<Index>& rows);

/// Batch-mean gradients of the effective weights (delta h^T) for the given
/// layers; works for dense and factored layers alike.
std::map<std::size_t, Matrix> target_weight_grads(const Model& target, const Dataset& data,
                                                  const std::vector<Index>& rows,
                                                  const std::vector<std::size_t>& layers);

/// Mean over factored layers of
///   d(dA, dW B^T) + d(dB, A^T dW),   d(X, Y) = 1 - <X,Y>_F / (|X| |Y|),
/// where dW are the (stop-gradient) target batch gradients and dA, dB the
/// proxy's. A zero-norm argument makes its term contribute 1 and bumps the
/// warning counter. Result is in [0, 2].
double ga_loss(const std::map<std::size_t, Matrix>& target_grads, const Gradients& proxy_grads,
               const Model& proxy, std::size_t* warning_count = nullptr);

struct AlignLosses {
  double l_ga = 0.0;
  double l_kl = 0.0;
  double total = 0.0;
  std::size_t warnings = 0;
};

/// Losses of the alignment objective on one batch: total = l_ga + lambda_kl * l_kl.
AlignLosses align_losses(const Model& proxy, const Model& target, const Dataset& data,
                         const std::vector<Index>& rows, const AlignConfig& cfg);

/// Gradient of the alignment objective with respect to the trainable
/// parameters (factored layers' A and B; all other entries zero). The
/// second-order part -- the dependence of the proxy's batch gradients on the
/// parameters -- is assembled from the analytic derivative of the cosine
/// distances with respect to those batch gradients, followed by one
/// central-difference Hessian-vector product of the batch loss in that
/// direction; the first-order paths through the explicit A^T / B^T factors
/// and through the KL anchor are added analytically.
Gradients align_gradient(const Model& proxy, const Model& target, const Dataset& data,
                         const std::vector<Index>& rows, const AlignConfig& cfg,
                         AlignLosses* losses = nullptr);

struct AlignState {
  std::vector<LayerGrads> velocity;
  std::size_t warnings = 0;
};

struct AlignStepRecord {
  std::int64_t step = 0;
  double l_ga = 0.0;
  double l_kl = 0.0;
  double total = 0.0;
};

/// One SGD step on the alignment objective. Only A and B of factored layers
/// move; weight decay applies to them alone.
AlignStepRecord align_step(Model& proxy, const Model& target, const Dataset& data,
                           const std::vector<Index>& rows, const AlignConfig& cfg,
                           AlignState& state);

struct LayerAlignment {
  std::size_t layer = 0;
  double cos_a = 0.0;  // cos_F(dA, dW B^T) over the full align set
  double cos_b = 0.0;  // cos_F(dB, A^T dW)
};

struct AlignReport {
  std::vector<AlignStepRecord> steps;
  std::vector<LayerAlignment> final_alignment;
  std::size_t warnings = 0;
};

/// Runs cfg.epochs of shuffled-batch alignment steps. The target is frozen;
/// the proxy is updated in place. Deterministic given cfg.seed.
AlignReport align(Model& proxy, const Model& target, const Dataset& data, const AlignConfig& cfg);

/// JSON-lines step log ({step, l_ga, l_kl, total} per line).
void save_align_log(const AlignReport& report, const std::string& path);
std::string align_summary_json(const AlignReport& report);

}  // namespace proxel
