// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "proxel/data.hpp"
#include "proxel/nn.hpp"

namespace proxel {

/// Stacked layer inputs and upstream gradients from one probe sweep.
struct LayerProbes {
  Matrix H;      // in_dim x N, column i = input on probe sample i
  Matrix Delta;  // out_dim x N, column i = delta on probe sample i
};

struct ProbeStats {
  std::map<std::size_t, LayerProbes> layers;  // keyed by layer index
  Index probe_count = 0;
};

/// One forward/backward sweep with the cross-entropy loss; records H and
/// Delta for every dense layer. Throws on non-finite activations or
/// gradients, naming the layer.
ProbeStats collect_probe_stats(const Model& model, const Dataset& probe);

enum class CompressMethod { Svd, IpsvdDirect, IpsvdEfficient };

std::string method_name(CompressMethod m);
CompressMethod method_from_name(const std::string& name);

struct CompressionPlan {
  double sparsity = 0.5;  // fraction of parameters removed, in [0, 1)
  double damping = 1e-3;
  Index rank_align = 8;
  CompressMethod method = CompressMethod::IpsvdDirect;
  bool exclude_ends = true;  // skip first and last layers (models with >= 3 layers)
  std::vector<std::size_t> excluded;               // extra layer indices to skip
  std::map<std::size_t, Index> rank_overrides;     // per-layer rank, bypasses sparsity
};

/// Layer indices left uncompressed under the plan.
std::vector<std::size_t> excluded_layers(const Model& model, const CompressionPlan& plan);

/// r = clamp(round_to_multiple(floor((1-rho) m n / (m+n)), align), 1, min(m,n)).
/// Rounds down to a multiple of align unless that lands on 0, then up.
Index rank_from_sparsity(double rho, Index m, Index n, Index rank_align);

/// Plain truncated SVD baseline: W ~= A B with A = U_r S_r^{1/2}, B = S_r^{1/2} V_r^T.
std::pair<Matrix, Matrix> svd_factor(const Matrix& W, Index r);

/// Shared core: rank-r factorization minimizing
/// || R_d (W - A B) R_h ||_F with R_d, R_h the symmetric roots of the damped
/// second moments. Moments are passed explicitly.
std::pair<Matrix, Matrix> ipsvd_from_moments(const Matrix& W, const Matrix& C_h,
                                             const Matrix& C_delta, double lambda, Index r);

/// Direct reweighted factorization from probe stacks: moments C = (1/N) M M^T.
/// Throws when lambda = 0 and a moment is rank-deficient.
std::pair<Matrix, Matrix> ipsvd_direct(const Matrix& W, const Matrix& H, const Matrix& Delta,
                                       double lambda, Index r);

/// Probe-span factorization that only forms skinny SVDs of H and Delta and
/// an at-most-NxN core matrix; requires lambda > 0 and r <= min(N, m, n).
/// Agrees with ipsvd_direct whenever the probes have full row rank.
std::pair<Matrix, Matrix> ipsvd_efficient(const Matrix& W, const Matrix& H, const Matrix& Delta,
                                          double lambda, Index r);

struct LayerCompression {
  std::size_t layer = 0;
  Index rank = 0;
  double frobenius_error = 0.0;  // ||W - A B||_F
  double weighted_error = 0.0;   // || R_d (W - A B) R_h ||_F at the plan's damping
  std::int64_t params_before = 0;
  std::int64_t params_after = 0;
};

struct CompressionReport {
  std::string method;
  double sparsity = 0.0;  // requested
  double damping = 0.0;
  std::uint64_t seed = 0;
  std::vector<LayerCompression> layers;
  std::int64_t params_before = 0;  // compressed layers only
  std::int64_t params_after = 0;
  double achieved_sparsity = 0.0;
};

struct CompressionResult {
  Model proxy;
  CompressionReport report;
};

/// Replaces every non-excluded dense layer with a factored one; biases and
/// excluded layers are copied verbatim.
CompressionResult compress_model(const Model& model, const ProbeStats& stats,
                                 const CompressionPlan& plan);

std::string report_to_json(const CompressionReport& report);

}  // namespace proxel
