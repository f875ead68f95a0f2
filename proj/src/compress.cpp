// SPDX-License-Identifier: Apache-2.0
#include "proxel/compress.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "proxel/io.hpp"
#include "proxel/threads.hpp"

namespace proxel {

ProbeStats collect_probe_stats(const Model& model, const Dataset& probe) {
  if (probe.size() < 1) throw std::invalid_argument("collect_probe_stats: empty probe set");
  model.validate();

  std::vector<std::size_t> dense;
  for (std::size_t l = 0; l < model.layers.size(); ++l)
    if (model.layers[l].is_dense()) dense.push_back(l);
  if (dense.empty())
    throw std::invalid_argument("collect_probe_stats: model has no compressible layer");

  ProbeStats stats;
  stats.probe_count = probe.size();
  for (std::size_t l : dense) {
    stats.layers[l].H.resize(model.layers[l].in_dim(), probe.size());
    stats.layers[l].Delta.resize(model.layers[l].out_dim(), probe.size());
  }

  parallel_for(probe.size(), [&](Index i) {
    Trace trace = forward(model, probe.sample(i));
    Gradients grads = backward(model, trace, probe.y[static_cast<std::size_t>(i)]);
    require_finite(grads, "collect_probe_stats");
    for (std::size_t l : dense) {
      stats.layers[l].H.col(i) = trace.inputs[l];
      stats.layers[l].Delta.col(i) = trace.deltas[l];
    }
  });
  return stats;
}

std::string method_name(CompressMethod m) {
  switch (m) {
    case CompressMethod::Svd: return "svd";
    case CompressMethod::IpsvdDirect: return "ipsvd-direct";
    case CompressMethod::IpsvdEfficient: return "ipsvd-efficient";
  }
  throw std::logic_error("unknown compression method");
}

CompressMethod method_from_name(const std::string& name) {
  if (name == "svd") return CompressMethod::Svd;
  if (name == "ipsvd_direct" || name == "ipsvd-direct") return CompressMethod::IpsvdDirect;
  if (name == "ipsvd_efficient" || name == "ipsvd-efficient") return CompressMethod::IpsvdEfficient;
  throw std::invalid_argument("unknown compression method '" + name + "'");
}

std::vector<std::size_t> excluded_layers(const Model& model, const CompressionPlan& plan) {
  std::vector<std::size_t> out = plan.excluded;
  if (plan.exclude_ends && model.layers.size() >= 3) {
    out.push_back(0);
    out.push_back(model.layers.size() - 1);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Index rank_from_sparsity(double rho, Index m, Index n, Index rank_align) {
  if (rho < 0.0 || rho >= 1.0)
    throw std::invalid_argument("rank_from_sparsity: sparsity must be in [0, 1)");
  if (m < 1 || n < 1 || rank_align < 1)
    throw std::invalid_argument("rank_from_sparsity: dimensions must be positive");
  const double budget = (1.0 - rho) * static_cast<double>(m) * static_cast<double>(n) /
                        static_cast<double>(m + n);
  const Index r0 = static_cast<Index>(std::floor(budget));
  Index r = (r0 / rank_align) * rank_align;
  if (r == 0 && r0 > 0) r = rank_align;  // rounding down would erase the layer
  return std::clamp<Index>(r, 1, std::min(m, n));
}

namespace {

std::pair<Matrix, Matrix> split_factors(const SvdFactors& f) {
  const Vector root = f.S.cwiseSqrt();
  return {Matrix(f.U * root.asDiagonal()), Matrix(root.asDiagonal() * f.V.transpose())};
}

}  // namespace

std::pair<Matrix, Matrix> svd_factor(const Matrix& W, Index r) {
  return split_factors(svd_truncate(svd_thin(W), r));
}

std::pair<Matrix, Matrix> ipsvd_from_moments(const Matrix& W, const Matrix& C_h,
                                             const Matrix& C_delta, double lambda, Index r) {
  if (C_delta.rows() != W.rows() || C_h.rows() != W.cols())
    throw std::invalid_argument("ipsvd_from_moments: moment dimensions do not match W");
  const SymRootPair Rd = sym_root_pair(C_delta, lambda);
  const SymRootPair Rh = sym_root_pair(C_h, lambda);

  const SvdFactors f = svd_truncate(svd_thin(Matrix(Rd.root * W * Rh.root)), r);
  auto [As, Bs] = split_factors(f);
  return {Matrix(Rd.inv_root * As), Matrix(Bs * Rh.inv_root)};
}

std::pair<Matrix, Matrix> ipsvd_direct(const Matrix& W, const Matrix& H, const Matrix& Delta,
                                       double lambda, Index r) {
  if (H.cols() != Delta.cols()) throw std::invalid_argument("ipsvd_direct: probe counts differ");
  if (H.cols() < 1) throw std::invalid_argument("ipsvd_direct: empty probe stacks");
  const double invN = 1.0 / static_cast<double>(H.cols());
  const Matrix C_h = invN * (H * H.transpose());
  const Matrix C_delta = invN * (Delta * Delta.transpose());
  return ipsvd_from_moments(W, C_h, C_delta, lambda, r);
}

std::pair<Matrix, Matrix> ipsvd_efficient(const Matrix& W, const Matrix& H, const Matrix& Delta,
                                          double lambda, Index r) {
  if (lambda <= 0.0) throw std::invalid_argument("ipsvd_efficient: lambda must be positive");
  if (H.cols() != Delta.cols())
    throw std::invalid_argument("ipsvd_efficient: probe counts differ");
  const Index N = H.cols();
  if (r > std::min({N, W.rows(), W.cols()}))
    throw std::invalid_argument("ipsvd_efficient: rank exceeds the core bound min(N, m, n)");
  if (Delta.rows() != W.rows() || H.rows() != W.cols())
    throw std::invalid_argument("ipsvd_efficient: probe dimensions do not match W");

  // Work entirely in the probe column spans; cost is O((m+n) N^2 + N^3).
  const SvdFactors fH = svd_thin(H);
  const SvdFactors fD = svd_thin(Delta);
  const Vector D_h = regularized_root_diag(fH.S, N, lambda);
  const Vector D_d = regularized_root_diag(fD.S, N, lambda);

  const Matrix core =
      D_d.asDiagonal() * (fD.U.transpose() * W * fH.U) * D_h.asDiagonal();
  const SvdFactors fc = svd_truncate(svd_thin(core), r);
  auto [As, Bs] = split_factors(fc);
  return {Matrix(fD.U * D_d.cwiseInverse().asDiagonal() * As),
          Matrix(Bs * D_h.cwiseInverse().asDiagonal() * fH.U.transpose())};
}

CompressionResult compress_model(const Model& model, const ProbeStats& stats,
                                 const CompressionPlan& plan) {
  model.validate();
  if (plan.sparsity < 0.0 || plan.sparsity >= 1.0)
    throw std::invalid_argument("compress_model: sparsity must be in [0, 1)");

  const std::vector<std::size_t> skip = excluded_layers(model, plan);
  auto is_excluded = [&skip](std::size_t l) {
    return std::binary_search(skip.begin(), skip.end(), l);
  };

  CompressionResult out;
  out.proxy = model;
  out.report.method = method_name(plan.method);
  out.report.sparsity = plan.sparsity;
  out.report.damping = plan.damping;

  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const Layer& layer = model.layers[l];
    if (!layer.is_dense() || is_excluded(l)) continue;

    const Matrix& W = layer.dense().W;
    const Index m = W.rows(), n = W.cols();
    Index r;
    if (auto it = plan.rank_overrides.find(l); it != plan.rank_overrides.end()) {
      r = it->second;
      if (r < 1 || r > std::min(m, n))
        throw std::invalid_argument("compress_model: rank override out of range at layer " +
                                    std::to_string(l));
    } else {
      r = rank_from_sparsity(plan.sparsity, m, n, plan.rank_align);
    }

    const auto stat = stats.layers.find(l);
    if (plan.method != CompressMethod::Svd && stat == stats.layers.end())
      throw std::invalid_argument("compress_model: no probe statistics for layer " +
                                  std::to_string(l));

    std::pair<Matrix, Matrix> factors;
    switch (plan.method) {
      case CompressMethod::Svd:
        factors = svd_factor(W, r);
        break;
      case CompressMethod::IpsvdDirect:
        factors = ipsvd_direct(W, stat->second.H, stat->second.Delta, plan.damping, r);
        break;
      case CompressMethod::IpsvdEfficient:
        factors = ipsvd_efficient(W, stat->second.H, stat->second.Delta, plan.damping, r);
        break;
    }

    LayerCompression rec;
    rec.layer = l;
    rec.rank = r;
    rec.params_before = m * n;
    rec.params_after = r * (m + n);
    const Matrix E = W - factors.first * factors.second;
    rec.frobenius_error = E.norm();
    if (stat != stats.layers.end()) {
      const double invN = 1.0 / static_cast<double>(stats.probe_count);
      const Matrix Rd = sym_root(Matrix(invN * stat->second.Delta * stat->second.Delta.transpose()),
                                 plan.damping);
      const Matrix Rh = sym_root(Matrix(invN * stat->second.H * stat->second.H.transpose()),
                                 plan.damping);
      rec.weighted_error = (Rd * E * Rh).norm();
    } else {
      rec.weighted_error = rec.frobenius_error;
    }
    out.report.layers.push_back(rec);
    out.report.params_before += rec.params_before;
    out.report.params_after += rec.params_after;

    FactoredLayer replacement;
    replacement.A = std::move(factors.first);
    replacement.B = std::move(factors.second);
    replacement.bias = layer.dense().bias;
    out.proxy.layers[l] = Layer{std::move(replacement)};
  }

  if (out.report.params_before > 0)
    out.report.achieved_sparsity =
        1.0 - static_cast<double>(out.report.params_after) /
                  static_cast<double>(out.report.params_before);
  return out;
}

std::string report_to_json(const CompressionReport& report) {
  JsonWriter w;
  w.begin_object();
  w.field("method", report.method);
  w.field("sparsity", report.sparsity);
  w.field("damping", report.damping);
  w.field("seed", report.seed);
  w.begin_array("layers");
  for (const LayerCompression& rec : report.layers) {
    w.object_in_array();
    w.field("layer", static_cast<std::int64_t>(rec.layer));
    w.field("rank", static_cast<std::int64_t>(rec.rank));
    w.field("frobenius_error", rec.frobenius_error);
    w.field("weighted_error", rec.weighted_error);
    w.field("params_before", rec.params_before);
    w.field("params_after", rec.params_after);
    w.end_object();
  }
  w.end_array();
  w.key("totals");
  w.begin_object();
  w.field("params_before", report.params_before);
  w.field("params_after", report.params_after);
  w.field("achieved_sparsity", report.achieved_sparsity);
  w.end_object();
  w.end_object();
  return w.str();
}

}  // namespace proxel
