// SPDX-License-Identifier: Apache-2.0
#include "proxel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace proxel {

std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });

  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    // positions i..j (0-based) share the average of ranks i+1..j+1
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("pearson: need two equal-length vectors of size >= 2");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0)
    throw std::domain_error("pearson: correlation undefined for a constant vector");
  return sab / std::sqrt(saa * sbb);
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(average_ranks(a), average_ranks(b));
}

double topk_overlap(const std::vector<std::int64_t>& idx_a, const std::vector<std::int64_t>& idx_b,
                    std::size_t k) {
  if (k == 0) throw std::invalid_argument("topk_overlap: k must be >= 1");
  if (k > idx_a.size() || k > idx_b.size())
    throw std::invalid_argument("topk_overlap: k exceeds an index list length");
  std::unordered_set<std::int64_t> head(idx_a.begin(), idx_a.begin() + static_cast<std::ptrdiff_t>(k));
  std::size_t shared = 0;
  for (std::size_t i = 0; i < k; ++i) shared += head.count(idx_b[i]);
  return static_cast<double>(shared) / static_cast<double>(k);
}

double one_nnd(const Matrix& points) {
  const Index n = points.rows();
  if (n < 2) throw std::invalid_argument("one_nnd: need at least 2 points");
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      best = std::min(best, (points.row(i) - points.row(j)).norm());
    }
    total += best;
  }
  return total / static_cast<double>(n);
}

double subspace_affinity(const Matrix& G_a, const Matrix& G_b, Index k) {
  if (k < 1) throw std::invalid_argument("subspace_affinity: k must be >= 1");
  if (k > G_a.cols() || k > G_b.cols())
    throw std::invalid_argument("subspace_affinity: k exceeds a stack's column count");
  if (G_a.rows() != G_b.rows())
    throw std::invalid_argument("subspace_affinity: feature dimensions differ");

  auto top_basis = [k](const Matrix& G, const char* which) {
    const SvdFactors f = svd_thin(G);
    if (f.S.size() < k || f.S[k - 1] <= 1e-12 * f.S[0])
      throw std::invalid_argument(std::string("subspace_affinity: ") + which +
                                  " stack has rank below k");
    return Matrix(f.U.leftCols(k));
  };
  const Matrix Ua = top_basis(G_a, "first");
  const Matrix Ub = top_basis(G_b, "second");

  // Principal-angle cosines are the singular values of Ua^T Ub.
  const SvdFactors overlap = svd_thin(Matrix(Ua.transpose() * Ub));
  return overlap.S.squaredNorm() / static_cast<double>(k);
}

}  // namespace proxel
