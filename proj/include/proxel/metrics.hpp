// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "proxel/linalg.hpp"

namespace proxel {

/// Average ranks (1-based; ties share the mean of their rank range).
std::vector<double> average_ranks(const std::vector<double>& values);

double pearson(const std::vector<double>& a, const std::vector<double>& b);

/// Pearson correlation of average ranks. Throws std::domain_error when
/// either input is constant (the coefficient is undefined there).
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// |first k of a  ∩  first k of b| / k.
double topk_overlap(const std::vector<std::int64_t>& idx_a, const std::vector<std::int64_t>& idx_b,
                    std::size_t k);

/// Mean Euclidean distance from each row to its nearest other row.
double one_nnd(const Matrix& points);

/// Mean squared cosine of the principal angles between the top-k left
/// singular subspaces of the two column-stacked feature matrices. Throws
/// when either stack has numerical rank below k.
double subspace_affinity(const Matrix& G_a, const Matrix& G_b, Index k);

}  // namespace proxel
