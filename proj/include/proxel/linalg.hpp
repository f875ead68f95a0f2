// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

namespace proxel {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Throws std::invalid_argument naming the first non-finite entry.
void require_finite(const Matrix& M, const char* name);
void require_finite(const Vector& v, const char* name);

/// Thin SVD M = U diag(S) V^T with k = min(rows, cols) singular triplets.
struct SvdFactors {
  Matrix U;  // rows x k, orthonormal columns
  Vector S;  // k, nonnegative, nonincreasing
  Matrix V;  // cols x k, orthonormal columns

  Index rank_dim() const { return S.size(); }
  Matrix reconstruct() const { return U * S.asDiagonal() * V.transpose(); }
};

/// Thin SVD with a deterministic sign choice: in every column of U the entry
/// of largest magnitude is nonnegative (first such entry on ties), and the
/// matching column of V is flipped with it.
SvdFactors svd_thin(const Matrix& M);

/// Keeps the r leading singular triplets. Requires 1 <= r <= f.S.size().
SvdFactors svd_truncate(const SvdFactors& f, Index r);

/// Elementwise sqrt(S_i^2 / N + lambda) for probe singular values S.
/// Requires N >= 1, lambda >= 0.
Vector regularized_root_diag(const Vector& S, Index N, double lambda);

struct SymRootPair {
  Matrix root;      // (C + lambda I)^{1/2}
  Matrix inv_root;  // (C + lambda I)^{-1/2}
};

/// Symmetric square root and inverse root of C + lambda I for symmetric
/// positive semidefinite C. Negative eigenvalues within round-off are
/// clamped to zero before damping. Throws std::invalid_argument when C is
/// not symmetric or when C + lambda I is numerically singular.
SymRootPair sym_root_pair(const Matrix& C, double lambda);

/// Symmetric square root of C + lambda I alone; always defined for PSD C.
Matrix sym_root(const Matrix& C, double lambda);

}  // namespace proxel
