// SPDX-License-Identifier: Apache-2.0
#include "proxel/linalg.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace proxel {

void require_finite(const Matrix& M, const char* name) {
  if (M.allFinite()) return;
  for (Index j = 0; j < M.cols(); ++j)
    for (Index i = 0; i < M.rows(); ++i)
      if (!std::isfinite(M(i, j)))
        throw std::invalid_argument(std::string(name) + ": non-finite entry at (" +
                                    std::to_string(i) + ", " + std::to_string(j) + ")");
}

void require_finite(const Vector& v, const char* name) {
  if (v.allFinite()) return;
  for (Index i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i]))
      throw std::invalid_argument(std::string(name) + ": non-finite entry at (" +
                                  std::to_string(i) + ")");
}

SvdFactors svd_thin(const Matrix& M) {
  require_finite(M, "svd_thin input");
  if (M.rows() == 0 || M.cols() == 0) throw std::invalid_argument("svd_thin: empty matrix");

  Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdFactors f{svd.matrixU(), svd.singularValues(), svd.matrixV()};

  for (Index j = 0; j < f.U.cols(); ++j) {
    Index pivot = 0;
    double best = -1.0;
    for (Index i = 0; i < f.U.rows(); ++i) {
      const double mag = std::abs(f.U(i, j));
      if (mag > best) {
        best = mag;
        pivot = i;
      }
    }
    if (f.U(pivot, j) < 0.0) {
      f.U.col(j) = -f.U.col(j);
      f.V.col(j) = -f.V.col(j);
    }
  }
  return f;
}

SvdFactors svd_truncate(const SvdFactors& f, Index r) {
  if (r < 1 || r > f.S.size())
    throw std::invalid_argument("svd_truncate: rank " + std::to_string(r) +
                                " outside [1, " + std::to_string(f.S.size()) + "]");
  return SvdFactors{f.U.leftCols(r), f.S.head(r), f.V.leftCols(r)};
}

Vector regularized_root_diag(const Vector& S, Index N, double lambda) {
  if (N < 1) throw std::invalid_argument("regularized_root_diag: N must be >= 1");
  if (lambda < 0.0) throw std::invalid_argument("regularized_root_diag: lambda must be >= 0");
  require_finite(S, "regularized_root_diag input");
  return (S.array().square() / static_cast<double>(N) + lambda).sqrt().matrix();
}

namespace {

struct Eigendecomp {
  Matrix Q;
  Vector damped;  // clamped eigenvalues plus lambda
};

Eigendecomp damped_eigs(const Matrix& C, double lambda, const char* op) {
  require_finite(C, op);
  if (C.rows() != C.cols()) throw std::invalid_argument(std::string(op) + ": matrix not square");
  if (lambda < 0.0) throw std::invalid_argument(std::string(op) + ": lambda must be >= 0");

  const double scale = C.cwiseAbs().maxCoeff();
  const double asym = (C - C.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * (1.0 + scale))
    throw std::invalid_argument(std::string(op) + ": matrix not symmetric");

  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (C + C.transpose()));
  if (es.info() != Eigen::Success)
    throw std::runtime_error(std::string(op) + ": eigendecomposition failed");

  Vector damped = es.eigenvalues().cwiseMax(0.0).array() + lambda;
  return {es.eigenvectors(), std::move(damped)};
}

}  // namespace

SymRootPair sym_root_pair(const Matrix& C, double lambda) {
  auto [Q, d] = damped_eigs(C, lambda, "sym_root_pair");
  const double dmax = d.maxCoeff();
  if (dmax <= 0.0 || d.minCoeff() <= 1e-12 * dmax)
    throw std::invalid_argument("sym_root_pair: C + lambda I is numerically singular");

  const Vector root_d = d.cwiseSqrt();
  SymRootPair out;
  out.root = Q * root_d.asDiagonal() * Q.transpose();
  out.inv_root = Q * root_d.cwiseInverse().asDiagonal() * Q.transpose();
  return out;
}

Matrix sym_root(const Matrix& C, double lambda) {
  auto [Q, d] = damped_eigs(C, lambda, "sym_root");
  return Q * d.cwiseSqrt().asDiagonal() * Q.transpose();
}

}  // namespace proxel
