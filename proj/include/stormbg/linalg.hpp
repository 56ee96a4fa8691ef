#pragma once

#include "stormbg/core.hpp"

namespace stormbg {

/// Thin SVD of a short, wide matrix X (k rows, k small): X = U diag(sigma) Vt.
struct ThinSVD {
  Matrix U;      // k x k, orthonormal
  Vector sigma;  // k, descending, >= 0
  Matrix Vt;     // k x cols; rows belonging to zero singular values are zero
};

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues are returned in descending order, eigenvectors as columns.
struct SymmetricEigen {
  Vector values;
  Matrix vectors;
};
SymmetricEigen jacobi_eigen(const Matrix& symmetric);

/// SVD via the k x k Gram matrix X X^T. Valid for k <= 64.
ThinSVD thin_svd_small_k(const Matrix& X);
inline ThinSVD thin_svd_small_k(const FlatMatrix& X) { return thin_svd_small_k(X.data); }

/// Singular value shrinkage: U [sign(S) max(|S| - mu, 0)] Vt.
Matrix svt(const Matrix& X, double mu);
FlatMatrix svt(const FlatMatrix& X, double mu);

/// svt() that also returns the decomposition it used.
Matrix svt(const Matrix& X, double mu, ThinSVD& svd_out);

/// Elementwise sign(x) max(|x| - tau, 0).
Matrix soft_threshold(const Matrix& X, double tau);

double nuclear_norm(const Matrix& X);

}  // namespace stormbg
