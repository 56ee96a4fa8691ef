#include "stormbg/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace stormbg {

namespace {

void require_finite(const Matrix& X, const char* what) {
  if (!X.allFinite()) throw NumericalError(std::string(what) + ": input contains non-finite entries");
}

}  // namespace

SymmetricEigen jacobi_eigen(const Matrix& symmetric) {
  const Eigen::Index n = symmetric.rows();
  if (symmetric.cols() != n) throw std::invalid_argument("jacobi_eigen: matrix is not square");
  Matrix a = 0.5 * (symmetric + symmetric.transpose());
  Matrix v = Matrix::Identity(n, n);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    const double scale = a.diagonal().squaredNorm();
    if (off <= std::numeric_limits<double>::min() || off <= 1e-34 * scale) break;

    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        // rotation angle chosen to annihilate a(p, q)
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  // stable: ties keep the original eigenvector order
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });

  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index src = order[static_cast<std::size_t>(i)];
    out.values(i) = a(src, src);
    out.vectors.col(i) = v.col(src);
  }
  return out;
}

ThinSVD thin_svd_small_k(const Matrix& X) {
  const Eigen::Index k = X.rows();
  if (k == 0 || X.cols() == 0) throw std::invalid_argument("thin_svd_small_k: empty matrix");
  if (k > 64) throw std::invalid_argument("thin_svd_small_k: more than 64 rows");
  require_finite(X, "thin_svd_small_k");

  const Matrix gram = X * X.transpose();
  const SymmetricEigen eig = jacobi_eigen(gram);

  ThinSVD out;
  out.U = eig.vectors;
  out.sigma.resize(k);
  out.Vt = Matrix::Zero(k, X.cols());

  const double top = std::max(eig.values(0), 0.0);
  const double cutoff = static_cast<double>(k) * std::numeric_limits<double>::epsilon() * top;
  const Matrix projected = out.U.transpose() * X;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double lambda = eig.values(i);
    if (lambda <= cutoff || lambda <= 0.0) {
      out.sigma(i) = 0.0;
      continue;
    }
    out.sigma(i) = std::sqrt(lambda);
    out.Vt.row(i) = projected.row(i) / out.sigma(i);
  }
  return out;
}

Matrix svt(const Matrix& X, double mu, ThinSVD& svd_out) {
  if (!(mu >= 0.0)) throw std::invalid_argument("svt: threshold must be non-negative");
  svd_out = thin_svd_small_k(X);
  const Eigen::Index k = X.rows();
  Vector shrunk(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double s = svd_out.sigma(i);
    const double sign = (s > 0.0) - (s < 0.0);
    shrunk(i) = sign * std::max(std::abs(s) - mu, 0.0);
  }
  // U diag(shrunk) Vt, skipping zeroed components
  Matrix out = Matrix::Zero(k, X.cols());
  for (Eigen::Index i = 0; i < k; ++i) {
    if (shrunk(i) == 0.0) continue;
    out.noalias() += (svd_out.U.col(i) * shrunk(i)) * svd_out.Vt.row(i);
  }
  return out;
}

Matrix svt(const Matrix& X, double mu) {
  ThinSVD unused;
  return svt(X, mu, unused);
}

FlatMatrix svt(const FlatMatrix& X, double mu) {
  return FlatMatrix{svt(X.data, mu), X.height, X.width};
}

Matrix soft_threshold(const Matrix& X, double tau) {
  if (!(tau >= 0.0)) throw std::invalid_argument("soft_threshold: threshold must be non-negative");
  require_finite(X, "soft_threshold");
  return X.unaryExpr([tau](double x) {
    const double mag = std::max(std::abs(x) - tau, 0.0);
    return x < 0.0 ? -mag : mag;
  });
}

double nuclear_norm(const Matrix& X) { return thin_svd_small_k(X).sigma.sum(); }

}  // namespace stormbg
