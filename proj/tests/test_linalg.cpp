#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <random>

#include "helpers.hpp"
#include "stormbg/linalg.hpp"

using namespace stormbg;

namespace {

// SVT through Eigen's Jacobi SVD, independent of the Gram-matrix route
Matrix oracle_svt(const Matrix& X, double mu) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(X), Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd s = (svd.singularValues().array() - mu).max(0.0).matrix();
  return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

}  // namespace

TEST_SUITE("linalg") {

TEST_CASE("rank-1 outer product") {
  Vector u(3);
  u << 1, 2, 2;
  Vector v = Vector::LinSpaced(50, -1.0, 2.0);
  const Matrix X = u * v.transpose();
  const ThinSVD svd = thin_svd_small_k(X);
  CHECK(svd.sigma(0) == doctest::Approx(u.norm() * v.norm()).epsilon(1e-12));
  CHECK(std::abs(svd.sigma(1)) < 1e-6);
  CHECK(std::abs(svd.sigma(2)) < 1e-6);
}

TEST_CASE("zero matrix has zero singular values") {
  const ThinSVD svd = thin_svd_small_k(Matrix::Zero(3, 20));
  for (int i = 0; i < 3; ++i) CHECK(svd.sigma(i) == 0.0);
}

TEST_CASE("thin SVD invariants and agreement with Eigen's SVD") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix X = testutil::random_matrix(3, 1000, rng);
    const ThinSVD svd = thin_svd_small_k(X);
    const Matrix R = svd.U * svd.sigma.asDiagonal() * svd.Vt;
    CHECK((R - X).norm() / X.norm() <= 1e-8);
    CHECK((svd.U.transpose() * svd.U - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-10);
    for (int i = 0; i < 3; ++i) CHECK(svd.sigma(i) >= 0.0);
    CHECK(svd.sigma(0) >= svd.sigma(1));
    CHECK(svd.sigma(1) >= svd.sigma(2));
    Eigen::JacobiSVD<Eigen::MatrixXd> oracle{Eigen::MatrixXd(X)};
    CHECK((svd.sigma - oracle.singularValues()).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("singular values are square roots of Gram eigenvalues") {
  std::mt19937_64 rng(12);
  const Matrix X = testutil::random_matrix(4, 200, rng);
  const SymmetricEigen eig = jacobi_eigen(X * X.transpose());
  const ThinSVD svd = thin_svd_small_k(X);
  for (int i = 0; i < 4; ++i) CHECK(svd.sigma(i) == doctest::Approx(std::sqrt(eig.values(i))).epsilon(1e-10));
}

TEST_CASE("jacobi eigen matches Eigen's symmetric solver") {
  std::mt19937_64 rng(13);
  for (int n = 1; n <= 6; ++n) {
    const Matrix A = testutil::random_matrix(n, n, rng);
    const Matrix S = A + A.transpose();
    const SymmetricEigen eig = jacobi_eigen(S);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle{Eigen::MatrixXd(S)};
    for (int i = 0; i < n; ++i) CHECK(eig.values(i) == doctest::Approx(oracle.eigenvalues()(n - 1 - i)).epsilon(1e-10));
    CHECK((S * eig.vectors - eig.vectors * eig.values.asDiagonal()).norm() <= 1e-10 * S.norm());
  }
}

TEST_CASE("svt matches the dense SVD oracle") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix X = testutil::random_matrix(3, 1000, rng);
    const double mu = std::uniform_real_distribution<double>(0.0, 40.0)(rng);
    CHECK((svt(X, mu) - oracle_svt(X, mu)).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("svt special cases") {
  std::mt19937_64 rng(15);
  const Matrix X = testutil::random_matrix(3, 64, rng);
  CHECK((svt(X, 0.0) - X).cwiseAbs().maxCoeff() <= 1e-10);
  const double top = thin_svd_small_k(X).sigma(0);
  CHECK(svt(X, top).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK(svt(X, top * 2).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(svt(X, -1.0), std::invalid_argument);
}

TEST_CASE("svt of diag(5, 1) in 2x4 with mu 2") {
  Matrix X = Matrix::Zero(2, 4);
  X(0, 0) = 5;
  X(1, 1) = 1;
  const ThinSVD svd = thin_svd_small_k(svt(X, 2.0));
  CHECK(svd.sigma(0) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(std::abs(svd.sigma(1)) <= 1e-12);
}

TEST_CASE("svt is non-expansive and shrinkages compose") {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix X = testutil::random_matrix(3, 100, rng);
    const Matrix Y = testutil::random_matrix(3, 100, rng);
    CHECK((svt(X, 3.0) - svt(Y, 3.0)).norm() <= (X - Y).norm() + 1e-12);
    const ThinSVD a = thin_svd_small_k(X);
    const ThinSVD b = thin_svd_small_k(svt(svt(X, 1.5), 2.0));
    for (int i = 0; i < 3; ++i) CHECK(b.sigma(i) == doctest::Approx(std::max(a.sigma(i) - 3.5, 0.0)).epsilon(1e-9));
  }
}

TEST_CASE("soft threshold") {
  Matrix X(1, 3);
  X << 5, -5, 1;
  const Matrix Y = soft_threshold(X, 2.0);
  CHECK(Y(0, 0) == 3);
  CHECK(Y(0, 1) == -3);
  CHECK(Y(0, 2) == 0);
  CHECK(soft_threshold(X, 0.0) == X);
  std::mt19937_64 rng(17);
  const Matrix R = testutil::random_matrix(5, 40, rng);
  double expected = 0.0;
  for (Eigen::Index i = 0; i < R.size(); ++i) expected += std::max(std::abs(R.data()[i]) - 0.7, 0.0);
  CHECK(soft_threshold(R, 0.7).cwiseAbs().sum() == doctest::Approx(expected).epsilon(1e-12));
  CHECK_THROWS_AS(soft_threshold(R, -0.1), std::invalid_argument);
}

TEST_CASE("non-finite input is a numerical error") {
  Matrix X = Matrix::Ones(2, 3);
  X(1, 2) = std::nan("");
  CHECK_THROWS_AS(thin_svd_small_k(X), NumericalError);
}

TEST_CASE("nuclear norm") {
  Matrix X = Matrix::Zero(2, 3);
  X(0, 0) = 3;
  X(1, 2) = -4;
  CHECK(nuclear_norm(X) == doctest::Approx(7.0));
}

}
