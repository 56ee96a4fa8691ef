#include "stormbg/rpca.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

#include "stormbg/linalg.hpp"
#include "stormbg/parallel.hpp"

namespace stormbg {

void RpcaConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("rpca: lambda must be positive");
  if (!(tol > 0.0 && tol < 1.0)) throw std::invalid_argument("rpca: tol must lie in (0, 1)");
  if (max_iter < 1) throw std::invalid_argument("rpca: max_iter must be >= 1");
  if (!(rho > 1.0)) throw std::invalid_argument("rpca: rho must exceed 1");
}

RpcaResult rpca_ialm(const FlatMatrix& M, const RpcaConfig& cfg) {
  cfg.validate();
  const Matrix& D = M.data;
  if (D.size() == 0) throw std::invalid_argument("rpca: empty matrix");
  if (!D.allFinite()) throw NumericalError("rpca: input contains non-finite entries");

  const double lambda =
      cfg.lambda > 0.0 ? cfg.lambda : 1.0 / std::sqrt(static_cast<double>(std::max(D.rows(), D.cols())));

  RpcaResult out;
  out.L = FlatMatrix{Matrix::Zero(D.rows(), D.cols()), M.height, M.width};
  out.S = FlatMatrix{Matrix::Zero(D.rows(), D.cols()), M.height, M.width};

  const double norm_d = D.norm();
  if (norm_d == 0.0) {
    out.iterations = 1;
    out.converged = true;
    out.objective.push_back(0.0);
    return out;
  }

  // Dual variable initialised as D / J(D), J = max(||D||_2, ||D||_inf / lambda).
  const double spectral = thin_svd_small_k(D).sigma(0);
  const double inf_norm = D.cwiseAbs().maxCoeff();
  Matrix Y = D / std::max(spectral, inf_norm / lambda);
  double mu = 1.25 / spectral;
  const double mu_max = mu * 1e7;

  Matrix& L = out.L.data;
  Matrix& S = out.S.data;
  for (int it = 1; it <= cfg.max_iter; ++it) {
    S = soft_threshold(D - L + Y / mu, lambda / mu);
    ThinSVD svd;
    L = svt(D - S + Y / mu, 1.0 / mu, svd);
    const Matrix Z = D - L - S;
    Y += mu * Z;
    mu = std::min(mu * cfg.rho, mu_max);

    out.iterations = it;
    out.residual = Z.norm() / norm_d;
    out.objective.push_back(nuclear_norm(L) + lambda * S.cwiseAbs().sum());
    if (!std::isfinite(out.residual)) throw NumericalError("rpca: iteration produced non-finite values");
    if (out.residual <= cfg.tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

DecompositionResult rpca_decompose(const ImageStack& stack, std::size_t delta, const RpcaConfig& cfg, unsigned threads,
                                   std::size_t* unconverged) {
  cfg.validate();
  stack.validate();
  const std::vector<WindowSlot> plan = triplet_plan(stack.frames(), delta);
  std::vector<std::vector<std::size_t>> served(stack.frames());
  for (std::size_t j = 0; j < plan.size(); ++j) served[plan[j].frames[0]].push_back(j);
  std::vector<std::size_t> windows;
  for (std::size_t a = 0; a < served.size(); ++a)
    if (!served[a].empty()) windows.push_back(a);

  DecompositionResult result{ImageStack(stack.frames(), stack.height(), stack.width()),
                             ImageStack(stack.frames(), stack.height(), stack.width())};
  result.low_rank.pixel_size_nm = result.sparse.pixel_size_nm = stack.pixel_size_nm;
  std::atomic<std::size_t> failed{0};
  parallel_for(windows.size(), threads, [&](std::size_t wi) {
    const auto& targets = served[windows[wi]];
    const RpcaResult r = rpca_ialm(flatten(stack, plan[targets.front()].frames), cfg);
    if (!r.converged) ++failed;
    for (std::size_t j : targets) {
      const auto slot = static_cast<Eigen::Index>(plan[j].slot);
      auto low = result.low_rank.frame(j);
      auto sparse = result.sparse.frame(j);
      const auto raw = stack.frame(j);
      for (std::size_t p = 0; p < low.size(); ++p) {
        const auto col = static_cast<Eigen::Index>(p);
        low[p] = static_cast<float>(std::max(r.L.data(slot, col), 0.0));
        sparse[p] = static_cast<float>(std::clamp(r.S.data(slot, col), 0.0, static_cast<double>(raw[p])));
      }
    }
  });
  if (unconverged) *unconverged = failed;
  return result;
}

}  // namespace stormbg
