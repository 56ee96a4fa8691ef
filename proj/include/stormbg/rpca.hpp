#pragma once

#include <vector>

#include "stormbg/core.hpp"

namespace stormbg {

/// Settings for the inexact augmented Lagrange multiplier RPCA solver.
/// A non-positive lambda selects the default 1 / sqrt(max(rows, cols)).
struct RpcaConfig {
  double lambda = 0.0;
  double tol = 1e-7;
  int max_iter = 500;
  double rho = 1.5;

  void validate() const;
};

struct RpcaResult {
  FlatMatrix L;
  FlatMatrix S;
  int iterations = 0;
  double residual = 0.0;  // ||M - L - S||_F / ||M||_F
  bool converged = false;
  std::vector<double> objective;  // ||L||_* + lambda ||S||_1 per iteration
};

/// Solves min ||L||_* + lambda ||S||_1 subject to L + S = M.
///
/// Each iteration takes a sparse step (soft threshold of M - L + Y/mu by
/// lambda/mu), a low-rank step (SVT of M - S + Y/mu by 1/mu) and a dual
/// ascent step, with the penalty mu growing by rho. Neither output is
/// clamped to be non-negative. When max_iter is exhausted the last iterate is
/// returned with converged == false.
RpcaResult rpca_ialm(const FlatMatrix& M, const RpcaConfig& cfg = {});

/// Solves every triplet window of the stack (same tiling as the network
/// decomposition) and converts back to images: L is clamped at 0 and S to
/// [0, M]. `unconverged`, when given, receives the number of windows that hit
/// max_iter.
DecompositionResult rpca_decompose(const ImageStack& stack, std::size_t delta, const RpcaConfig& cfg = {},
                                   unsigned threads = 1, std::size_t* unconverged = nullptr);

}  // namespace stormbg
