#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "stormbg/core.hpp"
#include "stormbg/linalg.hpp"

namespace stormbg {

/// Same-size, stride-1 2D convolution (cross-correlation) with zero padding.
struct ConvLayer {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::vector<double> weights;  // [out][in][ky][kx]
  std::vector<double> bias;     // [out]

  ConvLayer() = default;
  ConvLayer(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw);

  double& weight(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) {
    return weights[((o * in_channels + i) * kernel_h + ky) * kernel_w + kx];
  }
  double weight(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) const {
    return weights[((o * in_channels + i) * kernel_h + ky) * kernel_w + kx];
  }
  std::size_t fan_in() const { return in_channels * kernel_h * kernel_w; }
  void validate() const;

  bool operator==(const ConvLayer&) const = default;
};

/// conv -> ReLU -> conv mapping a k-frame window to its low-rank estimate.
struct SLNetModel {
  ConvLayer layer1;  // k -> c
  ConvLayer layer2;  // c -> k

  // provenance
  std::uint64_t hyperparams_hash = 0;
  std::uint32_t epochs_trained = 0;
  // max-scale factor of the training data; 0 when unknown
  double input_scale = 0.0;

  std::size_t frames() const { return layer1.in_channels; }
  std::size_t hidden() const { return layer1.out_channels; }
  std::size_t parameter_count() const;
  void validate() const;

  bool operator==(const SLNetModel&) const = default;
};

/// How the loss gradient passes through the singular value shrinkage.
enum class ShrinkGradient {
  StraightThrough,  // identity Jacobian
  Subspace,         // project onto the retained singular subspaces
};

struct Hyperparams {
  double mu = 0.01;
  double alpha = 12.0;
  int epochs = 100;
  double learning_rate = 1e-3;
  std::size_t triplet_offset = 50;
  std::size_t hidden_channels = 1;
  std::size_t kernel_size = 3;
  std::uint64_t seed = 0;
  NormalizationMethod normalization = NormalizationMethod::MaxScale;
  ShrinkGradient shrink_gradient = ShrinkGradient::Subspace;
  // apply the shrinkage to the network output when decomposing
  bool shrink_at_inference = false;

  void validate() const;
  /// FNV-1a hash of every field that influences training.
  std::uint64_t hash() const;
};

struct LossTerms {
  double total = 0.0;
  double data = 0.0;      // mean |M - Lt|
  double sparse = 0.0;    // alpha * mean(S)
  double residual = 0.0;  // mean |R|
};

struct EpochRecord {
  double total = 0.0;
  double data = 0.0;
  double sparse = 0.0;
  double residual = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double seconds = 0.0;
  int epochs_completed = 0;
  // hidden channels whose ReLU is zero on every training window after the
  // last epoch; such channels receive no gradient and cannot recover
  std::size_t dead_channels = 0;
};

/// Gradient of the loss for every parameter, laid out like the model.
struct Gradients {
  std::vector<double> w1, b1, w2, b2;
};

/// Intermediate activations kept for the backward pass.
struct ForwardCache {
  std::vector<double> pre_activation;  // c x (m*n)
  std::vector<double> hidden;          // ReLU(pre_activation)
};

/// He/Kaiming normal initialisation: N(0, 2 / fan_in) weights, zero biases.
ConvLayer kaiming_init(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw, std::uint64_t seed);

SLNetModel init_model(std::size_t frames, std::size_t hidden, std::size_t kernel, std::uint64_t seed);

/// Network output for a k-frame window; shape equals the input.
FlatMatrix forward(const SLNetModel& model, const FlatMatrix& window);
FlatMatrix forward(const SLNetModel& model, const FlatMatrix& window, ForwardCache& cache);

/// Loss with Lt = svt(L_hat, mu), S = (M - Lt)+ and R = (M - Lt)-.
LossTerms loss(const FlatMatrix& M, const FlatMatrix& L_hat, double mu, double alpha);

/// Loss terms for an already shrunk estimate Lt.
LossTerms loss_from_shrunk(const Matrix& M, const Matrix& L_tilde, double alpha);

/// d loss / d Lt for the shrunk estimate Lt (subgradient 0 at kinks).
Matrix loss_gradient(const Matrix& M, const Matrix& L_tilde, double alpha);

/// Backpropagate an upstream gradient on the network output.
Gradients backprop(const SLNetModel& model, const FlatMatrix& window, const ForwardCache& cache,
                   const Matrix& upstream);

/// Full loss gradient for one window; optionally reports the loss terms.
Gradients backward(const SLNetModel& model, const FlatMatrix& window, const Hyperparams& hp,
                   LossTerms* terms = nullptr);

/// Unsupervised training on every triplet (t, t+d, t+2d) of the stack,
/// one Adam step per triplet, triplet order reshuffled each epoch.
std::pair<SLNetModel, TrainReport> train(const ImageStack& stack, const Hyperparams& hp);

/// Low-rank / sparse split of a whole stack with a trained model.
/// Windows are evaluated independently on up to `threads` workers; the result
/// does not depend on the thread count.
DecompositionResult decompose(const SLNetModel& model, const ImageStack& stack, const Hyperparams& hp,
                              unsigned threads = 1);

}  // namespace stormbg
