#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "stormbg/core.hpp"

namespace stormbg {

/// Wide Gaussian background component, point-sampled at pixel centres.
struct BackgroundBlob {
  double x = 0.0;
  double y = 0.0;
  double sigma = 10.0;
  double peak = 100.0;
};

enum class Modulation { Sinusoid, LinearDrift };

/// Parameters of a synthetic blinking-emitter stack.
///
/// Coordinates are continuous pixel units with pixel (col c, row r) covering
/// [c, c+1) x [r, r+1). The background is `offset + blobs` in pattern 1 and
/// `blobs2` in pattern 2; each pattern is scaled per frame by its own temporal
/// factor, so the noiseless background is rank 1 (or 2 with blobs2 set).
struct SynthConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t n_frames = 300;
  std::size_t n_emitters = 100;
  double psf_sigma = 1.3;
  double blink_on_prob = 0.02;
  double photons_per_emitter = 1000.0;
  double background_offset = 0.0;
  std::vector<BackgroundBlob> blobs;
  std::vector<BackgroundBlob> blobs2;
  Modulation modulation = Modulation::Sinusoid;
  double modulation_depth = 0.3;
  double modulation_period = 200.0;  // frames, sinusoid only
  double read_noise_sigma = 0.0;
  bool poisson_noise = true;
  // emitters are placed at least this far from the frame edges
  double emitter_margin = 0.0;
  std::uint64_t seed = 0;

  void validate() const;

  /// Frames 64x64x300 with structured rank-1 background; used by the
  /// acceptance suite and as the CLI default.
  static SynthConfig storm_default(std::uint64_t seed = 0);
};

struct EmitterPosition {
  double x = 0.0;
  double y = 0.0;
};

struct GroundTruth {
  std::vector<EmitterPosition> emitters;
  std::vector<std::uint8_t> on;  // n_frames x n_emitters, row-major
  ImageStack background;         // noiseless, single precision
  ImageStack signal;             // noiseless
  Matrix background_patterns;    // 2 x (m*n) spatial patterns, double precision
  Matrix background_factors;     // n_frames x 2 temporal factors

  /// Noiseless background of the selected frames in double precision; its
  /// rank is at most the number of non-zero patterns.
  FlatMatrix background_window(std::span<const std::size_t> frames) const;

  bool active(std::size_t frame, std::size_t emitter) const { return on[frame * emitters.size() + emitter] != 0; }
};

/// Temporal factor of pattern 1 (index 0) or pattern 2 (index 1) at a frame.
double modulation_factor(const SynthConfig& cfg, std::size_t frame, int pattern);

/// Expected photons of one emitter integrated over pixel (col, row).
double psf_pixel_integral(double x, double y, double sigma, double photons, std::size_t col, std::size_t row);

/// Poisson sample by inversion below mean 50, rounded normal approximation above.
template <class Rng>
double sample_poisson(double mean, Rng& rng) {
  if (mean <= 0.0) return 0.0;
  if (mean > 50.0) {
    std::normal_distribution<double> normal(mean, std::sqrt(mean));
    return std::max(0.0, std::round(normal(rng)));
  }
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double u = uniform(rng);
  double p = std::exp(-mean);
  double cdf = p;
  double k = 0.0;
  while (u > cdf && k < 1000.0) {
    k += 1.0;
    p *= mean / k;
    cdf += p;
  }
  return k;
}

/// Renders the stack and its ground truth. Frames are generated with
/// per-frame seeds derived from (seed, frame), so output does not depend on
/// `threads`.
std::pair<ImageStack, GroundTruth> generate(const SynthConfig& cfg, unsigned threads = 1);

}  // namespace stormbg
