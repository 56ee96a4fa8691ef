#include "stormbg/synth.hpp"

#include <numbers>
#include <stdexcept>

#include "stormbg/parallel.hpp"

namespace stormbg {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t counter) {
  std::seed_seq seq{seed, counter, std::uint64_t{0x53594e5448}};
  return std::mt19937_64(seq);
}

double gaussian_blob(const BackgroundBlob& b, double px, double py) {
  const double dx = px - b.x;
  const double dy = py - b.y;
  return b.peak * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
}

}  // namespace

void SynthConfig::validate() const {
  if (height == 0 || width == 0 || n_frames == 0) throw std::invalid_argument("synth: dimensions must be positive");
  if (!(psf_sigma > 0.0)) throw std::invalid_argument("synth: psf sigma must be positive");
  if (!(blink_on_prob >= 0.0 && blink_on_prob <= 1.0)) throw std::invalid_argument("synth: blink probability outside [0, 1]");
  if (!(photons_per_emitter >= 0.0)) throw std::invalid_argument("synth: photon count must be >= 0");
  if (!(background_offset >= 0.0)) throw std::invalid_argument("synth: background offset must be >= 0");
  if (!(read_noise_sigma >= 0.0)) throw std::invalid_argument("synth: read noise must be >= 0");
  if (!(modulation_depth >= 0.0 && modulation_depth < 1.0)) throw std::invalid_argument("synth: modulation depth outside [0, 1)");
  if (!(modulation_period > 0.0)) throw std::invalid_argument("synth: modulation period must be positive");
  if (!(emitter_margin >= 0.0) || 2.0 * emitter_margin >= static_cast<double>(std::min(height, width)))
    throw std::invalid_argument("synth: emitter margin leaves no room for emitters");
  for (const auto* set : {&blobs, &blobs2})
    for (const auto& b : *set)
      if (!(b.sigma > 0.0) || !(b.peak >= 0.0)) throw std::invalid_argument("synth: background blobs need sigma > 0, peak >= 0");
}

SynthConfig SynthConfig::storm_default(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.height = 64;
  cfg.width = 64;
  cfg.n_frames = 300;
  cfg.n_emitters = 120;
  cfg.psf_sigma = 1.3;
  cfg.blink_on_prob = 0.03;
  cfg.photons_per_emitter = 1500.0;
  cfg.background_offset = 20.0;
  cfg.blobs = {{18.0, 22.0, 12.0, 120.0}, {46.0, 40.0, 10.0, 90.0}, {30.0, 56.0, 8.0, 60.0}};
  cfg.modulation = Modulation::Sinusoid;
  cfg.modulation_depth = 0.3;
  cfg.modulation_period = 200.0;
  cfg.read_noise_sigma = 2.0;
  cfg.emitter_margin = 3.0;
  cfg.seed = seed;
  return cfg;
}

double modulation_factor(const SynthConfig& cfg, std::size_t frame, int pattern) {
  const double f = static_cast<double>(frame);
  if (cfg.modulation == Modulation::LinearDrift) {
    const double span = cfg.n_frames > 1 ? static_cast<double>(cfg.n_frames - 1) : 1.0;
    return pattern == 0 ? 1.0 + cfg.modulation_depth * (f / span) : 1.0 - cfg.modulation_depth * (f / span);
  }
  const double phase = 2.0 * std::numbers::pi * f / cfg.modulation_period;
  return pattern == 0 ? 1.0 + cfg.modulation_depth * std::sin(phase) : 1.0 + cfg.modulation_depth * std::cos(phase);
}

double psf_pixel_integral(double x, double y, double sigma, double photons, std::size_t col, std::size_t row) {
  const double s = std::numbers::sqrt2 * sigma;
  const double c = static_cast<double>(col);
  const double r = static_cast<double>(row);
  const double ix = 0.5 * (std::erf((c + 1.0 - x) / s) - std::erf((c - x) / s));
  const double iy = 0.5 * (std::erf((r + 1.0 - y) / s) - std::erf((r - y) / s));
  return photons * ix * iy;
}

FlatMatrix GroundTruth::background_window(std::span<const std::size_t> frames) const {
  FlatMatrix out;
  out.height = background.height();
  out.width = background.width();
  out.data.resize(static_cast<Eigen::Index>(frames.size()), background_patterns.cols());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto f = static_cast<Eigen::Index>(frames[i]);
    out.data.row(static_cast<Eigen::Index>(i)) = background_factors(f, 0) * background_patterns.row(0) +
                                                 background_factors(f, 1) * background_patterns.row(1);
  }
  return out;
}

std::pair<ImageStack, GroundTruth> generate(const SynthConfig& cfg, unsigned threads) {
  cfg.validate();
  const std::size_t h = cfg.height, w = cfg.width, n = cfg.n_frames, ne = cfg.n_emitters;

  GroundTruth truth;
  truth.emitters.resize(ne);
  {
    auto rng = stream(cfg.seed, 0);
    std::uniform_real_distribution<double> ux(cfg.emitter_margin, static_cast<double>(w) - cfg.emitter_margin);
    std::uniform_real_distribution<double> uy(cfg.emitter_margin, static_cast<double>(h) - cfg.emitter_margin);
    for (auto& e : truth.emitters) {
      e.x = ux(rng);
      e.y = uy(rng);
    }
  }
  truth.on.assign(n * ne, 0);
  truth.background = ImageStack(n, h, w);
  truth.signal = ImageStack(n, h, w);
  ImageStack stack(n, h, w);

  // static spatial patterns, sampled at pixel centres
  std::vector<double> pattern1(h * w, cfg.background_offset), pattern2(h * w, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double px = static_cast<double>(c) + 0.5;
      const double py = static_cast<double>(r) + 0.5;
      for (const auto& b : cfg.blobs) pattern1[r * w + c] += gaussian_blob(b, px, py);
      for (const auto& b : cfg.blobs2) pattern2[r * w + c] += gaussian_blob(b, px, py);
    }
  }

  truth.background_patterns.resize(2, static_cast<Eigen::Index>(h * w));
  truth.background_factors.resize(static_cast<Eigen::Index>(n), 2);
  for (std::size_t p = 0; p < h * w; ++p) {
    truth.background_patterns(0, static_cast<Eigen::Index>(p)) = pattern1[p];
    truth.background_patterns(1, static_cast<Eigen::Index>(p)) = pattern2[p];
  }
  for (std::size_t f = 0; f < n; ++f) {
    truth.background_factors(static_cast<Eigen::Index>(f), 0) = modulation_factor(cfg, f, 0);
    truth.background_factors(static_cast<Eigen::Index>(f), 1) = modulation_factor(cfg, f, 1);
  }

  const int box = static_cast<int>(std::ceil(5.0 * cfg.psf_sigma));
  parallel_for(n, threads, [&](std::size_t f) {
    auto rng = stream(cfg.seed, f + 1);
    std::bernoulli_distribution blink(cfg.blink_on_prob);
    auto signal = truth.signal.frame(f);
    std::vector<double> sig(h * w, 0.0);
    for (std::size_t e = 0; e < ne; ++e) {
      if (!blink(rng)) continue;
      truth.on[f * ne + e] = 1;
      const auto& em = truth.emitters[e];
      const int cx = static_cast<int>(std::floor(em.x));
      const int cy = static_cast<int>(std::floor(em.y));
      for (int r = std::max(0, cy - box); r <= std::min(static_cast<int>(h) - 1, cy + box); ++r)
        for (int c = std::max(0, cx - box); c <= std::min(static_cast<int>(w) - 1, cx + box); ++c)
          sig[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)] +=
              psf_pixel_integral(em.x, em.y, cfg.psf_sigma, cfg.photons_per_emitter, static_cast<std::size_t>(c),
                                 static_cast<std::size_t>(r));
    }
    const double m1 = modulation_factor(cfg, f, 0);
    const double m2 = modulation_factor(cfg, f, 1);
    auto bg = truth.background.frame(f);
    auto out = stack.frame(f);
    std::normal_distribution<double> read(0.0, cfg.read_noise_sigma > 0.0 ? cfg.read_noise_sigma : 1.0);
    for (std::size_t p = 0; p < h * w; ++p) {
      const double b = m1 * pattern1[p] + m2 * pattern2[p];
      bg[p] = static_cast<float>(b);
      signal[p] = static_cast<float>(sig[p]);
      double v = sig[p] + b;
      if (cfg.poisson_noise) v = sample_poisson(v, rng);
      if (cfg.read_noise_sigma > 0.0) v += read(rng);
      out[p] = static_cast<float>(std::max(v, 0.0));
    }
  });
  return {std::move(stack), std::move(truth)};
}

}  // namespace stormbg
