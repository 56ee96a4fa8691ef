#include "stormbg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

namespace stormbg {

double sparsity(std::span<const float> values, double epsilon) {
  if (values.empty()) throw std::invalid_argument("sparsity: empty input");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("sparsity: epsilon must be >= 0");
  const auto zeros = std::count_if(values.begin(), values.end(),
                                   [epsilon](float v) { return std::abs(static_cast<double>(v)) <= epsilon; });
  return 100.0 * static_cast<double>(zeros) / static_cast<double>(values.size());
}

namespace {

double gaussian_1d(const Eigen::Vector4d& p, double t, double* grad) {
  // p = amplitude, center, sigma, offset
  const double d = t - p(1);
  const double e = std::exp(-d * d / (2.0 * p(2) * p(2)));
  if (grad) {
    grad[0] = e;
    grad[1] = p(0) * e * d / (p(2) * p(2));
    grad[2] = p(0) * e * d * d / (p(2) * p(2) * p(2));
    grad[3] = 1.0;
  }
  return p(0) * e + p(3);
}

double profile_cost(std::span<const double> y, const Eigen::Vector4d& p) {
  double ss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = gaussian_1d(p, static_cast<double>(i), nullptr) - y[i];
    ss += r * r;
  }
  return ss;
}

}  // namespace

FwhmResult fwhm_profile(std::span<const double> profile, double spacing) {
  if (profile.size() < 5) throw std::invalid_argument("fwhm: need at least 5 samples");
  if (!(spacing > 0.0)) throw std::invalid_argument("fwhm: spacing must be positive");
  const auto [lo_it, hi_it] = std::minmax_element(profile.begin(), profile.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) throw DataError("fwhm: constant profile");

  double wsum = 0.0, mean = 0.0, var = 0.0;
  for (std::size_t i = 0; i < profile.size(); ++i) {
    wsum += profile[i] - lo;
    mean += (profile[i] - lo) * static_cast<double>(i);
  }
  mean /= wsum;
  for (std::size_t i = 0; i < profile.size(); ++i) {
    const double d = static_cast<double>(i) - mean;
    var += (profile[i] - lo) * d * d;
  }
  var /= wsum;

  Eigen::Vector4d p(hi - lo, static_cast<double>(hi_it - profile.begin()), std::max(std::sqrt(var), 0.5), lo);
  double cost = profile_cost(profile, p);
  double lambda = 1e-3;
  bool converged = false;
  for (int iter = 0; iter < 200; ++iter) {
    Eigen::Matrix4d jtj = Eigen::Matrix4d::Zero();
    Eigen::Vector4d jtr = Eigen::Vector4d::Zero();
    double g[4];
    for (std::size_t i = 0; i < profile.size(); ++i) {
      const double r = gaussian_1d(p, static_cast<double>(i), g) - profile[i];
      const Eigen::Map<const Eigen::Vector4d> gv(g);
      jtj.noalias() += gv * gv.transpose();
      jtr.noalias() += gv * r;
    }
    bool stepped = false;
    while (lambda < 1e12) {
      Eigen::Matrix4d damped = jtj;
      damped.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
      const Eigen::Vector4d step = damped.ldlt().solve(-jtr);
      Eigen::Vector4d trial = p + step;
      trial(2) = std::max(std::abs(trial(2)), 1e-3);
      const double trial_cost = step.allFinite() ? profile_cost(profile, trial) : INFINITY;
      if (trial_cost <= cost) {
        const bool small = (cost - trial_cost) <= 1e-14 * std::max(cost, 1e-300) || step.norm() <= 1e-12;
        p = trial;
        cost = trial_cost;
        lambda = std::max(lambda / 10.0, 1e-12);
        stepped = true;
        converged = small;
        break;
      }
      lambda *= 10.0;
    }
    if (!stepped) converged = true;  // no descent direction left: local minimum
    if (converged) break;
  }
  if (!converged || !p.allFinite() || !(p(2) > 0.0))
    throw NumericalError("fwhm: Gaussian fit did not converge");

  FwhmResult out;
  out.amplitude = p(0);
  out.center = p(1);
  out.sigma = p(2);
  out.offset = p(3);
  out.fwhm = kFwhmPerSigma * p(2) * spacing;
  out.residual = std::sqrt(cost);
  return out;
}

Frame gaussian_blur(const Frame& frame, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_blur: sigma must be positive");
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (int i = -radius; i <= radius; ++i) kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double total = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  for (double& k : kernel) k /= total;

  const int h = static_cast<int>(frame.height), w = static_cast<int>(frame.width);
  std::vector<double> tmp(frame.pixels.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = std::clamp(x + i, 0, w - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] * frame.pixels[static_cast<std::size_t>(y * w + xx)];
      }
      tmp[static_cast<std::size_t>(y * w + x)] = acc;
    }
  Frame out(frame.height, frame.width);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = std::clamp(y + i, 0, h - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(yy * w + x)];
      }
      out.pixels[static_cast<std::size_t>(y * w + x)] = static_cast<float>(acc);
    }
  return out;
}

Frame block_average(const Frame& frame, std::size_t factor) {
  if (factor == 0 || frame.height % factor != 0 || frame.width % factor != 0)
    throw DataError("block_average: frame size is not a multiple of the factor");
  Frame out(frame.height / factor, frame.width / factor);
  const double norm = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) {
      double acc = 0.0;
      for (std::size_t dy = 0; dy < factor; ++dy)
        for (std::size_t dx = 0; dx < factor; ++dx) acc += frame(y * factor + dy, x * factor + dx);
      out(y, x) = static_cast<float>(acc * norm);
    }
  return out;
}

SquirrelScores squirrel_scores(const Frame& reconstruction, const Frame& widefield, double blur_sigma) {
  if (!(blur_sigma > 0.0)) throw std::invalid_argument("squirrel: blur sigma must be positive");
  if (widefield.height == 0 || widefield.width == 0 || reconstruction.height % widefield.height != 0 ||
      reconstruction.width % widefield.width != 0 ||
      reconstruction.height / widefield.height != reconstruction.width / widefield.width)
    throw DataError("squirrel: reconstruction size must be an integer multiple of the widefield size");
  const std::size_t factor = reconstruction.height / widefield.height;
  const Frame down = block_average(gaussian_blur(reconstruction, blur_sigma), factor);

  const std::size_t n = widefield.pixels.size();
  double md = 0.0, mw = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    md += down.pixels[i];
    mw += widefield.pixels[i];
  }
  md /= static_cast<double>(n);
  mw /= static_cast<double>(n);
  double sdd = 0.0, sww = 0.0, sdw = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = down.pixels[i] - md, b = widefield.pixels[i] - mw;
    sdd += a * a;
    sww += b * b;
    sdw += a * b;
  }
  if (!(sdd > 0.0) || !(sww > 0.0)) throw DataError("squirrel: zero-variance input");

  SquirrelScores out;
  out.scale = sdw / sdd;
  out.offset = mw - out.scale * md;
  double sff = 0.0, sfw = 0.0, se = 0.0, mf = 0.0;
  std::vector<double> fitted(n);
  for (std::size_t i = 0; i < n; ++i) {
    fitted[i] = out.scale * down.pixels[i] + out.offset;
    mf += fitted[i];
  }
  mf /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = fitted[i] - mf, b = widefield.pixels[i] - mw;
    sff += a * a;
    sfw += a * b;
    const double e = fitted[i] - widefield.pixels[i];
    se += e * e;
  }
  out.rsp = sff > 0.0 ? sfw / std::sqrt(sff * sww) : 0.0;
  out.rse = std::sqrt(se / static_cast<double>(n));
  return out;
}

std::vector<Match> match_localizations(const LocalizationTable& table, const GroundTruth& truth, double match_radius) {
  if (!(match_radius > 0.0)) throw std::invalid_argument("localization_error: match radius must be positive");
  const std::size_t ne = truth.emitters.size();
  const std::size_t frames = ne ? truth.on.size() / ne : 0;
  std::vector<Match> matches;
  std::size_t begin = 0;
  while (begin < table.rows.size()) {
    const std::size_t f = table.rows[begin].frame;
    std::size_t end = begin;
    while (end < table.rows.size() && table.rows[end].frame == f) ++end;
    if (f < frames) {
      std::vector<Match> pairs;
      for (std::size_t r = begin; r < end; ++r)
        for (std::size_t e = 0; e < ne; ++e) {
          if (!truth.active(f, e)) continue;
          const double d = std::hypot(table.rows[r].x - truth.emitters[e].x, table.rows[r].y - truth.emitters[e].y);
          if (d <= match_radius) pairs.push_back({r, e, d});
        }
      std::stable_sort(pairs.begin(), pairs.end(), [](const Match& a, const Match& b) { return a.distance < b.distance; });
      std::vector<bool> row_used(end - begin, false), emitter_used(ne, false);
      for (const Match& m : pairs) {
        if (row_used[m.row - begin] || emitter_used[m.emitter]) continue;
        row_used[m.row - begin] = true;
        emitter_used[m.emitter] = true;
        matches.push_back(m);
      }
    }
    begin = end;
  }
  return matches;
}

LocalizationError localization_error(const LocalizationTable& table, const GroundTruth& truth, double match_radius) {
  const std::vector<Match> matches = match_localizations(table, truth, match_radius);
  LocalizationError out;
  out.matched = matches.size();
  out.detected = table.rows.size();
  out.truth_count = static_cast<std::size_t>(std::count(truth.on.begin(), truth.on.end(), std::uint8_t{1}));
  double ss = 0.0;
  for (const Match& m : matches) ss += m.distance * m.distance;
  out.rmse = matches.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(matches.size()));
  out.recall = out.truth_count ? static_cast<double>(out.matched) / static_cast<double>(out.truth_count) : 0.0;
  out.precision_defined = out.detected > 0;
  out.precision = out.detected ? static_cast<double>(out.matched) / static_cast<double>(out.detected) : 0.0;
  return out;
}

ProfileFwhm emitter_profile_fwhm(const LocalizationTable& table, const GroundTruth& truth,
                                 std::span<const Match> matches, int magnification, double radius) {
  if (magnification < 1) throw std::invalid_argument("profile: magnification must be >= 1");
  if (!(radius > 0.0)) throw std::invalid_argument("profile: radius must be positive");
  const auto half = static_cast<long>(std::ceil(radius * magnification));
  std::vector<double> px(static_cast<std::size_t>(2 * half + 1), 0.0), py(px.size(), 0.0);
  ProfileFwhm out;
  for (const Match& m : matches) {
    const Localization& loc = table.rows.at(m.row);
    const EmitterPosition& e = truth.emitters.at(m.emitter);
    const long bx = std::lround((loc.x - e.x) * magnification) + half;
    const long by = std::lround((loc.y - e.y) * magnification) + half;
    if (bx < 0 || by < 0 || bx > 2 * half || by > 2 * half) continue;
    px[static_cast<std::size_t>(bx)] += 1.0;
    py[static_cast<std::size_t>(by)] += 1.0;
    ++out.count;
  }
  const double spacing = 1.0 / magnification;
  out.x = fwhm_profile(px, spacing);
  out.y = fwhm_profile(py, spacing);
  out.fwhm = 0.5 * (out.x.fwhm + out.y.fwhm);
  return out;
}

}  // namespace stormbg
