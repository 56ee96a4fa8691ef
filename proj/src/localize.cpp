#include "stormbg/localize.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Dense>

#include "stormbg/parallel.hpp"

namespace stormbg {

std::vector<Peak> detect(const Frame& frame, double threshold, double min_separation) {
  if (!(threshold > 0.0)) throw std::invalid_argument("detect: threshold must be positive");
  const int h = static_cast<int>(frame.height), w = static_cast<int>(frame.width);
  std::vector<Peak> candidates;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float v = frame(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
      if (!(v > threshold)) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const float n = frame(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
          // neighbours earlier in scan order must be strictly lower
          const bool earlier = dy < 0 || (dy == 0 && dx < 0);
          if (n > v || (earlier && n == v)) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) candidates.push_back({x, y, v});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Peak& a, const Peak& b) { return a.value > b.value; });
  std::vector<Peak> kept;
  const double min_d2 = min_separation * min_separation;
  for (const Peak& c : candidates) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Peak& k) {
      const double dx = c.x - k.x, dy = c.y - k.y;
      return dx * dx + dy * dy < min_d2;
    });
    if (!suppressed) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end(), [](const Peak& a, const Peak& b) { return a.y != b.y ? a.y < b.y : a.x < b.x; });
  return kept;
}

namespace {

struct Roi {
  int x0, y0, x1, y1;  // inclusive-exclusive
  std::vector<double> values;
  int width() const { return x1 - x0; }
};

// Pixel-integrated Gaussian: offset + photons * Ex(col) * Ey(row).
struct IntegratedGaussian {
  static constexpr int kParams = 5;  // x, y, sigma, photons, offset

  static double axis(double c, double mu, double sigma) {
    const double s = std::numbers::sqrt2 * sigma;
    return 0.5 * (std::erf((c + 1.0 - mu) / s) - std::erf((c - mu) / s));
  }

  static double gauss(double t, double sigma) { return std::exp(-t * t / (2.0 * sigma * sigma)); }

  // value and gradient with respect to the parameters
  static double eval(const Eigen::Matrix<double, kParams, 1>& p, double c, double r, double* grad) {
    const double sig = p(2);
    const double ex = axis(c, p(0), sig);
    const double ey = axis(r, p(1), sig);
    if (grad) {
      const double norm = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * sig);
      const double gx0 = gauss(c - p(0), sig), gx1 = gauss(c + 1.0 - p(0), sig);
      const double gy0 = gauss(r - p(1), sig), gy1 = gauss(r + 1.0 - p(1), sig);
      const double dex_dx = norm * (gx0 - gx1);
      const double dey_dy = norm * (gy0 - gy1);
      const double dex_ds = norm / sig * ((c - p(0)) * gx0 - (c + 1.0 - p(0)) * gx1);
      const double dey_ds = norm / sig * ((r - p(1)) * gy0 - (r + 1.0 - p(1)) * gy1);
      grad[0] = p(3) * dex_dx * ey;
      grad[1] = p(3) * ex * dey_dy;
      grad[2] = p(3) * (dex_ds * ey + ex * dey_ds);
      grad[3] = ex * ey;
      grad[4] = 1.0;
    }
    return p(4) + p(3) * ex * ey;
  }
};

double sum_squares(const Roi& roi, const Eigen::Matrix<double, 5, 1>& p) {
  double ss = 0.0;
  std::size_t i = 0;
  for (int r = roi.y0; r < roi.y1; ++r)
    for (int c = roi.x0; c < roi.x1; ++c, ++i) {
      const double d = IntegratedGaussian::eval(p, c, r, nullptr) - roi.values[i];
      ss += d * d;
    }
  return ss;
}

}  // namespace

Localization fit_gaussian(const Frame& frame, const Peak& peak, int roi_radius) {
  if (roi_radius < 1) throw std::invalid_argument("fit_gaussian: roi radius must be >= 1");
  Roi roi;
  roi.x0 = std::max(0, peak.x - roi_radius);
  roi.y0 = std::max(0, peak.y - roi_radius);
  roi.x1 = std::min(static_cast<int>(frame.width), peak.x + roi_radius + 1);
  roi.y1 = std::min(static_cast<int>(frame.height), peak.y + roi_radius + 1);
  if (roi.x1 - roi.x0 <= 0 || roi.y1 - roi.y0 <= 0 || (roi.x1 - roi.x0) * (roi.y1 - roi.y0) < 9)
    throw std::invalid_argument("fit_gaussian: fewer than 9 in-bounds ROI pixels");
  for (int r = roi.y0; r < roi.y1; ++r)
    for (int c = roi.x0; c < roi.x1; ++c)
      roi.values.push_back(frame(static_cast<std::size_t>(r), static_cast<std::size_t>(c)));

  const auto [lo_it, hi_it] = std::minmax_element(roi.values.begin(), roi.values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) throw DataError("fit_gaussian: region of interest is flat");

  // weighted centroid over pixel centres, weights above the ROI minimum
  double wsum = 0.0, cx = 0.0, cy = 0.0, m2 = 0.0;
  {
    std::size_t i = 0;
    for (int r = roi.y0; r < roi.y1; ++r)
      for (int c = roi.x0; c < roi.x1; ++c, ++i) {
        const double wgt = roi.values[i] - lo;
        wsum += wgt;
        cx += wgt * (c + 0.5);
        cy += wgt * (r + 0.5);
      }
    cx /= wsum;
    cy /= wsum;
    i = 0;
    for (int r = roi.y0; r < roi.y1; ++r)
      for (int c = roi.x0; c < roi.x1; ++c, ++i) {
        const double dx = c + 0.5 - cx, dy = r + 0.5 - cy;
        m2 += (roi.values[i] - lo) * (dx * dx + dy * dy);
      }
  }
  Localization fallback;
  fallback.frame = 0;
  fallback.x = cx;
  fallback.y = cy;
  fallback.sigma = std::max(std::sqrt(0.5 * m2 / wsum), 0.1);
  fallback.intensity = wsum;
  fallback.residual = -1.0;

  using Params = Eigen::Matrix<double, 5, 1>;
  Params p;
  p << cx, cy, std::clamp(fallback.sigma, 0.5, static_cast<double>(roi_radius)), wsum, lo;
  double cost = sum_squares(roi, p);
  double lambda = 1e-3;
  for (int iter = 0; iter < 50; ++iter) {
    Eigen::Matrix<double, 5, 5> jtj = Eigen::Matrix<double, 5, 5>::Zero();
    Params jtr = Params::Zero();
    std::size_t i = 0;
    double g[5];
    for (int r = roi.y0; r < roi.y1; ++r)
      for (int c = roi.x0; c < roi.x1; ++c, ++i) {
        const double res = IntegratedGaussian::eval(p, c, r, g) - roi.values[i];
        const Eigen::Map<const Params> gv(g);
        jtj.noalias() += gv * gv.transpose();
        jtr.noalias() += gv * res;
      }
    bool improved = false;
    while (lambda < 1e12) {
      Eigen::Matrix<double, 5, 5> damped = jtj;
      damped.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
      const Params step = damped.ldlt().solve(-jtr);
      Params trial = p + step;
      trial(2) = std::max(trial(2), 0.05);
      const double trial_cost = step.allFinite() ? sum_squares(roi, trial) : INFINITY;
      if (trial_cost < cost) {
        const double gain = cost - trial_cost;
        p = trial;
        cost = trial_cost;
        lambda = std::max(lambda / 10.0, 1e-12);
        improved = gain > 1e-12 * std::max(cost, 1e-300) && step.norm() > 1e-12;
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) break;
  }

  const bool inside = p(0) >= 0.0 && p(0) < static_cast<double>(frame.width) && p(1) >= 0.0 &&
                      p(1) < static_cast<double>(frame.height);
  const bool sane = p.allFinite() && inside && p(2) > 0.05 && p(2) < 2.0 * roi_radius + 1.0 && p(3) > 0.0 &&
                    std::abs(p(0) - cx) <= roi_radius && std::abs(p(1) - cy) <= roi_radius;
  if (!sane) return fallback;
  Localization loc;
  loc.x = p(0);
  loc.y = p(1);
  loc.sigma = p(2);
  loc.intensity = p(3);
  loc.residual = std::sqrt(cost);
  return loc;
}

LocalizationTable localize(const ImageStack& stack, const LocalizeConfig& cfg, unsigned threads) {
  std::vector<std::vector<Localization>> per_frame(stack.frames());
  parallel_for(stack.frames(), threads, [&](std::size_t f) {
    const Frame frame = stack.frame_copy(f);
    for (const Peak& peak : detect(frame, cfg.threshold, cfg.min_separation)) {
      try {
        Localization loc = fit_gaussian(frame, peak, cfg.roi_radius);
        loc.frame = f;
        per_frame[f].push_back(loc);
      } catch (const DataError&) {
        // flat ROI: nothing to localize
      } catch (const std::invalid_argument&) {
        // ROI too small at a corner
      }
    }
  });
  LocalizationTable table;
  if (stack.pixel_size_nm) table.pixel_size_nm = *stack.pixel_size_nm;
  for (auto& rows : per_frame) table.rows.insert(table.rows.end(), rows.begin(), rows.end());
  return table;
}

Frame render(const LocalizationTable& table, int magnification, std::size_t height, std::size_t width) {
  if (magnification < 1) throw std::invalid_argument("render: magnification must be >= 1");
  const std::size_t mag = static_cast<std::size_t>(magnification);
  Frame out(height * mag, width * mag);
  for (const Localization& loc : table.rows) {
    const double bx = std::floor(loc.x * magnification);
    const double by = std::floor(loc.y * magnification);
    if (!(bx >= 0.0 && by >= 0.0 && bx < static_cast<double>(out.width) && by < static_cast<double>(out.height)))
      continue;
    out(static_cast<std::size_t>(by), static_cast<std::size_t>(bx)) += 1.0f;
  }
  return out;
}

}  // namespace stormbg
