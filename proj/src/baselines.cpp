#include "stormbg/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "stormbg/parallel.hpp"

namespace stormbg {

void RollingBallConfig::validate() const {
  if (radius < 1) throw std::invalid_argument("rolling ball: radius must be >= 1");
  if (smoothing) throw std::invalid_argument("rolling ball: smoothing is not supported");
}

double global_median(const ImageStack& stack) {
  if (stack.empty()) throw std::invalid_argument("median: empty stack");
  std::vector<float> values(stack.data().begin(), stack.data().end());
  const std::size_t n = values.size();
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(values.begin(), mid, values.end());
  const double upper = *mid;
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), mid);
  return 0.5 * (lower + upper);
}

ImageStack median_subtract(const ImageStack& stack) {
  const double median = global_median(stack);
  ImageStack out = stack;
  for (float& v : out.data()) v = static_cast<float>(std::max(static_cast<double>(v) - median, 0.0));
  return out;
}

BallElement make_ball(int radius) {
  if (radius < 1) throw std::invalid_argument("rolling ball: radius must be >= 1");
  BallElement ball;
  ball.radius = radius;
  const int r2 = radius * radius;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      const int d2 = dx * dx + dy * dy;
      if (d2 <= r2) ball.taps.push_back({dy, dx, std::sqrt(static_cast<double>(r2 - d2))});
    }
  return ball;
}

namespace {

// out(p) = min over taps of in(p + q) - h(q), or max of in(p - q) + h(q);
// taps that leave the frame are skipped.
template <bool Erode>
std::vector<double> morph(const std::vector<double>& in, int h, int w, const BallElement& ball) {
  std::vector<double> out(in.size(), Erode ? std::numeric_limits<double>::infinity()
                                           : -std::numeric_limits<double>::infinity());
  for (const auto& tap : ball.taps) {
    const int dy = Erode ? tap.dy : -tap.dy;
    const int dx = Erode ? tap.dx : -tap.dx;
    const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
    for (int y = y0; y < y1; ++y) {
      double* dst = out.data() + static_cast<std::ptrdiff_t>(y) * w;
      const double* src = in.data() + static_cast<std::ptrdiff_t>(y + dy) * w + dx;
      for (int x = x0; x < x1; ++x) {
        if constexpr (Erode) dst[x] = std::min(dst[x], src[x] - tap.height);
        else dst[x] = std::max(dst[x], src[x] + tap.height);
      }
    }
  }
  return out;
}

}  // namespace

Frame rolling_ball_background(const Frame& frame, const RollingBallConfig& cfg) {
  cfg.validate();
  if (static_cast<std::size_t>(cfg.radius) > frame.height && static_cast<std::size_t>(cfg.radius) > frame.width)
    throw std::invalid_argument("rolling ball: radius exceeds both frame dimensions");
  const BallElement ball = make_ball(cfg.radius);
  const int h = static_cast<int>(frame.height), w = static_cast<int>(frame.width);
  std::vector<double> values(frame.pixels.begin(), frame.pixels.end());
  const std::vector<double> opened = morph<false>(morph<true>(values, h, w, ball), h, w, ball);
  Frame out(frame.height, frame.width);
  for (std::size_t i = 0; i < out.pixels.size(); ++i)
    out.pixels[i] = static_cast<float>(std::min(opened[i], values[i]));
  return out;
}

Frame rolling_ball(const Frame& frame, const RollingBallConfig& cfg) {
  const Frame background = rolling_ball_background(frame, cfg);
  Frame out(frame.height, frame.width);
  for (std::size_t i = 0; i < out.pixels.size(); ++i)
    out.pixels[i] = std::max(frame.pixels[i] - background.pixels[i], 0.0f);
  return out;
}

ImageStack rolling_ball(const ImageStack& stack, const RollingBallConfig& cfg, unsigned threads) {
  cfg.validate();
  ImageStack out(stack.frames(), stack.height(), stack.width());
  out.pixel_size_nm = stack.pixel_size_nm;
  parallel_for(stack.frames(), threads, [&](std::size_t f) { out.set_frame(f, rolling_ball(stack.frame_copy(f), cfg)); });
  return out;
}

}  // namespace stormbg
