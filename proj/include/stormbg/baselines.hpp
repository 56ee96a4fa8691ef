#pragma once

#include <vector>

#include "stormbg/core.hpp"

namespace stormbg {

struct RollingBallConfig {
  int radius = 3;
  bool smoothing = false;

  void validate() const;
};

/// Median over every pixel of every frame; mean of the central pair for an
/// even count.
double global_median(const ImageStack& stack);

/// max(x - global median, 0) elementwise.
ImageStack median_subtract(const ImageStack& stack);

/// Ball height profile sqrt(r^2 - dx^2 - dy^2) over the disk dx^2 + dy^2 <= r^2.
struct BallElement {
  struct Tap {
    int dy;
    int dx;
    double height;
  };
  int radius = 0;
  std::vector<Tap> taps;
};
BallElement make_ball(int radius);

/// Grayscale opening of a frame with the ball element (erosion, then
/// dilation; windows cropped at the frame border).
Frame rolling_ball_background(const Frame& frame, const RollingBallConfig& cfg);

/// max(frame - rolling_ball_background(frame), 0).
Frame rolling_ball(const Frame& frame, const RollingBallConfig& cfg);

/// rolling_ball() applied to every frame on up to `threads` workers.
ImageStack rolling_ball(const ImageStack& stack, const RollingBallConfig& cfg, unsigned threads = 1);

}  // namespace stormbg
