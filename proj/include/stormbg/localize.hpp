#pragma once

#include <string>
#include <vector>

#include "stormbg/core.hpp"

namespace stormbg {

/// Integer pixel position (column x, row y).
struct Peak {
  int x = 0;
  int y = 0;
  float value = 0.0f;
};

/// Sub-pixel emitter estimate. Positions are in pixels with pixel (c, r)
/// covering [c, c+1) x [r, r+1).
struct Localization {
  std::size_t frame = 0;
  double x = 0.0;
  double y = 0.0;
  double sigma = 0.0;
  double intensity = 0.0;
  // least-squares residual norm; negative when the fit fell back to the centroid
  double residual = 0.0;
};

struct LocalizationTable {
  std::vector<Localization> rows;  // sorted by frame, then detection order
  std::string stack_id;
  double pixel_size_nm = 100.0;
};

/// Local maxima (8-neighbourhood, ties resolved toward the first pixel in
/// scan order) strictly above `threshold`, then greedy non-maximum
/// suppression: brighter peaks suppress any peak within `min_separation`.
std::vector<Peak> detect(const Frame& frame, double threshold, double min_separation);

/// Symmetric 2D Gaussian plus constant offset fitted over the square ROI
/// around a peak by damped Gauss-Newton.
Localization fit_gaussian(const Frame& frame, const Peak& peak, int roi_radius);

struct LocalizeConfig {
  double threshold = 50.0;
  double min_separation = 3.0;
  int roi_radius = 3;
};

/// detect + fit_gaussian over every frame; table ordered by frame.
LocalizationTable localize(const ImageStack& stack, const LocalizeConfig& cfg, unsigned threads = 1);

/// Nearest-bin 2D histogram of localization positions at `magnification`
/// times the source resolution. Out-of-bounds localizations are dropped.
Frame render(const LocalizationTable& table, int magnification, std::size_t height, std::size_t width);

}  // namespace stormbg
