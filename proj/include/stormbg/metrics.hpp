#pragma once

#include <span>
#include <vector>

#include "stormbg/core.hpp"
#include "stormbg/localize.hpp"
#include "stormbg/synth.hpp"

namespace stormbg {

/// Percentage of elements with |v| <= epsilon (exact zeros by default).
double sparsity(std::span<const float> values, double epsilon = 0.0);
inline double sparsity(const ImageStack& stack, double epsilon = 0.0) { return sparsity(stack.data(), epsilon); }
inline double sparsity(const Frame& frame, double epsilon = 0.0) { return sparsity(frame.pixels, epsilon); }

struct FwhmResult {
  double fwhm = 0.0;  // in units of `spacing`
  double amplitude = 0.0;
  double center = 0.0;  // in samples
  double sigma = 0.0;   // in samples
  double offset = 0.0;
  double residual = 0.0;
};

/// FWHM factor 2 sqrt(2 ln 2).
inline constexpr double kFwhmPerSigma = 2.3548200450309493;

/// Least-squares 1D Gaussian + offset fit; fwhm = 2 sqrt(2 ln 2) sigma spacing.
FwhmResult fwhm_profile(std::span<const double> profile, double spacing);

struct SquirrelScores {
  double rsp = 0.0;
  double rse = 0.0;
  double scale = 0.0;
  double offset = 0.0;
};

/// Gaussian blur (sigma in reconstruction pixels), block-average down to the
/// widefield size, closed-form intensity scale/offset fit, then Pearson
/// correlation and RMSE against the widefield image.
SquirrelScores squirrel_scores(const Frame& reconstruction, const Frame& widefield, double blur_sigma);

/// Separable Gaussian blur with a kernel truncated at 4 sigma; borders clamp.
Frame gaussian_blur(const Frame& frame, double sigma);

/// Average of non-overlapping factor x factor blocks.
Frame block_average(const Frame& frame, std::size_t factor);

struct LocalizationError {
  double rmse = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  std::size_t matched = 0;
  std::size_t truth_count = 0;
  std::size_t detected = 0;
  bool precision_defined = true;
};

/// Per-frame greedy one-to-one matching in ascending distance order, pairs
/// further apart than match_radius are left unmatched.
LocalizationError localization_error(const LocalizationTable& table, const GroundTruth& truth, double match_radius);

/// Pairs (table row, emitter index) produced by the matching above.
struct Match {
  std::size_t row = 0;
  std::size_t emitter = 0;
  double distance = 0.0;
};
std::vector<Match> match_localizations(const LocalizationTable& table, const GroundTruth& truth, double match_radius);

/// Mean emitter profile of the rendered reconstruction: offsets of matched
/// localizations from their emitter are binned at 1/magnification pixel over
/// [-radius, radius]; the x and y marginals are fitted separately.
struct ProfileFwhm {
  double fwhm = 0.0;  // mean of x and y, pixels
  FwhmResult x;
  FwhmResult y;
  std::size_t count = 0;  // localizations inside the profile window
};
ProfileFwhm emitter_profile_fwhm(const LocalizationTable& table, const GroundTruth& truth,
                                 std::span<const Match> matches, int magnification, double radius);

}  // namespace stormbg
