#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace stormbg {

/// Input data that cannot be processed (bad file, inconsistent shapes, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure diverged or produced non-finite values.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major double matrix, the working type for all linear algebra.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// A single 2D frame stored row-major as floats.
struct Frame {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Frame() = default;
  Frame(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}

  float& operator()(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  float operator()(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  std::size_t size() const { return pixels.size(); }
};

/// Ordered sequence of equally sized, non-negative intensity frames.
///
/// Frames are stored contiguously (frame-major, then row-major) in single
/// precision. Metadata records the bit depth of the source file (0 when the
/// stack was produced in memory) and an optional pixel size.
class ImageStack {
 public:
  ImageStack() = default;
  ImageStack(std::size_t frames, std::size_t height, std::size_t width, float fill = 0.0f);
  ImageStack(std::size_t frames, std::size_t height, std::size_t width, std::vector<float> data);

  std::size_t frames() const { return frames_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t frame_size() const { return height_ * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(std::size_t f, std::size_t y, std::size_t x) { return data_[(f * height_ + y) * width_ + x]; }
  float at(std::size_t f, std::size_t y, std::size_t x) const { return data_[(f * height_ + y) * width_ + x]; }

  std::span<float> frame(std::size_t f) { return {data_.data() + f * frame_size(), frame_size()}; }
  std::span<const float> frame(std::size_t f) const { return {data_.data() + f * frame_size(), frame_size()}; }
  Frame frame_copy(std::size_t f) const;
  void set_frame(std::size_t f, const Frame& frame);

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  /// Frames [begin, begin + count).
  ImageStack slice(std::size_t begin, std::size_t count) const;

  /// Throws DataError unless every value is finite and non-negative.
  void validate() const;

  int bit_depth = 0;
  std::optional<double> pixel_size_nm;

 private:
  std::size_t frames_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> data_;
};

/// k x (m*n) matrix view of a window of k frames, plus the spatial shape.
struct FlatMatrix {
  Matrix data;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t frames() const { return static_cast<std::size_t>(data.rows()); }
};

/// Row i of the result is frame i of the window, read in row-major order.
FlatMatrix flatten(const ImageStack& window);

/// Flatten an arbitrary selection of frames (e.g. a triplet t, t+d, t+2d).
FlatMatrix flatten(const ImageStack& stack, std::span<const std::size_t> frame_indices);

ImageStack unflatten(const FlatMatrix& flat);

enum class NormalizationMethod { MaxScale, None };

NormalizationMethod parse_normalization(const std::string& name);
std::string to_string(NormalizationMethod method);

struct NormalizationRecord {
  NormalizationMethod method = NormalizationMethod::None;
  double scale = 1.0;
  double offset = 0.0;
  // every source value was an integer; denormalize rounds back exactly
  bool integer_valued = false;
};

std::pair<ImageStack, NormalizationRecord> normalize(const ImageStack& stack, NormalizationMethod method);

/// Scale of a max-scale normalization without materializing the result.
NormalizationRecord normalization_for(const ImageStack& stack, NormalizationMethod method);

ImageStack apply_normalization(const ImageStack& stack, const NormalizationRecord& record);
ImageStack denormalize(const ImageStack& stack, const NormalizationRecord& record);

/// Paired low-rank and sparse stacks, S = (M - L) clamped at zero.
struct DecompositionResult {
  ImageStack low_rank;
  ImageStack sparse;
};

/// Which triplet window supplies the decomposition of one frame.
struct WindowSlot {
  std::array<std::size_t, 3> frames;  // stack indices forming the window, in slot order
  std::size_t slot;       // position of the target frame inside the window
};

/// One (window, slot) per frame of an n-frame stack for triplets
/// (t, t + delta, t + 2 delta). Frame t uses slot 0 of window t while
/// t + 2 delta < n; the trailing frames fall back to slot 1 of window
/// t - delta, then slot 2 of window t - 2 delta. Frames covered by no valid
/// triplet (only possible when n < 3 delta) use a cyclically wrapped window.
/// Requires n >= 2 delta + 1.
std::vector<WindowSlot> triplet_plan(std::size_t n, std::size_t delta);

}  // namespace stormbg
