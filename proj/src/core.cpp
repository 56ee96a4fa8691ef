#include "stormbg/core.hpp"

#include <algorithm>
#include <cmath>

namespace stormbg {

ImageStack::ImageStack(std::size_t frames, std::size_t height, std::size_t width, float fill)
    : frames_(frames), height_(height), width_(width), data_(frames * height * width, fill) {}

ImageStack::ImageStack(std::size_t frames, std::size_t height, std::size_t width, std::vector<float> data)
    : frames_(frames), height_(height), width_(width), data_(std::move(data)) {
  if (data_.size() != frames * height * width)
    throw std::invalid_argument("ImageStack: data length does not match shape");
}

Frame ImageStack::frame_copy(std::size_t f) const {
  Frame out(height_, width_);
  auto src = frame(f);
  std::copy(src.begin(), src.end(), out.pixels.begin());
  return out;
}

void ImageStack::set_frame(std::size_t f, const Frame& fr) {
  if (fr.height != height_ || fr.width != width_)
    throw std::invalid_argument("ImageStack::set_frame: frame shape mismatch");
  std::copy(fr.pixels.begin(), fr.pixels.end(), frame(f).begin());
}

ImageStack ImageStack::slice(std::size_t begin, std::size_t count) const {
  if (begin + count > frames_) throw std::out_of_range("ImageStack::slice: range exceeds stack length");
  std::vector<float> sub(data_.begin() + static_cast<std::ptrdiff_t>(begin * frame_size()),
                         data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * frame_size()));
  ImageStack out(count, height_, width_, std::move(sub));
  out.bit_depth = bit_depth;
  out.pixel_size_nm = pixel_size_nm;
  return out;
}

void ImageStack::validate() const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const float v = data_[i];
    if (!std::isfinite(v)) throw DataError("image stack contains a non-finite value at element " + std::to_string(i));
    if (v < 0.0f) throw DataError("image stack contains a negative value at element " + std::to_string(i));
  }
}

FlatMatrix flatten(const ImageStack& window) {
  if (window.frames() == 0 || window.frame_size() == 0) throw std::invalid_argument("flatten: empty window");
  FlatMatrix out;
  out.height = window.height();
  out.width = window.width();
  out.data.resize(static_cast<Eigen::Index>(window.frames()), static_cast<Eigen::Index>(window.frame_size()));
  const auto src = window.data();
  double* dst = out.data.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i];
  return out;
}

FlatMatrix flatten(const ImageStack& stack, std::span<const std::size_t> frame_indices) {
  if (frame_indices.empty() || stack.frame_size() == 0) throw std::invalid_argument("flatten: empty window");
  FlatMatrix out;
  out.height = stack.height();
  out.width = stack.width();
  const auto cols = static_cast<Eigen::Index>(stack.frame_size());
  out.data.resize(static_cast<Eigen::Index>(frame_indices.size()), cols);
  for (std::size_t r = 0; r < frame_indices.size(); ++r) {
    if (frame_indices[r] >= stack.frames()) throw std::out_of_range("flatten: frame index out of range");
    const auto src = stack.frame(frame_indices[r]);
    double* row = out.data.row(static_cast<Eigen::Index>(r)).data();
    for (Eigen::Index c = 0; c < cols; ++c) row[c] = src[static_cast<std::size_t>(c)];
  }
  return out;
}

ImageStack unflatten(const FlatMatrix& flat) {
  if (static_cast<std::size_t>(flat.data.cols()) != flat.height * flat.width)
    throw std::invalid_argument("unflatten: shape record does not match matrix width");
  ImageStack out(flat.frames(), flat.height, flat.width);
  auto dst = out.data();
  const double* src = flat.data.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(src[i]);
  return out;
}

NormalizationMethod parse_normalization(const std::string& name) {
  if (name == "max-scale" || name == "max") return NormalizationMethod::MaxScale;
  if (name == "none") return NormalizationMethod::None;
  throw std::invalid_argument("unknown normalization method '" + name + "' (expected max-scale or none)");
}

std::string to_string(NormalizationMethod method) {
  return method == NormalizationMethod::MaxScale ? "max-scale" : "none";
}

NormalizationRecord normalization_for(const ImageStack& stack, NormalizationMethod method) {
  if (stack.empty()) throw std::invalid_argument("normalize: empty stack");
  NormalizationRecord rec;
  rec.method = method;
  rec.integer_valued = std::all_of(stack.data().begin(), stack.data().end(),
                                   [](float v) { return std::nearbyint(v) == v; });
  if (method == NormalizationMethod::MaxScale) {
    const float peak = *std::max_element(stack.data().begin(), stack.data().end());
    if (!(peak > 0.0f)) throw DataError("normalize: max-scale needs at least one positive value");
    rec.scale = peak;
  }
  return rec;
}

ImageStack apply_normalization(const ImageStack& stack, const NormalizationRecord& record) {
  ImageStack out = stack;
  if (record.method == NormalizationMethod::None) return out;
  for (float& v : out.data()) v = static_cast<float>((static_cast<double>(v) - record.offset) / record.scale);
  return out;
}

std::pair<ImageStack, NormalizationRecord> normalize(const ImageStack& stack, NormalizationMethod method) {
  NormalizationRecord rec = normalization_for(stack, method);
  return {apply_normalization(stack, rec), rec};
}

ImageStack denormalize(const ImageStack& stack, const NormalizationRecord& record) {
  ImageStack out = stack;
  if (record.method == NormalizationMethod::None) return out;
  for (float& v : out.data()) {
    double back = static_cast<double>(v) * record.scale + record.offset;
    if (record.integer_valued) back = std::nearbyint(back);
    v = static_cast<float>(back);
  }
  return out;
}

std::vector<WindowSlot> triplet_plan(std::size_t n, std::size_t delta) {
  if (delta == 0) throw std::invalid_argument("triplet_plan: offset must be positive");
  if (n < 2 * delta + 1)
    throw DataError("stack has " + std::to_string(n) + " frames; triplets with offset " + std::to_string(delta) +
                    " need at least " + std::to_string(2 * delta + 1));
  const std::size_t anchors = n - 2 * delta;
  std::vector<WindowSlot> plan(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t anchor = 0;
    std::size_t slot = 0;
    if (j < anchors) {
      anchor = j;
    } else if (j >= delta && j - delta < anchors) {
      anchor = j - delta;
      slot = 1;
    } else if (j >= 2 * delta && j - 2 * delta < anchors) {
      anchor = j - 2 * delta;
      slot = 2;
    } else {
      plan[j] = WindowSlot{{j, (j + delta) % n, (j + 2 * delta) % n}, 0};
      continue;
    }
    plan[j] = WindowSlot{{anchor, anchor + delta, anchor + 2 * delta}, slot};
  }
  return plan;
}

}  // namespace stormbg
