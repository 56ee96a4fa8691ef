#include <bit>
#include <cmath>
#include <cstring>

#include <zlib.h>

#include "stormbg/io.hpp"

namespace stormbg {

// Layout (little-endian):
//   "SLNW" u32 version | u32 k, c, kernel_h, kernel_w | u64 hyperparams hash
//   u32 epochs | f64 input scale | f64 payload: w1, b1, w2, b2 | u32 CRC-32
// The checksum covers every byte between the version field and itself.

namespace {

constexpr std::size_t kHeaderBytes = 4 + 4 + 16 + 8 + 4 + 8;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get(std::span<const std::uint8_t> b, std::size_t off, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[off + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

std::uint32_t crc(std::span<const std::uint8_t> bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    c = crc32(c, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace

std::vector<std::uint8_t> encode_model(const SLNetModel& model) {
  model.validate();
  std::vector<std::uint8_t> out{'S', 'L', 'N', 'W'};
  put_u32(out, kWeightsVersion);
  put_u32(out, static_cast<std::uint32_t>(model.frames()));
  put_u32(out, static_cast<std::uint32_t>(model.hidden()));
  put_u32(out, static_cast<std::uint32_t>(model.layer1.kernel_h));
  put_u32(out, static_cast<std::uint32_t>(model.layer1.kernel_w));
  put_u64(out, model.hyperparams_hash);
  put_u32(out, model.epochs_trained);
  put_f64(out, model.input_scale);
  for (const auto* v : {&model.layer1.weights, &model.layer1.bias, &model.layer2.weights, &model.layer2.bias})
    for (double x : *v) put_f64(out, x);
  put_u32(out, crc(std::span(out).subspan(8)));
  return out;
}

SLNetModel decode_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw DataError("truncated weights file");
  if (std::memcmp(bytes.data(), "SLNW", 4) != 0) throw DataError("not a weights file: bad magic");
  const auto version = static_cast<std::uint32_t>(get(bytes, 4, 4));
  if (version != kWeightsVersion)
    throw WeightsVersionError("weights format version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kWeightsVersion) + ")");
  if (bytes.size() < kHeaderBytes + 4) throw DataError("truncated weights file");
  const std::uint64_t k = get(bytes, 8, 4), c = get(bytes, 12, 4), kh = get(bytes, 16, 4), kw = get(bytes, 20, 4);
  constexpr std::uint64_t kLimit = 1 << 16;
  if (k == 0 || c == 0 || kh == 0 || kw == 0 || k > kLimit || c > kLimit || kh > kLimit || kw > kLimit ||
      k * c * kh * kw > (std::uint64_t{1} << 32))
    throw DataError("weights file declares invalid dimensions");
  const std::uint64_t params = 2 * k * c * kh * kw + c + k;
  if (bytes.size() != kHeaderBytes + params * 8 + 4)
    throw DataError("weights file length " + std::to_string(bytes.size()) + " does not match declared dimensions " +
                    std::to_string(k) + "x" + std::to_string(c) + "x" + std::to_string(kh) + "x" +
                    std::to_string(kw));
  const std::size_t end = bytes.size() - 4;
  const auto stored = static_cast<std::uint32_t>(get(bytes, end, 4));
  if (crc(bytes.subspan(8, end - 8)) != stored) throw ChecksumError("weights file checksum mismatch");

  SLNetModel model;
  model.layer1 = ConvLayer(c, k, kh, kw);
  model.layer2 = ConvLayer(k, c, kh, kw);
  model.hyperparams_hash = get(bytes, 24, 8);
  model.epochs_trained = static_cast<std::uint32_t>(get(bytes, 32, 4));
  model.input_scale = std::bit_cast<double>(get(bytes, 36, 8));
  std::size_t off = kHeaderBytes;
  for (auto* v : {&model.layer1.weights, &model.layer1.bias, &model.layer2.weights, &model.layer2.bias})
    for (double& x : *v) {
      x = std::bit_cast<double>(get(bytes, off, 8));
      off += 8;
    }
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("weights file holds an invalid model: ") + e.what());
  } catch (const NumericalError& e) {
    throw DataError(std::string("weights file holds an invalid model: ") + e.what());
  }
  if (!(model.input_scale >= 0.0) || !std::isfinite(model.input_scale))
    throw DataError("weights file holds an invalid input scale");
  return model;
}

void save_model(const SLNetModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, encode_model(model));
}

SLNetModel load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

}  // namespace stormbg
