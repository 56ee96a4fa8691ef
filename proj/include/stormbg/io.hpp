#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stormbg/core.hpp"
#include "stormbg/localize.hpp"
#include "stormbg/slnet.hpp"
#include "stormbg/synth.hpp"

namespace stormbg {

/// File could not be read or written.
class IoError : public DataError {
 public:
  using DataError::DataError;
};

/// A valid TIFF that uses something outside the baseline grayscale subset.
class UnsupportedTiffError : public DataError {
 public:
  explicit UnsupportedTiffError(const std::string& feature)
      : DataError("unsupported TIFF feature: " + feature), feature_(feature) {}
  const std::string& feature() const { return feature_; }

 private:
  std::string feature_;
};

class WeightsVersionError : public DataError {
 public:
  using DataError::DataError;
};

class ChecksumError : public DataError {
 public:
  using DataError::DataError;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Writes to a temporary sibling file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// ---- TIFF ----------------------------------------------------------------

/// Decode a baseline grayscale TIFF (either byte order, 8 or 16 bit unsigned,
/// uncompressed, chunky, stripped). Every page becomes one frame.
ImageStack decode_tiff(std::span<const std::uint8_t> bytes);
ImageStack read_tiff(const std::filesystem::path& path);

/// Little-endian, one strip per page. Values are rounded to the nearest
/// integer and saturated to [0, 2^bit_depth - 1]; NaN is written as 0.
std::vector<std::uint8_t> encode_tiff(const ImageStack& stack, int bit_depth);
void write_tiff(const ImageStack& stack, const std::filesystem::path& path, int bit_depth);

// ---- CSV -----------------------------------------------------------------

inline constexpr std::string_view kLocsHeader =
    R"("id","frame","x [nm]","y [nm]","sigma [nm]","intensity [photon]")";

/// Rows carry 1-based ids and frame numbers; positions are converted from
/// pixels with the table's pixel size. Numbers use 6 significant digits.
std::string format_locs_csv(const LocalizationTable& table);
LocalizationTable parse_locs_csv(std::istream& in, double pixel_size_nm = 100.0);
void write_locs_csv(const LocalizationTable& table, const std::filesystem::path& path);
LocalizationTable read_locs_csv(const std::filesystem::path& path, double pixel_size_nm = 100.0);

/// Ground truth as one row per active emitter-frame:
/// "frame","emitter","x [px]","y [px]" with 1-based frame and emitter numbers.
std::string format_ground_truth_csv(const GroundTruth& truth);
/// Positions and on-states only; background and signal stacks stay empty.
/// The frame count is the largest frame number present.
GroundTruth parse_ground_truth_csv(std::istream& in);
void write_ground_truth_csv(const GroundTruth& truth, const std::filesystem::path& path);
GroundTruth read_ground_truth_csv(const std::filesystem::path& path);

/// Generic tidy table with quoted header names.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
  std::string str() const;
};
void write_csv(const CsvTable& table, const std::filesystem::path& path);

/// Shortest round-trippable decimal for doubles written to metric tables.
std::string format_number(double value);

// ---- model weights -------------------------------------------------------

inline constexpr std::uint32_t kWeightsVersion = 1;

std::vector<std::uint8_t> encode_model(const SLNetModel& model);
SLNetModel decode_model(std::span<const std::uint8_t> bytes);
void save_model(const SLNetModel& model, const std::filesystem::path& path);
SLNetModel load_model(const std::filesystem::path& path);

// ---- run configuration ---------------------------------------------------

/// Flat `key = value` lines; '#' starts a comment; blank lines ignored.
/// Later duplicates override earlier ones.
std::map<std::string, std::string> parse_config(std::istream& in);
std::map<std::string, std::string> read_config(const std::filesystem::path& path);
std::string format_config(const std::map<std::string, std::string>& values);

}  // namespace stormbg
