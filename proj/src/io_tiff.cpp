#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>

#include "stormbg/io.hpp"

namespace stormbg {

namespace {

enum Tag : std::uint16_t {
  kImageWidth = 256,
  kImageLength = 257,
  kBitsPerSample = 258,
  kCompression = 259,
  kPhotometric = 262,
  kStripOffsets = 273,
  kSamplesPerPixel = 277,
  kRowsPerStrip = 278,
  kStripByteCounts = 279,
  kPlanarConfig = 284,
  kColorMap = 320,
  kTileWidth = 322,
  kTileLength = 323,
  kTileOffsets = 324,
  kTileByteCounts = 325,
  kSampleFormat = 339,
};

constexpr std::size_t kMaxPixels = std::size_t{1} << 31;

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, bool little) : bytes_(bytes), little_(little) {}

  std::size_t size() const { return bytes_.size(); }

  std::uint16_t u16(std::size_t off) const {
    need(off, 2);
    const std::uint16_t a = bytes_[off], b = bytes_[off + 1];
    return little_ ? static_cast<std::uint16_t>(a | (b << 8)) : static_cast<std::uint16_t>((a << 8) | b);
  }

  std::uint32_t u32(std::size_t off) const {
    need(off, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint32_t byte = bytes_[off + static_cast<std::size_t>(i)];
      v |= little_ ? byte << (8 * i) : byte << (8 * (3 - i));
    }
    return v;
  }

  void need(std::size_t off, std::size_t len) const {
    if (off > bytes_.size() || len > bytes_.size() - off)
      throw DataError("truncated TIFF: need " + std::to_string(len) + " bytes at offset " + std::to_string(off) +
                      ", file has " + std::to_string(bytes_.size()));
  }

  const std::uint8_t* at(std::size_t off) const { return bytes_.data() + off; }
  bool little() const { return little_; }

 private:
  std::span<const std::uint8_t> bytes_;
  bool little_;
};

struct Entry {
  std::uint16_t type = 0;
  std::uint32_t count = 0;
  std::size_t value_offset = 0;  // where the value bytes start
};

std::size_t type_size(std::uint16_t type) {
  switch (type) {
    case 1: case 2: case 6: case 7: return 1;  // BYTE ASCII SBYTE UNDEFINED
    case 3: case 8: return 2;                  // SHORT SSHORT
    case 4: case 9: case 11: return 4;         // LONG SLONG FLOAT
    case 5: case 10: case 12: return 8;        // RATIONAL SRATIONAL DOUBLE
    default: return 0;
  }
}

std::vector<std::uint32_t> values(const Reader& r, const Entry& e, const char* name) {
  if (e.type != 3 && e.type != 4)
    throw DataError(std::string("malformed TIFF: tag ") + name + " has type " + std::to_string(e.type));
  const std::size_t width = e.type == 3 ? 2 : 4;
  r.need(e.value_offset, static_cast<std::size_t>(e.count) * width);
  std::vector<std::uint32_t> out(e.count);
  for (std::size_t i = 0; i < e.count; ++i)
    out[i] = e.type == 3 ? r.u16(e.value_offset + i * 2) : r.u32(e.value_offset + i * 4);
  return out;
}

std::uint32_t scalar(const Reader& r, const std::map<std::uint16_t, Entry>& tags, std::uint16_t tag, const char* name,
                     std::uint32_t fallback, bool required) {
  const auto it = tags.find(tag);
  if (it == tags.end()) {
    if (required) throw DataError(std::string("malformed TIFF: missing required tag ") + name);
    return fallback;
  }
  const auto v = values(r, it->second, name);
  if (v.empty()) throw DataError(std::string("malformed TIFF: empty tag ") + name);
  return v.front();
}

std::string compression_name(std::uint32_t c) {
  switch (c) {
    case 2: return "CCITT RLE";
    case 3: return "CCITT Group 3";
    case 4: return "CCITT Group 4";
    case 5: return "LZW";
    case 6: case 7: return "JPEG";
    case 8: case 32946: return "Deflate";
    case 32773: return "PackBits";
    default: return "compression " + std::to_string(c);
  }
}

struct Page {
  std::uint32_t width = 0, height = 0, bits = 0;
  std::vector<std::uint32_t> offsets, counts;
  std::uint32_t rows_per_strip = 0;
};

Page parse_page(const Reader& r, std::size_t ifd, std::size_t& next) {
  const std::uint16_t n = r.u16(ifd);
  r.need(ifd + 2, static_cast<std::size_t>(n) * 12 + 4);
  std::map<std::uint16_t, Entry> tags;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t base = ifd + 2 + i * 12;
    Entry e;
    const std::uint16_t tag = r.u16(base);
    e.type = r.u16(base + 2);
    e.count = r.u32(base + 4);
    const std::size_t bytes = type_size(e.type) * e.count;
    e.value_offset = bytes <= 4 ? base + 8 : r.u32(base + 8);
    tags[tag] = e;
  }
  next = r.u32(ifd + 2 + static_cast<std::size_t>(n) * 12);

  if (tags.count(kTileWidth) || tags.count(kTileLength) || tags.count(kTileOffsets) || tags.count(kTileByteCounts))
    throw UnsupportedTiffError("tiles");
  const std::uint32_t compression = scalar(r, tags, kCompression, "Compression", 1, false);
  if (compression != 1) throw UnsupportedTiffError(compression_name(compression));
  const std::uint32_t photometric = scalar(r, tags, kPhotometric, "PhotometricInterpretation", 1, false);
  if (photometric == 3 || tags.count(kColorMap)) throw UnsupportedTiffError("palette color");
  if (photometric == 0) throw UnsupportedTiffError("WhiteIsZero photometric interpretation");
  if (photometric == 2) throw UnsupportedTiffError("RGB");
  if (photometric != 1) throw UnsupportedTiffError("photometric interpretation " + std::to_string(photometric));
  const std::uint32_t spp = scalar(r, tags, kSamplesPerPixel, "SamplesPerPixel", 1, false);
  if (spp != 1) throw UnsupportedTiffError(std::to_string(spp) + " samples per pixel");
  const std::uint32_t planar = scalar(r, tags, kPlanarConfig, "PlanarConfiguration", 1, false);
  if (planar != 1) throw UnsupportedTiffError("planar configuration");
  const std::uint32_t format = scalar(r, tags, kSampleFormat, "SampleFormat", 1, false);
  if (format == 2) throw UnsupportedTiffError("signed samples");
  if (format == 3) throw UnsupportedTiffError("floating-point samples");
  if (format != 1) throw UnsupportedTiffError("sample format " + std::to_string(format));

  Page page;
  page.width = scalar(r, tags, kImageWidth, "ImageWidth", 0, true);
  page.height = scalar(r, tags, kImageLength, "ImageLength", 0, true);
  page.bits = scalar(r, tags, kBitsPerSample, "BitsPerSample", 1, false);
  if (page.bits != 8 && page.bits != 16) throw UnsupportedTiffError(std::to_string(page.bits) + "-bit samples");
  if (page.width == 0 || page.height == 0) throw DataError("malformed TIFF: zero image dimension");
  page.rows_per_strip = scalar(r, tags, kRowsPerStrip, "RowsPerStrip", page.height, false);
  if (page.rows_per_strip == 0) throw DataError("malformed TIFF: RowsPerStrip is 0");

  const auto off_it = tags.find(kStripOffsets);
  const auto cnt_it = tags.find(kStripByteCounts);
  if (off_it == tags.end()) throw DataError("malformed TIFF: missing required tag StripOffsets");
  if (cnt_it == tags.end()) throw DataError("malformed TIFF: missing required tag StripByteCounts");
  const std::size_t strips = (static_cast<std::size_t>(page.height) + page.rows_per_strip - 1) / page.rows_per_strip;
  if (off_it->second.count != strips || cnt_it->second.count != strips)
    throw DataError("malformed TIFF: expected " + std::to_string(strips) + " strips");
  page.offsets = values(r, off_it->second, "StripOffsets");
  page.counts = values(r, cnt_it->second, "StripByteCounts");
  return page;
}

}  // namespace

ImageStack decode_tiff(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw DataError("truncated TIFF: header needs 8 bytes");
  bool little;
  if (bytes[0] == 'I' && bytes[1] == 'I') little = true;
  else if (bytes[0] == 'M' && bytes[1] == 'M') little = false;
  else throw DataError("not a TIFF file: bad byte-order marker");
  const Reader r(bytes, little);
  const std::uint16_t magic = r.u16(2);
  if (magic == 43) throw UnsupportedTiffError("BigTIFF");
  if (magic != 42) throw DataError("not a TIFF file: bad magic number " + std::to_string(magic));

  std::vector<Page> pages;
  std::set<std::size_t> seen;
  std::size_t total_pixels = 0;
  for (std::size_t ifd = r.u32(4); ifd != 0;) {
    if (!seen.insert(ifd).second) throw DataError("malformed TIFF: IFD chain loops back to offset " + std::to_string(ifd));
    std::size_t next = 0;
    Page page = parse_page(r, ifd, next);
    if (!pages.empty() && (page.width != pages[0].width || page.height != pages[0].height || page.bits != pages[0].bits))
      throw DataError("inconsistent TIFF pages: page " + std::to_string(pages.size()) + " is " +
                      std::to_string(page.width) + "x" + std::to_string(page.height) + "@" + std::to_string(page.bits) +
                      " bit, page 0 is " + std::to_string(pages[0].width) + "x" + std::to_string(pages[0].height) +
                      "@" + std::to_string(pages[0].bits) + " bit");
    const std::size_t pixels = static_cast<std::size_t>(page.width) * page.height;
    if (pixels > kMaxPixels - total_pixels) throw DataError("TIFF too large");
    total_pixels += pixels;
    // strips must lie inside the file and pixel data cannot claim more bytes
    // than the file holds, which bounds the allocation below
    std::size_t row = 0;
    for (std::size_t s = 0; s < page.offsets.size(); ++s) {
      const std::size_t rows = std::min<std::size_t>(page.rows_per_strip, page.height - row);
      const std::size_t need = rows * page.width * (page.bits / 8);
      if (page.counts[s] < need)
        throw DataError("malformed TIFF: strip " + std::to_string(s) + " of page " + std::to_string(pages.size()) +
                        " holds " + std::to_string(page.counts[s]) + " bytes, need " + std::to_string(need));
      r.need(page.offsets[s], need);
      row += rows;
    }
    if (total_pixels * (page.bits / 8) > bytes.size()) throw DataError("malformed TIFF: pixel data exceeds file size");
    pages.push_back(std::move(page));
    ifd = next;
  }
  if (pages.empty()) throw DataError("malformed TIFF: no image directories");

  const std::size_t w = pages[0].width, h = pages[0].height, bps = pages[0].bits / 8;
  ImageStack stack(pages.size(), h, w);
  stack.bit_depth = static_cast<int>(pages[0].bits);
  for (std::size_t f = 0; f < pages.size(); ++f) {
    const Page& page = pages[f];
    auto out = stack.frame(f);
    std::size_t row = 0;
    for (std::size_t s = 0; s < page.offsets.size(); ++s) {
      const std::size_t rows = std::min<std::size_t>(page.rows_per_strip, h - row);
      const std::uint8_t* src = r.at(page.offsets[s]);
      float* dst = out.data() + row * w;
      if (bps == 1) {
        for (std::size_t i = 0; i < rows * w; ++i) dst[i] = src[i];
      } else {
        for (std::size_t i = 0; i < rows * w; ++i) {
          const std::uint16_t a = src[2 * i], b = src[2 * i + 1];
          dst[i] = static_cast<float>(little ? (a | (b << 8)) : ((a << 8) | b));
        }
      }
      row += rows;
    }
  }
  return stack;
}

ImageStack read_tiff(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  try {
    return decode_tiff(bytes);
  } catch (const UnsupportedTiffError&) {
    throw;
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

namespace {

void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void patch32(std::vector<std::uint8_t>& out, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out[at + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xff);
}

void entry(std::vector<std::uint8_t>& out, std::uint16_t tag, std::uint16_t type, std::uint32_t value) {
  put16(out, tag);
  put16(out, type);
  put32(out, 1);
  if (type == 3) {
    put16(out, static_cast<std::uint16_t>(value));
    put16(out, 0);
  } else {
    put32(out, value);
  }
}

}  // namespace

std::vector<std::uint8_t> encode_tiff(const ImageStack& stack, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("write_tiff: bit depth must be 8 or 16");
  if (stack.empty()) throw std::invalid_argument("write_tiff: empty stack");
  const std::size_t bps = static_cast<std::size_t>(bit_depth / 8);
  const std::size_t strip = stack.frame_size() * bps;
  const std::size_t ifd_size = 2 + 11 * 12 + 4;
  const std::size_t page_size = strip + (strip & 1) + ifd_size;
  if (stack.width() > std::numeric_limits<std::uint32_t>::max() ||
      stack.height() > std::numeric_limits<std::uint32_t>::max() ||
      8 + stack.frames() * page_size > std::numeric_limits<std::uint32_t>::max())
    throw std::invalid_argument("write_tiff: stack exceeds the 4 GiB baseline TIFF limit");
  const double top = bit_depth == 8 ? 255.0 : 65535.0;

  std::vector<std::uint8_t> out{'I', 'I', 42, 0};
  out.reserve(8 + stack.frames() * page_size);
  std::size_t link = out.size();  // where the pointer to the next IFD goes
  put32(out, 0);
  for (std::size_t f = 0; f < stack.frames(); ++f) {
    const std::uint32_t data_offset = static_cast<std::uint32_t>(out.size());
    for (float v : stack.frame(f)) {
      const double q = std::isnan(v) ? 0.0 : std::clamp(std::nearbyint(static_cast<double>(v)), 0.0, top);
      if (bps == 1) out.push_back(static_cast<std::uint8_t>(q));
      else put16(out, static_cast<std::uint16_t>(q));
    }
    if (out.size() & 1) out.push_back(0);
    patch32(out, link, static_cast<std::uint32_t>(out.size()));
    put16(out, 11);
    entry(out, kImageWidth, 4, static_cast<std::uint32_t>(stack.width()));
    entry(out, kImageLength, 4, static_cast<std::uint32_t>(stack.height()));
    entry(out, kBitsPerSample, 3, static_cast<std::uint32_t>(bit_depth));
    entry(out, kCompression, 3, 1);
    entry(out, kPhotometric, 3, 1);
    entry(out, kStripOffsets, 4, data_offset);
    entry(out, kSamplesPerPixel, 3, 1);
    entry(out, kRowsPerStrip, 4, static_cast<std::uint32_t>(stack.height()));
    entry(out, kStripByteCounts, 4, static_cast<std::uint32_t>(strip));
    entry(out, kPlanarConfig, 3, 1);
    entry(out, kSampleFormat, 3, 1);
    link = out.size();
    put32(out, 0);
  }
  return out;
}

void write_tiff(const ImageStack& stack, const std::filesystem::path& path, int bit_depth) {
  write_file_atomic(path, encode_tiff(stack, bit_depth));
}

}  // namespace stormbg
