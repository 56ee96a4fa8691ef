#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "stormbg/io.hpp"

using namespace stormbg;
namespace fs = std::filesystem;

namespace {

// Minimal TIFF assembled by hand: header, one IFD, pixel strip.
struct TiffBuilder {
  bool big_endian = false;
  std::vector<std::uint8_t> bytes;
  std::vector<std::array<std::uint32_t, 4>> entries;  // tag, type, count, value

  void u16(std::uint16_t v) {
    if (big_endian) bytes.insert(bytes.end(), {std::uint8_t(v >> 8), std::uint8_t(v)});
    else bytes.insert(bytes.end(), {std::uint8_t(v), std::uint8_t(v >> 8)});
  }
  void u32(std::uint32_t v) {
    if (big_endian) {
      u16(std::uint16_t(v >> 16));
      u16(std::uint16_t(v));
    } else {
      u16(std::uint16_t(v));
      u16(std::uint16_t(v >> 16));
    }
  }
  void tag(std::uint16_t t, std::uint16_t type, std::uint32_t value) { entries.push_back({t, type, 1, value}); }

  // pixels: 16-bit values of a 2x2 image
  std::vector<std::uint8_t> build(const std::vector<std::uint16_t>& pixels, std::uint16_t width, std::uint16_t height) {
    bytes.clear();
    bytes.push_back(big_endian ? 'M' : 'I');
    bytes.push_back(big_endian ? 'M' : 'I');
    u16(42);
    u32(8);  // first IFD right after the header
    const std::uint32_t strip_offset = 8 + 2 + static_cast<std::uint32_t>(entries.size()) * 12 + 4;
    u16(static_cast<std::uint16_t>(entries.size()));
    for (auto e : entries) {
      if (e[0] == 273) e[3] = strip_offset;
      u16(static_cast<std::uint16_t>(e[0]));
      u16(static_cast<std::uint16_t>(e[1]));
      u32(e[2]);
      if (e[1] == 3) {  // SHORT values are left-justified in the 4-byte field
        u16(static_cast<std::uint16_t>(e[3]));
        u16(0);
      } else {
        u32(e[3]);
      }
    }
    u32(0);
    for (auto p : pixels) u16(p);
    (void)width;
    (void)height;
    return bytes;
  }

  static TiffBuilder baseline(std::uint16_t w, std::uint16_t h) {
    TiffBuilder b;
    b.tag(256, 3, w);
    b.tag(257, 3, h);
    b.tag(258, 3, 16);
    b.tag(259, 3, 1);
    b.tag(262, 3, 1);
    b.tag(273, 4, 0);
    b.tag(277, 3, 1);
    b.tag(278, 3, h);
    b.tag(279, 4, static_cast<std::uint32_t>(w) * h * 2);
    return b;
  }

  void set(std::uint16_t t, std::uint32_t value) {
    for (auto& e : entries)
      if (e[0] == t) {
        e[3] = value;
        return;
      }
    tag(t, 3, value);
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a[0] < b[0]; });
  }
};

std::string unsupported_feature(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_tiff(bytes);
  } catch (const UnsupportedTiffError& e) {
    return e.feature();
  }
  return "";
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("stormbg_test_" + name); }

}  // namespace

TEST_SUITE("io") {

TEST_CASE("hand-assembled 2x2 16-bit TIFF in both byte orders") {
  for (bool be : {false, true}) {
    TiffBuilder b = TiffBuilder::baseline(2, 2);
    b.big_endian = be;
    const ImageStack s = decode_tiff(b.build({0, 1, 2, 65535}, 2, 2));
    REQUIRE(s.frames() == 1);
    REQUIRE(s.height() == 2);
    REQUIRE(s.width() == 2);
    CHECK(s.at(0, 0, 0) == 0.0f);
    CHECK(s.at(0, 0, 1) == 1.0f);
    CHECK(s.at(0, 1, 0) == 2.0f);
    CHECK(s.at(0, 1, 1) == 65535.0f);
    CHECK(s.bit_depth == 16);
  }
}

TEST_CASE("unsupported features are named") {
  TiffBuilder lzw = TiffBuilder::baseline(2, 2);
  lzw.set(259, 5);
  CHECK(unsupported_feature(lzw.build({0, 1, 2, 3}, 2, 2)) == "LZW");
  TiffBuilder pal = TiffBuilder::baseline(2, 2);
  pal.set(262, 3);
  CHECK(unsupported_feature(pal.build({0, 1, 2, 3}, 2, 2)) == "palette color");
  TiffBuilder planar = TiffBuilder::baseline(2, 2);
  planar.set(284, 2);
  CHECK(unsupported_feature(planar.build({0, 1, 2, 3}, 2, 2)) == "planar configuration");
  TiffBuilder tiled = TiffBuilder::baseline(2, 2);
  tiled.set(322, 16);
  CHECK(unsupported_feature(tiled.build({0, 1, 2, 3}, 2, 2)) == "tiles");
  TiffBuilder deflate = TiffBuilder::baseline(2, 2);
  deflate.set(259, 8);
  CHECK(unsupported_feature(deflate.build({0, 1, 2, 3}, 2, 2)) == "Deflate");
  try {
    decode_tiff(lzw.build({0, 1, 2, 3}, 2, 2));
  } catch (const DataError& e) {
    CHECK(std::string(e.what()) == "unsupported TIFF feature: LZW");
  }
}

TEST_CASE("truncated and malformed files") {
  TiffBuilder b = TiffBuilder::baseline(2, 2);
  auto bytes = b.build({0, 1, 2, 3}, 2, 2);
  bytes.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_tiff(bytes), DataError);
  CHECK_THROWS_AS(decode_tiff(std::vector<std::uint8_t>{'I', 'I', 43, 0, 8, 0, 0, 0}), UnsupportedTiffError);
  CHECK_THROWS_AS(decode_tiff(std::vector<std::uint8_t>{'X', 'X', 42, 0, 8, 0, 0, 0}), DataError);
}

TEST_CASE("write/read round trip for 8 and 16 bit multi-page stacks") {
  std::mt19937_64 rng(51);
  for (int depth : {8, 16}) {
    const ImageStack s = testutil::random_stack(5, 13, 7, rng, depth == 8 ? 255 : 65535);
    const fs::path p = temp_path("rt" + std::to_string(depth) + ".tif");
    write_tiff(s, p, depth);
    const ImageStack back = read_tiff(p);
    CHECK(back.bit_depth == depth);
    REQUIRE(back.frames() == 5);
    CHECK(std::equal(s.data().begin(), s.data().end(), back.data().begin()));
    // and bit-identical bytes when written again
    CHECK(encode_tiff(back, depth) == read_file(p));
    fs::remove(p);
  }
}

TEST_CASE("all-zero page has zero strip bytes") {
  const auto bytes = encode_tiff(ImageStack(1, 3, 5), 16);
  // strip data follows the 8-byte header
  for (std::size_t i = 8; i < 8 + 30; ++i) CHECK(bytes[i] == 0);
  CHECK(decode_tiff(bytes).frames() == 1);
}

TEST_CASE("300 pages are chained in order") {
  ImageStack s(300, 2, 3);
  for (std::size_t f = 0; f < 300; ++f) s.at(f, 0, 0) = static_cast<float>(f);
  const auto bytes = encode_tiff(s, 16);
  // walk the IFD chain by hand
  auto u16 = [&](std::size_t o) { return std::uint32_t(bytes[o]) | std::uint32_t(bytes[o + 1]) << 8; };
  auto u32 = [&](std::size_t o) { return u16(o) | u16(o + 2) << 16; };
  std::size_t ifd = u32(4), pages = 0;
  while (ifd != 0) {
    const std::size_t n = u16(ifd);
    std::uint32_t strip = 0;
    for (std::size_t e = 0; e < n; ++e)
      if (u16(ifd + 2 + 12 * e) == 273) strip = u32(ifd + 2 + 12 * e + 8);
    CHECK(u16(strip) == pages);
    ++pages;
    ifd = u32(ifd + 2 + 12 * n);
  }
  CHECK(pages == 300);
  const ImageStack back = decode_tiff(bytes);
  for (std::size_t f = 0; f < 300; ++f) CHECK(back.at(f, 0, 0) == static_cast<float>(f));
}

TEST_CASE("writes saturate and round") {
  ImageStack s(1, 1, 4, std::vector<float>{70000.0f, -3.0f, 2.5f, std::nanf("")});
  const ImageStack back = decode_tiff(encode_tiff(s, 16));
  CHECK(back.at(0, 0, 0) == 65535.0f);
  CHECK(back.at(0, 0, 1) == 0.0f);
  CHECK(back.at(0, 0, 2) == 2.0f);
  CHECK(back.at(0, 0, 3) == 0.0f);
  CHECK(decode_tiff(encode_tiff(s, 8)).at(0, 0, 0) == 255.0f);
  CHECK_THROWS_AS(encode_tiff(s, 12), std::invalid_argument);
  CHECK_THROWS_AS(encode_tiff(ImageStack(), 16), std::invalid_argument);
}

TEST_CASE("fuzzed TIFF inputs only raise structured errors") {
  std::mt19937_64 rng(52);
  const auto valid = encode_tiff(testutil::random_stack(3, 6, 5, rng), 16);
  std::uniform_int_distribution<int> byte(0, 255);
  int rejected = 0;
  for (int trial = 0; trial < 3000; ++trial) {
    std::vector<std::uint8_t> b;
    if (trial % 3 == 0) {
      b.resize(std::uniform_int_distribution<std::size_t>(0, 200)(rng));
      for (auto& v : b) v = static_cast<std::uint8_t>(byte(rng));
      if (b.size() >= 4 && trial % 2) {
        b[0] = b[1] = 'I';
        b[2] = 42;
        b[3] = 0;
      }
    } else {
      b = valid;
      const int flips = 1 + trial % 8;
      for (int i = 0; i < flips; ++i)
        b[std::uniform_int_distribution<std::size_t>(0, b.size() - 1)(rng)] = static_cast<std::uint8_t>(byte(rng));
      if (trial % 5 == 0) b.resize(std::uniform_int_distribution<std::size_t>(0, b.size())(rng));
    }
    try {
      const ImageStack s = decode_tiff(b);
      CHECK(s.size() == s.frames() * s.height() * s.width());
    } catch (const DataError&) {
      ++rejected;
    }
  }
  CHECK(rejected > 0);
}

TEST_CASE("localization CSV") {
  LocalizationTable empty;
  CHECK(format_locs_csv(empty) == std::string(kLocsHeader) + "\n");

  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> u(0.0, 64.0);
  LocalizationTable t;
  t.pixel_size_nm = 100;
  for (std::size_t i = 0; i < 1000; ++i) t.rows.push_back({i / 10, u(rng), u(rng), 1.0 + u(rng) / 64, 100 * u(rng), 0.0});
  std::istringstream in(format_locs_csv(t));
  const LocalizationTable back = parse_locs_csv(in, 100);
  REQUIRE(back.rows.size() == 1000);
  auto close6 = [](double a, double b) { return std::abs(a - b) <= 5e-6 * std::max(std::abs(a), std::abs(b)); };
  for (std::size_t i = 0; i < 1000; ++i) {
    CHECK(back.rows[i].frame == t.rows[i].frame);
    CHECK(close6(back.rows[i].x, t.rows[i].x));
    CHECK(close6(back.rows[i].y, t.rows[i].y));
    CHECK(close6(back.rows[i].sigma, t.rows[i].sigma));
    CHECK(close6(back.rows[i].intensity, t.rows[i].intensity));
  }

  std::istringstream bad(std::string(kLocsHeader) + "\n1,1,10,20,130,500\n2,1,abc,20,130,500\n");
  try {
    parse_locs_csv(bad);
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  std::istringstream header("\"a\",\"b\"\n");
  CHECK_THROWS_AS(parse_locs_csv(header), DataError);
}

TEST_CASE("ground-truth CSV round trip") {
  GroundTruth t;
  t.emitters = {{1.25, 2.5}, {10.125, 3.0}, {7.0, 7.75}};
  t.on = {1, 0, 1, 0, 0, 0, 0, 1, 1};
  std::istringstream in(format_ground_truth_csv(t));
  const GroundTruth back = parse_ground_truth_csv(in);
  CHECK(back.on == t.on);
  REQUIRE(back.emitters.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(back.emitters[e].x == t.emitters[e].x);
    CHECK(back.emitters[e].y == t.emitters[e].y);
  }
}

TEST_CASE("weights round trip and error kinds") {
  SLNetModel m = init_model(3, 2, 3, 54);
  m.layer1.bias = {0.25, -0.5};
  m.hyperparams_hash = 0x1234567890abcdefULL;
  m.epochs_trained = 100;
  m.input_scale = 312.0;
  const fs::path p = temp_path("model.slnw");
  save_model(m, p);
  const SLNetModel back = load_model(p);
  CHECK(back == m);
  std::mt19937_64 rng(55);
  FlatMatrix probe{testutil::random_matrix(3, 36, rng), 6, 6};
  CHECK(forward(back, probe).data == forward(m, probe).data);

  auto bytes = read_file(p);
  auto corrupt = bytes;
  corrupt[60] ^= 0x10;
  CHECK_THROWS_AS(decode_model(corrupt), ChecksumError);
  auto old = bytes;
  old[4] = 0;
  CHECK_THROWS_AS(decode_model(old), WeightsVersionError);
  auto shorter = bytes;
  shorter.pop_back();
  CHECK_THROWS_AS(decode_model(shorter), DataError);
  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_model(magic), DataError);
  fs::remove(p);
}

TEST_CASE("fuzzed weights only raise structured errors") {
  const auto valid = encode_model(init_model(3, 2, 3, 56));
  std::mt19937_64 rng(57);
  for (int trial = 0; trial < 2000; ++trial) {
    auto b = valid;
    b[std::uniform_int_distribution<std::size_t>(0, b.size() - 1)(rng)] ^=
        static_cast<std::uint8_t>(1 + rng() % 255);
    if (trial % 4 == 0) b.resize(rng() % b.size());
    CHECK_THROWS_AS(decode_model(b), DataError);
  }
}

TEST_CASE("config parsing") {
  std::istringstream in("# run\nalpha = 3\n--mu=0.5  # trailing\n\nalpha = 12\nout-model = a b.slnw\n");
  const auto c = parse_config(in);
  CHECK(c.at("alpha") == "12");
  CHECK(c.at("mu") == "0.5");
  CHECK(c.at("out-model") == "a b.slnw");
  std::istringstream back(format_config(c));
  CHECK(parse_config(back) == c);
  std::istringstream bad("alpha 3\n");
  CHECK_THROWS_AS(parse_config(bad), DataError);
  std::istringstream badkey("a$b = 1\n");
  CHECK_THROWS_AS(parse_config(badkey), DataError);
}

TEST_CASE("atomic writes replace files and leave no temporaries") {
  const fs::path dir = temp_path("atomic");
  fs::create_directories(dir);
  write_file_atomic(dir / "x.txt", std::string_view("first"));
  write_file_atomic(dir / "x.txt", std::string_view("second"));
  const auto bytes = read_file(dir / "x.txt");
  CHECK(std::string(bytes.begin(), bytes.end()) == "second");
  CHECK(std::distance(fs::directory_iterator(dir), fs::directory_iterator()) == 1);
  CHECK_THROWS_AS(write_file_atomic(dir / "missing" / "x.txt", std::string_view("x")), IoError);
  CHECK_THROWS_AS(read_file(dir / "nope"), IoError);
  fs::remove_all(dir);
}

}
