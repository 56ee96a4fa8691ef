#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "helpers.hpp"
#include "stormbg/core.hpp"

using namespace stormbg;

TEST_SUITE("core") {

TEST_CASE("flatten 2x2 frame is its row-major row") {
  ImageStack s(1, 2, 2, std::vector<float>{1, 2, 3, 4});
  const FlatMatrix m = flatten(s);
  REQUIRE(m.data.rows() == 1);
  REQUIRE(m.data.cols() == 4);
  CHECK(m.data(0, 0) == 1);
  CHECK(m.data(0, 1) == 2);
  CHECK(m.data(0, 2) == 3);
  CHECK(m.data(0, 3) == 4);
  CHECK(m.height == 2);
  CHECK(m.width == 2);
}

TEST_CASE("flatten / unflatten round trip over small shapes") {
  std::mt19937_64 rng(1);
  for (std::size_t k = 1; k <= 4; ++k)
    for (std::size_t h = 1; h <= 5; ++h)
      for (std::size_t w = 1; w <= 5; ++w) {
        const ImageStack s = testutil::random_stack(k, h, w, rng);
        const ImageStack back = unflatten(flatten(s));
        REQUIRE(back.frames() == k);
        REQUIRE(back.height() == h);
        REQUIRE(back.width() == w);
        CHECK(std::equal(s.data().begin(), s.data().end(), back.data().begin()));
      }
}

TEST_CASE("flatten rows sum to frame intensities") {
  std::mt19937_64 rng(2);
  const ImageStack s = testutil::random_stack(3, 64, 64, rng);
  const FlatMatrix m = flatten(s);
  for (std::size_t f = 0; f < 3; ++f) {
    double sum = 0.0;
    for (float v : s.frame(f)) sum += v;
    CHECK(m.data.row(static_cast<Eigen::Index>(f)).sum() == doctest::Approx(sum).epsilon(1e-12));
  }
}

TEST_CASE("flatten selects frames by index") {
  std::mt19937_64 rng(3);
  const ImageStack s = testutil::random_stack(10, 3, 4, rng);
  const std::size_t idx[3] = {7, 2, 9};
  const FlatMatrix m = flatten(s, idx);
  for (int r = 0; r < 3; ++r)
    for (int p = 0; p < 12; ++p) CHECK(m.data(r, p) == s.frame(idx[r])[static_cast<std::size_t>(p)]);
}

TEST_CASE("flatten rejects empty windows") {
  CHECK_THROWS_AS(flatten(ImageStack()), std::invalid_argument);
}

TEST_CASE("max-scale of a constant stack") {
  ImageStack s(2, 3, 3, 10.0f);
  auto [n, rec] = normalize(s, NormalizationMethod::MaxScale);
  CHECK(rec.scale == 10.0);
  for (float v : n.data()) CHECK(v == 1.0f);
}

TEST_CASE("none normalization is the identity") {
  std::mt19937_64 rng(4);
  const ImageStack s = testutil::random_stack(2, 5, 5, rng);
  auto [n, rec] = normalize(s, NormalizationMethod::None);
  CHECK(rec.scale == 1.0);
  CHECK(std::equal(s.data().begin(), s.data().end(), n.data().begin()));
}

TEST_CASE("max-scale round trip restores integer data exactly") {
  std::mt19937_64 rng(5);
  ImageStack s = testutil::random_stack(4, 8, 8, rng, 311);
  s.at(0, 0, 0) = 312.0f;
  auto [n, rec] = normalize(s, NormalizationMethod::MaxScale);
  CHECK(rec.scale == 312.0);
  for (float v : n.data()) CHECK(v <= 1.0f);
  const ImageStack back = denormalize(n, rec);
  CHECK(std::equal(s.data().begin(), s.data().end(), back.data().begin()));
}

TEST_CASE("max-scale round trip within 1 ulp for real-valued data") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<float> u(0.0f, 500.0f);
  ImageStack s(3, 7, 7);
  for (float& v : s.data()) v = u(rng);
  auto [n, rec] = normalize(s, NormalizationMethod::MaxScale);
  const ImageStack back = denormalize(n, rec);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const float a = s.data()[i], b = back.data()[i];
    CHECK(std::abs(a - b) <= std::nextafter(a, 1e9f) - a);
  }
}

TEST_CASE("max-scale of an all-zero stack is an error") {
  CHECK_THROWS_AS(normalize(ImageStack(1, 2, 2), NormalizationMethod::MaxScale), DataError);
}

TEST_CASE("normalization names") {
  CHECK(parse_normalization("max-scale") == NormalizationMethod::MaxScale);
  CHECK(parse_normalization("none") == NormalizationMethod::None);
  CHECK(to_string(NormalizationMethod::MaxScale) == "max-scale");
  CHECK_THROWS_AS(parse_normalization("zscore"), std::invalid_argument);
}

TEST_CASE("triplet plan gives each frame one slot of a window containing it") {
  for (std::size_t n : {7u, 10u, 101u, 150u, 300u}) {
    const std::size_t delta = n >= 150 ? 50 : 3;
    const auto plan = triplet_plan(n, delta);
    REQUIRE(plan.size() == n);
    for (std::size_t j = 0; j < n; ++j) {
      CHECK(plan[j].frames[plan[j].slot] == j);
      for (std::size_t f : plan[j].frames) CHECK(f < n);
    }
    // leading frames use slot 0 of their own window
    for (std::size_t t = 0; t + 2 * delta < n; ++t) {
      CHECK(plan[t].slot == 0);
      CHECK(plan[t].frames[1] == t + delta);
      CHECK(plan[t].frames[2] == t + 2 * delta);
    }
  }
}

TEST_CASE("triplet plan needs 2 delta + 1 frames") {
  CHECK_THROWS_AS(triplet_plan(100, 50), DataError);
  CHECK_NOTHROW(triplet_plan(101, 50));
  CHECK_THROWS_AS(triplet_plan(10, 0), std::invalid_argument);
}

TEST_CASE("stack validation") {
  ImageStack s(1, 2, 2);
  CHECK_NOTHROW(s.validate());
  s.at(0, 1, 1) = -1.0f;
  CHECK_THROWS_AS(s.validate(), DataError);
  s.at(0, 1, 1) = std::nanf("");
  CHECK_THROWS_AS(s.validate(), DataError);
}

TEST_CASE("slice and frame copies") {
  std::mt19937_64 rng(7);
  const ImageStack s = testutil::random_stack(5, 3, 2, rng);
  const ImageStack sub = s.slice(1, 3);
  CHECK(sub.frames() == 3);
  CHECK(sub.at(0, 2, 1) == s.at(1, 2, 1));
  const Frame f = s.frame_copy(4);
  CHECK(f(1, 0) == s.at(4, 1, 0));
  CHECK_THROWS_AS(s.slice(4, 2), std::out_of_range);
}

}
