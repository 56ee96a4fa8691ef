#pragma once

#include <random>

#include "stormbg/core.hpp"

namespace testutil {

inline stormbg::Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  stormbg::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline stormbg::ImageStack random_stack(std::size_t f, std::size_t h, std::size_t w, std::mt19937_64& rng,
                                        int max_value = 1000) {
  std::uniform_int_distribution<int> u(0, max_value);
  stormbg::ImageStack s(f, h, w);
  for (float& v : s.data()) v = static_cast<float>(u(rng));
  return s;
}

}  // namespace testutil
