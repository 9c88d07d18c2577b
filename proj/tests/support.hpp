#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "stsmon/image.hpp"

namespace testing {

inline stsmon::GreyImage random_image(std::size_t rows, std::size_t cols, std::uint64_t seed,
                                      double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  stsmon::GreyImage img(rows, cols);
  for (double& v : img.pixels()) v = n(rng);
  return img;
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double lag_correlation(const stsmon::GreyImage& img, int dr, int dc) {
  double m = 0.0;
  for (double v : img.pixels()) m += v;
  m /= static_cast<double>(img.size());
  double num = 0.0, den = 0.0;
  for (std::size_t r = 0; r < img.rows(); ++r) {
    for (std::size_t c = 0; c < img.cols(); ++c) {
      const double a = img(r, c) - m;
      den += a * a;
      const auto r2 = static_cast<std::ptrdiff_t>(r) + dr, c2 = static_cast<std::ptrdiff_t>(c) + dc;
      if (r2 < 0 || c2 < 0 || r2 >= static_cast<std::ptrdiff_t>(img.rows()) ||
          c2 >= static_cast<std::ptrdiff_t>(img.cols())) {
        continue;
      }
      num += a * (img(static_cast<std::size_t>(r2), static_cast<std::size_t>(c2)) - m);
    }
  }
  return num / den;
}

}  // namespace testing
