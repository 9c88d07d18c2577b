#include <doctest.h>

#include <cmath>

#include "stsmon/error.hpp"
#include "stsmon/image.hpp"
#include "stsmon/quantile.hpp"
#include "support.hpp"

using namespace stsmon;

TEST_CASE("standardize gives mean 0 and population sd 1") {
  GreyImage img(3, 4);
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels()[i] = static_cast<double>(i * i);
  const GreyImage z = standardize(img);
  double m = 0.0, v = 0.0;
  for (double x : z.pixels()) m += x;
  m /= z.size();
  for (double x : z.pixels()) v += (x - m) * (x - m);
  CHECK(m == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(v / z.size() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("standardize rejects constant images") {
  try {
    standardize(GreyImage(5, 5, 7.0));
    FAIL("expected ZeroVariance");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ZeroVariance);
  }
}

TEST_CASE("standardize is affine invariant") {
  const GreyImage a = testing::random_image(10, 12, 3);
  GreyImage b = a;
  for (double& v : b.pixels()) v = 40.0 + 3.5 * v;
  const GreyImage za = standardize(a), zb = standardize(b);
  for (std::size_t i = 0; i < za.size(); ++i) CHECK(za.pixels()[i] == doctest::Approx(zb.pixels()[i]).epsilon(1e-12));
}

TEST_CASE("neighborhood offsets follow raster order") {
  const NeighborhoodSpec s1(1);
  CHECK(s1.predictor_count() == 4);
  const std::vector<PixelOffset> want1{{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}};
  CHECK(s1.offsets() == want1);

  const NeighborhoodSpec s2(2);
  CHECK(s2.predictor_count() == 12);
  std::vector<PixelOffset> want2;
  for (int dr = -2; dr <= -1; ++dr) {
    for (int dc = -2; dc <= 2; ++dc) want2.push_back({dr, dc});
  }
  want2.push_back({0, -2});
  want2.push_back({0, -1});
  CHECK(s2.offsets() == want2);
  CHECK(s2.interior_rows(10) == 8);
  CHECK(s2.interior_cols(10) == 6);
  CHECK(s2.interior_cols(4) == 0);
}

TEST_CASE("neighborhood l must be positive") {
  CHECK_THROWS_AS(NeighborhoodSpec(0), Error);
}

TEST_CASE("neighborhood_of reads the causal window") {
  GreyImage img(4, 5);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 5; ++c) img(r, c) = 10.0 * r + c;
  }
  const auto x = neighborhood_of(img, 2, 2, NeighborhoodSpec(1));
  CHECK(x == std::vector<double>{11, 12, 13, 21});
  try {
    neighborhood_of(img, 0, 2, NeighborhoodSpec(1));
    FAIL("expected OutOfInteriorBounds");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::OutOfInteriorBounds);
  }
  CHECK_THROWS_AS(neighborhood_of(img, 2, 4, NeighborhoodSpec(1)), Error);
}

TEST_CASE("training matrix matches a cell-by-cell construction") {
  const GreyImage img = testing::random_image(9, 11, 5);
  for (int l : {1, 2, 3}) {
    const NeighborhoodSpec spec(l);
    const TrainingMatrix m = build_training_matrix(img, spec);
    const std::size_t ir = spec.interior_rows(img.rows()), ic = spec.interior_cols(img.cols());
    REQUIRE(m.rows() == ir * ic);
    REQUIRE(m.predictor_count() == spec.predictor_count());
    const auto offs = spec.offsets();
    std::size_t row = 0;
    for (std::size_t r = static_cast<std::size_t>(l); r < img.rows(); ++r) {
      for (std::size_t c = static_cast<std::size_t>(l); c + static_cast<std::size_t>(l) < img.cols(); ++c, ++row) {
        CHECK(m.response()[row] == img(r, c));
        for (std::size_t j = 0; j < offs.size(); ++j) {
          CHECK(m.value(row, j) == img(r + offs[j].dr, c + offs[j].dc));
        }
      }
    }
    CHECK(m.row(3) == neighborhood_of(img, static_cast<std::size_t>(l), static_cast<std::size_t>(l) + 3, spec));
  }
}

TEST_CASE("dense training matrix accessors") {
  const TrainingMatrix m = TrainingMatrix::from_dense({1, 2, 3}, {1, 10, 2, 20, 3, 30}, 2);
  CHECK(m.rows() == 3);
  CHECK(m.value(1, 1) == 20);
  CHECK(m.column(0) == std::vector<double>{1, 2, 3});
  CHECK_THROWS_AS(TrainingMatrix::from_dense({1, 2}, {1, 2, 3}, 2), Error);
}

TEST_CASE("image digest depends on content and shape") {
  const GreyImage a = testing::random_image(4, 6, 1);
  GreyImage b = a;
  CHECK(image_digest(a) == image_digest(b));
  b(2, 3) += 1e-9;
  CHECK(image_digest(a) != image_digest(b));
  CHECK(image_digest(GreyImage(4, 6)) != image_digest(GreyImage(6, 4)));
}

TEST_CASE("quantile rank convention") {
  CHECK(quantile_rank(0.997, 1000) == 997);
  CHECK(quantile_rank(0.5, 10) == 5);
  CHECK(quantile_rank(0.51, 10) == 6);
  CHECK(quantile_rank(1.0, 7) == 7);
  CHECK(quantile_rank(1e-9, 7) == 1);
  CHECK_THROWS_AS(quantile_rank(0.5, 0), Error);
  CHECK_THROWS_AS(quantile_rank(0.0, 5), Error);
  std::vector<double> v{5, 1, 4, 2, 3};
  CHECK(quantile_select(v, 0.8) == 4);
}
