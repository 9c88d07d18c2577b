#include "stsmon/image.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "stsmon/error.hpp"
#include "stsmon/file_io.hpp"

namespace stsmon {

GreyImage::GreyImage(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), pixels_(rows * cols, fill) {}

GreyImage::GreyImage(std::size_t rows, std::size_t cols,
                     std::vector<double> pixels)
    : rows_(rows), cols_(cols), pixels_(std::move(pixels)) {
  if (pixels_.size() != rows * cols) {
    fail(ErrorCode::DimensionMismatch,
         "pixel buffer holds " + std::to_string(pixels_.size()) +
             " values, expected " + std::to_string(rows * cols));
  }
}

NeighborhoodSpec::NeighborhoodSpec(int l) : l_(l) {
  if (l < 1) {
    fail(ErrorCode::InvalidArgument,
         "neighborhood size l must be >= 1, got " + std::to_string(l));
  }
}

std::vector<PixelOffset> NeighborhoodSpec::offsets() const {
  std::vector<PixelOffset> out;
  out.reserve(predictor_count());
  for (int dr = -l_; dr <= -1; ++dr) {
    for (int dc = -l_; dc <= l_; ++dc) out.push_back({dr, dc});
  }
  for (int dc = -l_; dc <= -1; ++dc) out.push_back({0, dc});
  return out;
}

std::size_t NeighborhoodSpec::interior_rows(std::size_t rows) const {
  const auto l = static_cast<std::size_t>(l_);
  return rows > l ? rows - l : 0;
}

std::size_t NeighborhoodSpec::interior_cols(std::size_t cols) const {
  const auto l2 = static_cast<std::size_t>(2 * l_);
  return cols > l2 ? cols - l2 : 0;
}

GreyImage standardize(const GreyImage& img) {
  const std::size_t n = img.size();
  if (n < 2) {
    fail(ErrorCode::ZeroVariance, "standardize needs at least 2 pixels");
  }
  double sum = 0.0;
  for (double v : img.pixels()) sum += v;
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : img.pixels()) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (!(sd > 0.0)) {
    fail(ErrorCode::ZeroVariance, "constant image cannot be standardized");
  }
  std::vector<double> out(n);
  auto src = img.pixels();
  for (std::size_t i = 0; i < n; ++i) out[i] = (src[i] - mean) / sd;
  return GreyImage(img.rows(), img.cols(), std::move(out));
}

std::vector<double> neighborhood_of(const GreyImage& img, std::size_t row,
                                    std::size_t col,
                                    const NeighborhoodSpec& spec) {
  const auto l = static_cast<std::size_t>(spec.l());
  if (row < l || col < l || col + l >= img.cols() || row >= img.rows()) {
    fail(ErrorCode::OutOfInteriorBounds,
         "neighborhood of (" + std::to_string(row) + "," +
             std::to_string(col) + ") with l=" + std::to_string(l) +
             " leaves the image");
  }
  std::vector<double> out;
  out.reserve(spec.predictor_count());
  for (const auto& off : spec.offsets()) {
    out.push_back(img(static_cast<std::size_t>(static_cast<std::ptrdiff_t>(row) + off.dr),
                      static_cast<std::size_t>(static_cast<std::ptrdiff_t>(col) + off.dc)));
  }
  return out;
}

TrainingMatrix TrainingMatrix::from_image(const GreyImage& img,
                                          const NeighborhoodSpec& spec) {
  const std::size_t ir = spec.interior_rows(img.rows());
  const std::size_t ic = spec.interior_cols(img.cols());
  if (ir == 0 || ic == 0) {
    fail(ErrorCode::ImageTooSmall,
         "image " + std::to_string(img.rows()) + "x" +
             std::to_string(img.cols()) + " has no interior for l=" +
             std::to_string(spec.l()));
  }
  TrainingMatrix m;
  m.image_ = std::make_shared<const GreyImage>(img);
  m.n_predictors_ = spec.predictor_count();
  m.interior_cols_ = ic;
  m.l_ = spec.l();
  const auto cols = static_cast<std::ptrdiff_t>(img.cols());
  for (const auto& off : spec.offsets()) {
    m.offsets_.push_back(off.dr * cols + off.dc);
  }
  const auto l = static_cast<std::size_t>(spec.l());
  m.response_.resize(ir * ic);
  for (std::size_t r = 0; r < ir; ++r) {
    for (std::size_t c = 0; c < ic; ++c) {
      m.response_[r * ic + c] = img(r + l, c + l);
    }
  }
  return m;
}

TrainingMatrix TrainingMatrix::from_dense(std::vector<double> response,
                                          std::vector<double> predictors,
                                          std::size_t n_predictors) {
  if (n_predictors == 0 ||
      predictors.size() != response.size() * n_predictors) {
    fail(ErrorCode::DimensionMismatch,
         "dense predictor table does not match response length");
  }
  TrainingMatrix m;
  m.response_ = std::move(response);
  m.dense_ = std::move(predictors);
  m.n_predictors_ = n_predictors;
  return m;
}

double TrainingMatrix::value(std::size_t row, std::size_t predictor) const noexcept {
  if (!image_) return dense_[row * n_predictors_ + predictor];
  const auto l = static_cast<std::size_t>(l_);
  const std::size_t r = row / interior_cols_ + l;
  const std::size_t c = row % interior_cols_ + l;
  const auto base = static_cast<std::ptrdiff_t>(r * image_->cols() + c);
  return image_->pixels()[static_cast<std::size_t>(base + offsets_[predictor])];
}

std::vector<double> TrainingMatrix::row(std::size_t r) const {
  std::vector<double> out(n_predictors_);
  for (std::size_t j = 0; j < n_predictors_; ++j) out[j] = value(r, j);
  return out;
}

std::vector<double> TrainingMatrix::column(std::size_t predictor) const {
  std::vector<double> out(rows());
  for (std::size_t r = 0; r < rows(); ++r) out[r] = value(r, predictor);
  return out;
}

TrainingMatrix build_training_matrix(const GreyImage& img,
                                     const NeighborhoodSpec& spec) {
  return TrainingMatrix::from_image(img, spec);
}

std::uint64_t image_digest(const GreyImage& img) {
  const std::uint64_t dims[2] = {img.rows(), img.cols()};
  const std::uint64_t h = fnv1a64({reinterpret_cast<const std::uint8_t*>(dims), sizeof(dims)});
  return fnv1a64({reinterpret_cast<const std::uint8_t*>(img.pixels().data()), img.size() * sizeof(double)}, h);
}

}  // namespace stsmon
