#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace stsmon {

// Row-major 2-D array of real-valued pixels. Used for raw greyscale,
// standardized, residual and statistic surfaces alike.
class GreyImage {
 public:
  GreyImage() = default;
  GreyImage(std::size_t rows, std::size_t cols, double fill = 0.0);
  GreyImage(std::size_t rows, std::size_t cols, std::vector<double> pixels);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  bool empty() const noexcept { return pixels_.empty(); }

  double operator()(std::size_t r, std::size_t c) const noexcept {
    return pixels_[r * cols_ + c];
  }
  double& operator()(std::size_t r, std::size_t c) noexcept {
    return pixels_[r * cols_ + c];
  }

  std::span<const double> pixels() const noexcept { return pixels_; }
  std::span<double> pixels() noexcept { return pixels_; }
  const double* row_ptr(std::size_t r) const noexcept {
    return pixels_.data() + r * cols_;
  }

  friend bool operator==(const GreyImage&, const GreyImage&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> pixels_;
};

struct PixelOffset {
  int dr;
  int dc;
  friend bool operator==(const PixelOffset&, const PixelOffset&) = default;
};

// Causal raster-scan neighborhood: l full rows of width 2l+1 above the
// response pixel, then l pixels to its left on the same row.
class NeighborhoodSpec {
 public:
  explicit NeighborhoodSpec(int l);

  int l() const noexcept { return l_; }
  std::size_t predictor_count() const noexcept {
    return static_cast<std::size_t>(2 * l_ * l_ + 2 * l_);
  }
  // Offsets in predictor order: rows -l..-1 (each scanning columns -l..+l),
  // then row 0 columns -l..-1.
  std::vector<PixelOffset> offsets() const;

  std::size_t interior_rows(std::size_t rows) const;
  std::size_t interior_cols(std::size_t cols) const;

 private:
  int l_;
};

// Mean 0, population sd 1. Throws ZeroVariance for constant images.
GreyImage standardize(const GreyImage& img);

std::vector<double> neighborhood_of(const GreyImage& img, std::size_t row,
                                    std::size_t col,
                                    const NeighborhoodSpec& spec);

// Response/predictor table with one row per interior pixel in raster order.
// Predictors are either stored densely or read through from a source image.
class TrainingMatrix {
 public:
  static TrainingMatrix from_image(const GreyImage& img,
                                   const NeighborhoodSpec& spec);
  // Row-major predictors, predictors.size() == response.size() * n_predictors.
  static TrainingMatrix from_dense(std::vector<double> response,
                                   std::vector<double> predictors,
                                   std::size_t n_predictors);

  std::size_t rows() const noexcept { return response_.size(); }
  std::size_t predictor_count() const noexcept { return n_predictors_; }
  std::span<const double> response() const noexcept { return response_; }

  double value(std::size_t row, std::size_t predictor) const noexcept;
  std::vector<double> row(std::size_t r) const;
  std::vector<double> column(std::size_t predictor) const;

  // Set only for image-backed matrices.
  int neighborhood() const noexcept { return l_; }

 private:
  TrainingMatrix() = default;

  std::vector<double> response_;
  std::size_t n_predictors_ = 0;
  std::vector<double> dense_;
  std::shared_ptr<const GreyImage> image_;
  std::vector<std::ptrdiff_t> offsets_;
  std::size_t interior_cols_ = 0;
  int l_ = 0;
};

TrainingMatrix build_training_matrix(const GreyImage& img,
                                     const NeighborhoodSpec& spec);

// 64-bit FNV-1a over dimensions and pixel bytes.
std::uint64_t image_digest(const GreyImage& img);

}  // namespace stsmon
