#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stsmon/image.hpp"

namespace stsmon {

struct FitConfig {
  int min_leaf_size = 30;
  int max_depth = 20;
  // Absolute SSE decrease a split must achieve. Negative selects the
  // default of 1e-7 times the root SSE.
  double min_split_improvement = -1.0;
  int cv_folds = 5;
  std::vector<int> l_candidates = default_l_candidates();
  // Relative band for neighborhood selection: the smallest l whose CV error
  // is within (1 + cv_tolerance) of the minimum wins. 0 selects the strict
  // minimum.
  double cv_tolerance = 0.0;
  std::uint64_t seed = 0;

  static std::vector<int> default_l_candidates();
  void validate() const;
};

struct TreeNode {
  // Internal nodes: split_predictor/threshold/left/right. Leaves: left == right == kNoChild.
  static constexpr std::uint32_t kNoChild = 0xffffffffu;

  std::uint32_t split_predictor = 0;
  double threshold = 0.0;
  std::uint32_t left = kNoChild;
  std::uint32_t right = kNoChild;
  double prediction = 0.0;
  std::uint64_t count = 0;

  bool is_leaf() const noexcept { return left == kNoChild; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

class RegressionTree {
 public:
  RegressionTree() = default;
  RegressionTree(std::vector<TreeNode> nodes, std::size_t n_predictors, int l);

  // Descends left iff x[split_predictor] <= threshold.
  double predict(std::span<const double> x) const;

  // Prediction for the interior pixel (row, col) of an image, reading the
  // neighborhood in place. The tree must be image-trained (l() > 0).
  double predict_at(const GreyImage& img, std::size_t row, std::size_t col) const;

  const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
  std::size_t predictor_count() const noexcept { return n_predictors_; }
  int l() const noexcept { return l_; }
  std::size_t leaf_count() const noexcept;
  std::size_t depth() const noexcept;

  friend bool operator==(const RegressionTree&, const RegressionTree&) = default;

 private:
  std::vector<TreeNode> nodes_;
  std::size_t n_predictors_ = 0;
  int l_ = 0;
};

// Greedy CART with SSE splitting over binned candidate thresholds. When
// `rows` is non-empty only those training rows are used.
RegressionTree fit_tree(const TrainingMatrix& data, const FitConfig& cfg,
                        std::span<const std::size_t> rows = {});

// Candidate thresholds for one predictor column: midpoints of consecutive
// distinct values. Above 256 distinct values, 191 empirical quantile cuts
// plus 64 equal-width cuts over the range, each moved to the midpoint of the
// distinct values straddling it.
std::vector<double> candidate_thresholds(std::vector<double> column);

struct CvEntry {
  int l = 0;
  bool evaluated = false;
  // Mean held-out squared error per row, averaged over folds.
  double cv_error = 0.0;
  std::size_t rows = 0;
};

struct NeighborhoodSelection {
  int chosen_l = 0;
  std::vector<CvEntry> report;
};

NeighborhoodSelection select_neighborhood(const GreyImage& img, const FitConfig& cfg);

struct TrainedModel {
  RegressionTree tree;
  FitConfig config;
  NeighborhoodSelection selection;
  std::uint64_t training_digest = 0;
};

// standardize -> select l (skipped when fixed_l > 0) -> fit on the full image.
TrainedModel train_model(const GreyImage& raw_image, const FitConfig& cfg, int fixed_l = 0);

// Interior residual surface: (rows - l) x (cols - 2l), value = pixel -
// prediction. Residual (r, c) maps to source (r + l, c + l).
struct ResidualImage {
  GreyImage values;
  int l = 0;
  std::size_t offset_row() const noexcept { return static_cast<std::size_t>(l); }
  std::size_t offset_col() const noexcept { return static_cast<std::size_t>(l); }
};

ResidualImage residual_image(const RegressionTree& tree, const GreyImage& img);

// Model file: see docs/FORMATS.md.
std::vector<std::uint8_t> serialize_model(const TrainedModel& model);
TrainedModel deserialize_model(std::span<const std::uint8_t> bytes);

}  // namespace stsmon
