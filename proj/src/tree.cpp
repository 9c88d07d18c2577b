#include "stsmon/tree.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "stsmon/error.hpp"
#include "stsmon/file_io.hpp"
#include "stsmon/quantile.hpp"

namespace stsmon {

std::vector<int> FitConfig::default_l_candidates() {
  std::vector<int> v(20);
  std::iota(v.begin(), v.end(), 1);
  return v;
}

void FitConfig::validate() const {
  if (min_leaf_size < 1) fail(ErrorCode::InvalidArgument, "min_leaf_size must be >= 1");
  if (max_depth < 0) fail(ErrorCode::InvalidArgument, "max_depth must be >= 0");
  if (cv_folds < 2) fail(ErrorCode::InvalidArgument, "cv_folds must be >= 2");
  if (l_candidates.empty()) fail(ErrorCode::InvalidArgument, "l_candidates is empty");
  for (int l : l_candidates) {
    if (l < 1) fail(ErrorCode::InvalidArgument, "l candidates must be >= 1");
  }
  if (!(cv_tolerance >= 0.0)) fail(ErrorCode::InvalidArgument, "cv_tolerance must be >= 0");
}

RegressionTree::RegressionTree(std::vector<TreeNode> nodes, std::size_t n_predictors, int l)
    : nodes_(std::move(nodes)), n_predictors_(n_predictors), l_(l) {
  if (nodes_.empty()) fail(ErrorCode::FormatError, "tree has no nodes");
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    if (n.is_leaf() != (n.right == TreeNode::kNoChild)) {
      fail(ErrorCode::FormatError, "node " + std::to_string(i) + " has a single child");
    }
    // Children are always created after their parent.
    if (!n.is_leaf() && (n.left <= i || n.right <= i || n.left >= nodes_.size() ||
                         n.right >= nodes_.size() || n.split_predictor >= n_predictors_)) {
      fail(ErrorCode::FormatError, "node " + std::to_string(i) + " is malformed");
    }
  }
}

double RegressionTree::predict(std::span<const double> x) const {
  if (x.size() != n_predictors_) {
    fail(ErrorCode::DimensionMismatch, "predictor vector has length " + std::to_string(x.size()) +
                                           ", tree expects " + std::to_string(n_predictors_));
  }
  std::uint32_t i = 0;
  while (!nodes_[i].is_leaf()) {
    const auto& n = nodes_[i];
    i = x[n.split_predictor] <= n.threshold ? n.left : n.right;
  }
  return nodes_[i].prediction;
}

double RegressionTree::predict_at(const GreyImage& img, std::size_t row, std::size_t col) const {
  const auto spec = NeighborhoodSpec(l_);
  return predict(neighborhood_of(img, row, col, spec));
}

std::size_t RegressionTree::leaf_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

std::size_t RegressionTree::depth() const noexcept {
  std::vector<std::size_t> d(nodes_.size(), 0);
  std::size_t best = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    best = std::max(best, d[i]);
    if (!nodes_[i].is_leaf()) {
      d[nodes_[i].left] = d[i] + 1;
      d[nodes_[i].right] = d[i] + 1;
    }
  }
  return best;
}

namespace {
constexpr int kQuantileCuts = 191;
constexpr int kWidthCuts = 64;
}  // namespace

std::vector<double> candidate_thresholds(std::vector<double> column) {
  std::sort(column.begin(), column.end());
  std::vector<double> distinct;
  std::unique_copy(column.begin(), column.end(), std::back_inserter(distinct));
  std::vector<double> out;
  if (distinct.size() <= 256) {
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
      out.push_back(std::midpoint(distinct[i], distinct[i + 1]));
    }
    return out;
  }
  // Midpoint between the distinct value at or below v and the next one.
  auto cut_after = [&](double v, std::vector<double>& out) {
    auto next = std::upper_bound(distinct.begin(), distinct.end(), v);
    if (next == distinct.begin() || next == distinct.end()) return;
    out.push_back(std::midpoint(*std::prev(next), *next));
  };
  // Quantile cuts resolve the bulk; equal-width cuts keep resolution in the
  // sparse tails, where quantile bins alone would span several sd.
  for (int k = 1; k < kQuantileCuts + 1; ++k) {
    cut_after(quantile_sorted(column, static_cast<double>(k) / (kQuantileCuts + 1)), out);
  }
  const double lo = distinct.front(), hi = distinct.back();
  for (int k = 1; k <= kWidthCuts; ++k) {
    cut_after(lo + (hi - lo) * k / (kWidthCuts + 1), out);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace {

// Predictor columns reduced to bin codes: code(v) = number of thresholds < v,
// so v <= thresholds[b] exactly when code(v) <= b.
struct BinnedMatrix {
  std::size_t rows = 0;
  std::size_t predictors = 0;
  std::vector<std::vector<double>> thresholds;
  std::vector<std::uint8_t> codes;  // column-major

  const std::uint8_t* column(std::size_t j) const { return codes.data() + j * rows; }
};

BinnedMatrix bin_matrix(const TrainingMatrix& data) {
  BinnedMatrix b;
  b.rows = data.rows();
  b.predictors = data.predictor_count();
  b.thresholds.resize(b.predictors);
  b.codes.resize(b.rows * b.predictors);
  const auto p = static_cast<std::ptrdiff_t>(b.predictors);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t jj = 0; jj < p; ++jj) {
    const auto j = static_cast<std::size_t>(jj);
    auto col = data.column(j);
    auto thr = candidate_thresholds(col);
    std::uint8_t* out = b.codes.data() + j * b.rows;
    for (std::size_t r = 0; r < b.rows; ++r) {
      out[r] = static_cast<std::uint8_t>(std::lower_bound(thr.begin(), thr.end(), col[r]) - thr.begin());
    }
    b.thresholds[j] = std::move(thr);
  }
  return b;
}

struct Bin {
  double sum = 0.0;
  std::uint64_t count = 0;
};

constexpr std::size_t kBins = 256;

struct FitResult {
  std::vector<TreeNode> nodes;
  std::vector<std::uint8_t> split_bins;  // parallel to nodes, internal nodes only
};

class TreeBuilder {
 public:
  TreeBuilder(const BinnedMatrix& bins, std::span<const double> response, const FitConfig& cfg,
              double min_improvement)
      : bins_(bins), y_(response), cfg_(cfg), min_improvement_(min_improvement) {}

  FitResult run(std::vector<std::uint32_t> rows) {
    rows_ = std::move(rows);
    scratch_.resize(rows_.size());
    std::vector<Bin> hist(bins_.predictors * kBins);
    fill_histogram(0, rows_.size(), hist);
    grow(0, rows_.size(), 0, hist);
    return std::move(result_);
  }

 private:
  void fill_histogram(std::size_t begin, std::size_t end, std::vector<Bin>& hist) const {
    const auto p = static_cast<std::ptrdiff_t>(bins_.predictors);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t jj = 0; jj < p; ++jj) {
      const auto j = static_cast<std::size_t>(jj);
      Bin* h = hist.data() + j * kBins;
      std::fill(h, h + kBins, Bin{});
      const std::uint8_t* codes = bins_.column(j);
      for (std::size_t k = begin; k < end; ++k) {
        const std::uint32_t r = rows_[k];
        Bin& bin = h[codes[r]];
        bin.sum += y_[r];
        ++bin.count;
      }
    }
  }

  struct Split {
    double gain = 0.0;
    std::size_t predictor = 0;
    std::size_t bin = 0;
    bool found = false;
  };

  Split best_split(const std::vector<Bin>& hist, double total, std::uint64_t n) const {
    const auto p = static_cast<std::ptrdiff_t>(bins_.predictors);
    std::vector<Split> per(bins_.predictors);
    const auto min_leaf = static_cast<std::uint64_t>(cfg_.min_leaf_size);
    const double base = total * total / static_cast<double>(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t jj = 0; jj < p; ++jj) {
      const auto j = static_cast<std::size_t>(jj);
      const Bin* h = hist.data() + j * kBins;
      const std::size_t n_thr = bins_.thresholds[j].size();
      double sum_left = 0.0;
      std::uint64_t n_left = 0;
      Split s;
      s.predictor = j;
      for (std::size_t b = 0; b < n_thr; ++b) {
        sum_left += h[b].sum;
        n_left += h[b].count;
        if (n_left < min_leaf) continue;
        const std::uint64_t n_right = n - n_left;
        if (n_right < min_leaf) break;
        const double sum_right = total - sum_left;
        const double gain = sum_left * sum_left / static_cast<double>(n_left) +
                            sum_right * sum_right / static_cast<double>(n_right) - base;
        if (!s.found || gain > s.gain) {
          s.gain = gain;
          s.bin = b;
          s.found = true;
        }
      }
      per[j] = s;
    }
    Split best;
    for (const auto& s : per) {
      if (s.found && (!best.found || s.gain > best.gain)) best = s;
    }
    return best;
  }

  std::uint32_t make_leaf(std::size_t begin, std::size_t end) {
    double sum = 0.0;
    for (std::size_t k = begin; k < end; ++k) sum += y_[rows_[k]];
    TreeNode leaf;
    leaf.count = end - begin;
    leaf.prediction = sum / static_cast<double>(end - begin);
    result_.nodes.push_back(leaf);
    result_.split_bins.push_back(0);
    return static_cast<std::uint32_t>(result_.nodes.size() - 1);
  }

  // `hist` holds this node's histogram and is reused as scratch for the
  // larger child.
  std::uint32_t grow(std::size_t begin, std::size_t end, int depth, std::vector<Bin>& hist) {
    const std::uint64_t n = end - begin;
    const auto min_leaf = static_cast<std::uint64_t>(cfg_.min_leaf_size);
    if (depth >= cfg_.max_depth || n < 2 * min_leaf) return make_leaf(begin, end);

    double total = 0.0;
    for (std::size_t b = 0; b < kBins; ++b) total += hist[b].sum;
    const Split split = best_split(hist, total, n);
    if (!split.found || !(split.gain > 0.0) || split.gain < min_improvement_) {
      return make_leaf(begin, end);
    }

    const std::uint8_t* codes = bins_.column(split.predictor);
    const auto cut = static_cast<std::uint8_t>(split.bin);
    std::size_t n_left = 0;
    std::size_t n_right = 0;
    for (std::size_t k = begin; k < end; ++k) {
      const std::uint32_t row = rows_[k];
      if (codes[row] <= cut) rows_[begin + n_left++] = row;
      else scratch_[n_right++] = row;
    }
    std::copy(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(n_right),
              rows_.begin() + static_cast<std::ptrdiff_t>(begin + n_left));
    const std::size_t mid = begin + n_left;

    TreeNode node;
    node.split_predictor = static_cast<std::uint32_t>(split.predictor);
    node.threshold = bins_.thresholds[split.predictor][split.bin];
    node.count = n;
    node.prediction = total / static_cast<double>(n);
    result_.nodes.push_back(node);
    result_.split_bins.push_back(cut);
    const std::size_t self = result_.nodes.size() - 1;

    const bool left_small = n_left <= n - n_left;
    std::vector<Bin> small(bins_.predictors * kBins);
    if (left_small) fill_histogram(begin, mid, small);
    else fill_histogram(mid, end, small);
    for (std::size_t i = 0; i < hist.size(); ++i) {
      hist[i].sum -= small[i].sum;
      hist[i].count -= small[i].count;
    }
    std::vector<Bin>& left_hist = left_small ? small : hist;
    std::vector<Bin>& right_hist = left_small ? hist : small;
    const std::uint32_t l = grow(begin, mid, depth + 1, left_hist);
    const std::uint32_t r = grow(mid, end, depth + 1, right_hist);
    result_.nodes[self].left = l;
    result_.nodes[self].right = r;
    return static_cast<std::uint32_t>(self);
  }

  const BinnedMatrix& bins_;
  std::span<const double> y_;
  const FitConfig& cfg_;
  double min_improvement_;
  std::vector<std::uint32_t> rows_;
  std::vector<std::uint32_t> scratch_;
  FitResult result_;
};

double sse_about_mean(std::span<const double> y, std::span<const std::uint32_t> rows) {
  double sum = 0.0;
  for (auto r : rows) sum += y[r];
  const double mean = sum / static_cast<double>(rows.size());
  double ss = 0.0;
  for (auto r : rows) ss += (y[r] - mean) * (y[r] - mean);
  return ss;
}

FitResult fit_binned(const BinnedMatrix& bins, std::span<const double> y,
                     std::vector<std::uint32_t> rows, const FitConfig& cfg) {
  if (rows.empty()) fail(ErrorCode::InsufficientData, "cannot fit a tree to zero rows");
  const double min_improvement =
      cfg.min_split_improvement >= 0.0 ? cfg.min_split_improvement : 1e-7 * sse_about_mean(y, rows);
  TreeBuilder builder(bins, y, cfg, min_improvement);
  return builder.run(std::move(rows));
}

double predict_binned(const FitResult& fit, const BinnedMatrix& bins, std::size_t row) {
  std::uint32_t i = 0;
  while (!fit.nodes[i].is_leaf()) {
    const auto& n = fit.nodes[i];
    i = bins.column(n.split_predictor)[row] <= fit.split_bins[i] ? n.left : n.right;
  }
  return fit.nodes[i].prediction;
}

std::vector<std::uint32_t> all_rows(std::size_t n) {
  std::vector<std::uint32_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0u);
  return rows;
}

}  // namespace

RegressionTree fit_tree(const TrainingMatrix& data, const FitConfig& cfg,
                        std::span<const std::size_t> rows) {
  if (cfg.min_leaf_size < 1) fail(ErrorCode::InvalidArgument, "min_leaf_size must be >= 1");
  if (data.rows() > std::numeric_limits<std::uint32_t>::max()) {
    fail(ErrorCode::InvalidArgument, "training matrix has too many rows");
  }
  const BinnedMatrix bins = bin_matrix(data);
  std::vector<std::uint32_t> subset;
  if (rows.empty()) {
    subset = all_rows(data.rows());
  } else {
    subset.reserve(rows.size());
    for (auto r : rows) {
      if (r >= data.rows()) fail(ErrorCode::InvalidArgument, "row index out of range");
      subset.push_back(static_cast<std::uint32_t>(r));
    }
  }
  FitResult fit = fit_binned(bins, data.response(), std::move(subset), cfg);
  return RegressionTree(std::move(fit.nodes), data.predictor_count(), data.neighborhood());
}

NeighborhoodSelection select_neighborhood(const GreyImage& img, const FitConfig& cfg) {
  cfg.validate();
  std::vector<int> candidates = cfg.l_candidates;
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  NeighborhoodSelection sel;
  const auto folds = static_cast<std::size_t>(cfg.cv_folds);
  for (int l : candidates) {
    CvEntry entry;
    entry.l = l;
    const NeighborhoodSpec spec(l);
    const std::size_t n = spec.interior_rows(img.rows()) * spec.interior_cols(img.cols());
    if (n < folds * 2 * static_cast<std::size_t>(cfg.min_leaf_size)) {
      spdlog::warn("skipping neighborhood l={}: image {}x{} too small", l, img.rows(), img.cols());
      sel.report.push_back(entry);
      continue;
    }
    const TrainingMatrix data = build_training_matrix(img, spec);
    const BinnedMatrix bins = bin_matrix(data);
    const auto y = data.response();

    std::vector<std::uint32_t> perm = all_rows(n);
    std::mt19937_64 rng(cfg.seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::uint8_t> fold_of(n);
    for (std::size_t i = 0; i < n; ++i) fold_of[perm[i]] = static_cast<std::uint8_t>(i % folds);

    double err_sum = 0.0;
    for (std::size_t f = 0; f < folds; ++f) {
      std::vector<std::uint32_t> train;
      std::vector<std::uint32_t> held;
      train.reserve(n);
      for (std::uint32_t r = 0; r < n; ++r) (fold_of[r] == f ? held : train).push_back(r);
      const FitResult fit = fit_binned(bins, y, std::move(train), cfg);
      double sse = 0.0;
      for (auto r : held) {
        const double e = y[r] - predict_binned(fit, bins, r);
        sse += e * e;
      }
      err_sum += sse / static_cast<double>(held.size());
    }
    entry.evaluated = true;
    entry.rows = n;
    entry.cv_error = err_sum / static_cast<double>(folds);
    spdlog::debug("l={} cv_error={:.6g}", l, entry.cv_error);
    sel.report.push_back(entry);
  }

  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : sel.report) {
    if (e.evaluated) best = std::min(best, e.cv_error);
  }
  if (!std::isfinite(best)) {
    fail(ErrorCode::ImageTooSmall, "image too small for every neighborhood candidate");
  }
  for (const auto& e : sel.report) {
    if (e.evaluated && e.cv_error <= best * (1.0 + cfg.cv_tolerance)) {
      sel.chosen_l = e.l;
      break;
    }
  }
  return sel;
}

TrainedModel train_model(const GreyImage& raw_image, const FitConfig& cfg, int fixed_l) {
  cfg.validate();
  TrainedModel model;
  model.config = cfg;
  model.training_digest = image_digest(raw_image);
  const GreyImage img = standardize(raw_image);
  if (fixed_l > 0) {
    model.selection.chosen_l = fixed_l;
  } else {
    model.selection = select_neighborhood(img, cfg);
  }
  const NeighborhoodSpec spec(model.selection.chosen_l);
  const TrainingMatrix data = build_training_matrix(img, spec);
  model.tree = fit_tree(data, cfg);
  return model;
}

ResidualImage residual_image(const RegressionTree& tree, const GreyImage& img) {
  const int l = tree.l();
  if (l < 1) fail(ErrorCode::InvalidArgument, "tree was not trained on an image neighborhood");
  const NeighborhoodSpec spec(l);
  const std::size_t ir = spec.interior_rows(img.rows());
  const std::size_t ic = spec.interior_cols(img.cols());
  if (ir == 0 || ic == 0) {
    fail(ErrorCode::ImageTooSmall, "image " + std::to_string(img.rows()) + "x" +
                                       std::to_string(img.cols()) + " too small for l=" +
                                       std::to_string(l));
  }
  std::vector<std::ptrdiff_t> offsets;
  const auto cols = static_cast<std::ptrdiff_t>(img.cols());
  for (const auto& off : spec.offsets()) offsets.push_back(off.dr * cols + off.dc);
  const auto& nodes = tree.nodes();

  ResidualImage out;
  out.l = l;
  out.values = GreyImage(ir, ic);
  const double* px = img.pixels().data();
  const auto lu = static_cast<std::size_t>(l);
  const auto irows = static_cast<std::ptrdiff_t>(ir);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t rr = 0; rr < irows; ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    for (std::size_t c = 0; c < ic; ++c) {
      const double* centre = px + (r + lu) * img.cols() + (c + lu);
      std::uint32_t i = 0;
      while (!nodes[i].is_leaf()) {
        const auto& n = nodes[i];
        i = centre[offsets[n.split_predictor]] <= n.threshold ? n.left : n.right;
      }
      out.values(r, c) = *centre - nodes[i].prediction;
    }
  }
  return out;
}

namespace {
constexpr char kModelMagic[8] = {'S', 'T', 'S', 'M', 'O', 'D', 'E', 'L'};
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

std::vector<std::uint8_t> serialize_model(const TrainedModel& model) {
  ByteWriter w;
  w.text(std::string_view(kModelMagic, 8));
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(model.tree.l()));
  w.u32(static_cast<std::uint32_t>(model.tree.predictor_count()));
  const auto& c = model.config;
  w.u32(static_cast<std::uint32_t>(c.min_leaf_size));
  w.u32(static_cast<std::uint32_t>(c.max_depth));
  w.f64(c.min_split_improvement);
  w.u32(static_cast<std::uint32_t>(c.cv_folds));
  w.f64(c.cv_tolerance);
  w.u32(static_cast<std::uint32_t>(c.l_candidates.size()));
  for (int l : c.l_candidates) w.u32(static_cast<std::uint32_t>(l));
  w.u64(c.seed);
  w.u64(model.training_digest);
  w.u32(static_cast<std::uint32_t>(model.selection.chosen_l));
  w.u32(static_cast<std::uint32_t>(model.selection.report.size()));
  for (const auto& e : model.selection.report) {
    w.u32(static_cast<std::uint32_t>(e.l));
    w.u8(e.evaluated ? 1 : 0);
    w.f64(e.cv_error);
    w.u64(e.rows);
  }
  const auto& nodes = model.tree.nodes();
  w.u32(static_cast<std::uint32_t>(nodes.size()));
  for (const auto& n : nodes) {
    w.u32(n.split_predictor);
    w.f64(n.threshold);
    w.u32(n.left);
    w.u32(n.right);
    w.f64(n.prediction);
    w.u64(n.count);
  }
  return w.take();
}

TrainedModel deserialize_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.bytes(8);
  if (!std::equal(magic.begin(), magic.end(), kModelMagic)) {
    fail(ErrorCode::FormatError, "not a model file");
  }
  const std::uint32_t version = r.u32();
  if (version != kModelVersion) {
    fail(ErrorCode::FormatError, "unsupported model format version " + std::to_string(version));
  }
  TrainedModel m;
  const auto l = static_cast<int>(r.u32());
  const std::size_t n_predictors = r.u32();
  auto& c = m.config;
  c.min_leaf_size = static_cast<int>(r.u32());
  c.max_depth = static_cast<int>(r.u32());
  c.min_split_improvement = r.f64();
  c.cv_folds = static_cast<int>(r.u32());
  c.cv_tolerance = r.f64();
  c.l_candidates.resize(r.u32());
  for (auto& v : c.l_candidates) v = static_cast<int>(r.u32());
  c.seed = r.u64();
  m.training_digest = r.u64();
  m.selection.chosen_l = static_cast<int>(r.u32());
  m.selection.report.resize(r.u32());
  for (auto& e : m.selection.report) {
    e.l = static_cast<int>(r.u32());
    e.evaluated = r.u8() != 0;
    e.cv_error = r.f64();
    e.rows = r.u64();
  }
  std::vector<TreeNode> nodes(r.u32());
  for (auto& n : nodes) {
    n.split_predictor = r.u32();
    n.threshold = r.f64();
    n.left = r.u32();
    n.right = r.u32();
    n.prediction = r.f64();
    n.count = r.u64();
  }
  if (r.remaining() != 0) fail(ErrorCode::FormatError, "trailing bytes after model");
  if (l >= 1 && n_predictors != NeighborhoodSpec(l).predictor_count()) {
    fail(ErrorCode::FormatError, "model predictor count does not match l");
  }
  m.tree = RegressionTree(std::move(nodes), n_predictors, l);
  return m;
}

}  // namespace stsmon
