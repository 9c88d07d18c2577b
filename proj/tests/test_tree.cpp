#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "stsmon/error.hpp"
#include "stsmon/simulator.hpp"
#include "stsmon/tree.hpp"
#include "support.hpp"

using namespace stsmon;

namespace {

FitConfig small_config() {
  FitConfig c;
  c.min_leaf_size = 1;
  c.max_depth = 2;
  c.min_split_improvement = 0.0;
  return c;
}

double sse(const std::vector<double>& y) {
  if (y.empty()) return 0.0;
  const double m = testing::mean(y);
  double s = 0.0;
  for (double v : y) s += (v - m) * (v - m);
  return s;
}

struct Split {
  std::size_t predictor;
  double below;  // largest routed value going left
  double above;  // smallest routed value going right
  double cost;
};

// Exhaustive search over (predictor, cut) pairs with direct two-pass SSE.
Split best_split(const TrainingMatrix& m, const std::vector<std::size_t>& rows) {
  Split best{0, 0.0, 0.0, std::numeric_limits<double>::infinity()};
  for (std::size_t j = 0; j < m.predictor_count(); ++j) {
    std::vector<double> vals;
    for (auto r : rows) vals.push_back(m.value(r, j));
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
      const double t = (vals[k] + vals[k + 1]) / 2.0;
      std::vector<double> left, right;
      for (auto r : rows) (m.value(r, j) <= t ? left : right).push_back(m.response()[r]);
      const double cost = sse(left) + sse(right);
      if (cost < best.cost - 1e-12) best = {j, vals[k], vals[k + 1], cost};
    }
  }
  return best;
}

void check_node(const RegressionTree& tree, std::uint32_t node, const TrainingMatrix& m,
                const std::vector<std::size_t>& rows) {
  const TreeNode& n = tree.nodes()[node];
  std::vector<double> y;
  for (auto r : rows) y.push_back(m.response()[r]);
  CHECK(n.count == rows.size());
  CHECK(n.prediction == doctest::Approx(testing::mean(y)).epsilon(1e-12));
  if (n.is_leaf()) return;
  const Split s = best_split(m, rows);
  CHECK(n.split_predictor == s.predictor);
  // Thresholds come from the root's value grid, so only the partition is compared.
  CHECK(n.threshold >= s.below);
  CHECK(n.threshold < s.above);
  std::vector<std::size_t> left, right;
  for (auto r : rows) (m.value(r, n.split_predictor) <= n.threshold ? left : right).push_back(r);
  check_node(tree, n.left, m, left);
  check_node(tree, n.right, m, right);
}

TrainingMatrix random_matrix(std::size_t rows, std::size_t p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> x(rows * p), y(rows);
  for (double& v : x) v = d(rng);
  for (std::size_t r = 0; r < rows; ++r) y[r] = 2.0 * x[r * p] - x[r * p + 1] * x[r * p + 1] + 0.3 * d(rng);
  return TrainingMatrix::from_dense(y, x, p);
}

}  // namespace

TEST_CASE("constant response gives a single leaf") {
  const auto m = TrainingMatrix::from_dense(std::vector<double>(40, 3.25), testing::random_vector(80, 1), 2);
  const RegressionTree t = fit_tree(m, FitConfig{});
  CHECK(t.nodes().size() == 1);
  CHECK(t.predict(std::vector<double>{0.0, 0.0}) == 3.25);
}

TEST_CASE("binary predictor is separated perfectly") {
  std::vector<double> x, y;
  for (int i = 0; i < 20; ++i) {
    x.push_back(i % 2);
    y.push_back(10.0 * (i % 2));
  }
  const auto m = TrainingMatrix::from_dense(y, x, 1);
  FitConfig c = small_config();
  const RegressionTree t = fit_tree(m, c);
  REQUIRE(t.nodes().size() == 3);
  CHECK(t.nodes()[0].threshold == 0.5);
  CHECK(t.predict(std::vector<double>{0.0}) == 0.0);
  CHECK(t.predict(std::vector<double>{1.0}) == 10.0);
  CHECK_THROWS_AS(t.predict(std::vector<double>{1.0, 2.0}), Error);
}

TEST_CASE("splits match an exhaustive search") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const TrainingMatrix m = random_matrix(50, 3, seed);
    const RegressionTree t = fit_tree(m, small_config());
    CHECK(t.depth() <= 2);
    std::vector<std::size_t> all(m.rows());
    std::iota(all.begin(), all.end(), 0);
    check_node(t, 0, m, all);
  }
}

TEST_CASE("leaf predictions are the mean of routed training responses") {
  const TrainingMatrix m = random_matrix(3000, 4, 11);
  FitConfig c;
  c.min_leaf_size = 20;
  const RegressionTree t = fit_tree(m, c);
  std::vector<double> sum(t.nodes().size(), 0.0);
  std::vector<std::size_t> count(t.nodes().size(), 0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto x = m.row(r);
    std::uint32_t node = 0;
    while (!t.nodes()[node].is_leaf()) {
      const auto& n = t.nodes()[node];
      node = x[n.split_predictor] <= n.threshold ? n.left : n.right;
    }
    sum[node] += m.response()[r];
    ++count[node];
  }
  for (std::size_t i = 0; i < t.nodes().size(); ++i) {
    if (!t.nodes()[i].is_leaf()) continue;
    CHECK(count[i] == t.nodes()[i].count);
    CHECK(count[i] >= 20);
    CHECK(std::abs(sum[i] / count[i] - t.nodes()[i].prediction) <= 1e-9);
  }
}

TEST_CASE("training SSE does not exceed the total variance") {
  const TrainingMatrix m = random_matrix(2000, 3, 4);
  const RegressionTree t = fit_tree(m, FitConfig{});
  double fit = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double e = m.response()[r] - t.predict(m.row(r));
    fit += e * e;
  }
  std::vector<double> y(m.response().begin(), m.response().end());
  CHECK(fit <= sse(y));
  CHECK(t.leaf_count() > 1);
}

TEST_CASE("stopping rules") {
  const TrainingMatrix m = random_matrix(500, 3, 8);
  FitConfig c;
  c.max_depth = 0;
  CHECK(fit_tree(m, c).nodes().size() == 1);
  c.max_depth = 20;
  c.min_leaf_size = 251;
  CHECK(fit_tree(m, c).nodes().size() == 1);
  c.min_leaf_size = 1;
  c.min_split_improvement = 1e12;
  CHECK(fit_tree(m, c).nodes().size() == 1);
}

TEST_CASE("prediction is piecewise constant between thresholds") {
  const TrainingMatrix m = random_matrix(1000, 2, 9);
  const RegressionTree t = fit_tree(m, FitConfig{});
  std::vector<double> x{0.1, -0.2};
  const double base = t.predict(x);
  // Distance from x[1] to the nearest threshold on predictor 1 anywhere in the tree.
  double gap = std::numeric_limits<double>::infinity();
  for (const auto& n : t.nodes()) {
    if (!n.is_leaf() && n.split_predictor == 1) gap = std::min(gap, std::abs(n.threshold - x[1]));
  }
  x[1] += 0.5 * gap;
  CHECK(t.predict(x) == base);
}

TEST_CASE("candidate thresholds") {
  CHECK(candidate_thresholds({3, 1, 2, 2, 1}) == std::vector<double>{1.5, 2.5});
  CHECK(candidate_thresholds({4, 4, 4}).empty());
  const auto many = testing::random_vector(10000, 2);
  const auto thr = candidate_thresholds(many);
  CHECK(thr.size() <= 255);
  CHECK(thr.size() > 200);
  CHECK(std::is_sorted(thr.begin(), thr.end()));
  CHECK(std::adjacent_find(thr.begin(), thr.end()) == thr.end());
  // Each threshold separates two adjacent distinct data values.
  auto sorted = many;
  std::sort(sorted.begin(), sorted.end());
  for (double t : thr) {
    auto hi = std::upper_bound(sorted.begin(), sorted.end(), t);
    REQUIRE(hi != sorted.begin());
    REQUIRE(hi != sorted.end());
    CHECK(t == doctest::Approx((*(hi - 1) + *hi) / 2.0).epsilon(1e-15));
  }
  // The sparse tails are still split: some threshold lies beyond the 1/256 quantiles.
  CHECK(thr.front() < sorted[sorted.size() / 256]);
  CHECK(thr.back() > sorted[sorted.size() - sorted.size() / 256]);
}

TEST_CASE("fitting is deterministic and serialization round-trips") {
  SarParams p;
  p.rows = p.cols = 80;
  p.seed = 3;
  const GreyImage img = generate_sar(p);
  FitConfig c;
  c.l_candidates = {1, 2};
  c.min_leaf_size = 10;
  const TrainedModel a = train_model(img, c);
  const TrainedModel b = train_model(img, c);
  const auto bytes = serialize_model(a);
  CHECK(bytes == serialize_model(b));
  const TrainedModel back = deserialize_model(bytes);
  CHECK(back.tree == a.tree);
  CHECK(back.training_digest == image_digest(img));
  CHECK(back.selection.chosen_l == a.selection.chosen_l);
  CHECK(serialize_model(back) == bytes);

  auto broken = bytes;
  broken.push_back(0);
  CHECK_THROWS_AS(deserialize_model(broken), Error);
  broken.resize(bytes.size() / 2);
  CHECK_THROWS_AS(deserialize_model(broken), Error);
  broken = bytes;
  broken[0] = 'X';
  CHECK_THROWS_AS(deserialize_model(broken), Error);
}

TEST_CASE("single candidate is returned without competition") {
  FitConfig c;
  c.l_candidates = {3};
  const auto sel = select_neighborhood(standardize(testing::random_image(60, 60, 2)), c);
  CHECK(sel.chosen_l == 3);
  REQUIRE(sel.report.size() == 1);
  CHECK(sel.report[0].evaluated);
}

TEST_CASE("chosen l has the smallest CV error") {
  SarParams p;
  p.rows = p.cols = 150;
  p.seed = 21;
  FitConfig c;
  c.l_candidates = {1, 2, 3};
  const auto sel = select_neighborhood(standardize(generate_sar(p)), c);
  for (const auto& e : sel.report) {
    if (e.l == sel.chosen_l) {
      for (const auto& o : sel.report) CHECK(e.cv_error <= o.cv_error);
    }
  }
}

TEST_CASE("white noise: smallest l wins inside the tolerance band") {
  const GreyImage img = standardize(testing::random_image(120, 120, 17));
  FitConfig c;
  c.l_candidates = {1, 2, 3};
  c.cv_tolerance = 0.1;
  const auto sel = select_neighborhood(img, c);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : sel.report) best = std::min(best, e.cv_error);
  // CV errors are statistically indistinguishable on white noise.
  for (const auto& e : sel.report) CHECK(e.cv_error <= best * 1.1);
  CHECK(sel.chosen_l == 1);
}

TEST_CASE("too-small candidates are skipped; all skipped is an error") {
  FitConfig c;
  c.l_candidates = {1, 30};
  const auto sel = select_neighborhood(standardize(testing::random_image(50, 50, 4)), c);
  CHECK(sel.chosen_l == 1);
  CHECK_FALSE(sel.report[1].evaluated);
  c.l_candidates = {30};
  try {
    select_neighborhood(standardize(testing::random_image(50, 50, 4)), c);
    FAIL("expected ImageTooSmall");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ImageTooSmall);
  }
}

TEST_CASE("residuals of an in-control AR image are close to white") {
  SarParams p;
  p.rows = p.cols = 500;
  p.seed = 1;
  const TrainedModel m = train_model(to_greyscale(generate_sar(p)), FitConfig{}, 1);
  p.rows = p.cols = 250;
  p.seed = 2;
  const GreyImage img = standardize(to_greyscale(generate_sar(p)));
  const ResidualImage r = residual_image(m.tree, img);
  CHECK(r.values.rows() == 249);
  CHECK(r.values.cols() == 248);
  CHECK(std::abs(testing::lag_correlation(r.values, 1, 0)) < 0.1);
  CHECK(std::abs(testing::lag_correlation(r.values, 0, 1)) < 0.1);
  // Residual (r, c) belongs to source pixel (r + l, c + l).
  const NeighborhoodSpec spec(1);
  CHECK(r.values(10, 20) == img(11, 21) - m.tree.predict(neighborhood_of(img, 11, 21, spec)));
  CHECK(m.tree.predict_at(img, 11, 21) == m.tree.predict(neighborhood_of(img, 11, 21, spec)));
}
