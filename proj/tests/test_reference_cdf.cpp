#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "stsmon/error.hpp"
#include "stsmon/quantile.hpp"
#include "stsmon/reference_cdf.hpp"
#include "support.hpp"

using namespace stsmon;

namespace {

ReferenceCdf normal_cdf(std::size_t n, std::uint64_t seed, double q = 0.01, double p = 1e-4) {
  return fit_reference_cdf(testing::random_vector(n, seed), q, q, p);
}

}  // namespace

TEST_CASE("patch points hit p and 1 - p exactly") {
  const ReferenceCdf cdf = normal_cdf(50000, 1);
  CHECK(cdf.eval(cdf.r_p()) == cdf.p());
  CHECK(cdf.eval(cdf.r_1mp()) == 1.0 - cdf.p());
}

TEST_CASE("cdf is monotone and strictly inside (0, 1)") {
  const ReferenceCdf cdf = normal_cdf(50000, 2);
  const double lo = cdf.r_p() - 10.0 * cdf.lambda_lower();
  const double hi = cdf.r_1mp() + 10.0 * cdf.lambda_upper();
  double prev = 0.0;
  for (int i = 0; i <= 10000; ++i) {
    const double r = lo + (hi - lo) * i / 10000.0;
    const double v = cdf(r);
    CHECK(v > 0.0);
    CHECK(v < 1.0);
    CHECK(v >= prev);
    prev = v;
  }
  for (double r : {-1e6, -1e3, 1e3, 1e6}) {
    CHECK(cdf(r) > 0.0);
    CHECK(cdf(r) < 1.0);
  }
}

TEST_CASE("tail rates are the exponential MLEs") {
  auto data = testing::random_vector(20000, 3);
  const double q = 0.02;
  const ReferenceCdf cdf = fit_reference_cdf(data, q, q, 0.001);
  std::sort(data.begin(), data.end());
  const double r_ql = quantile_sorted(data, q);
  const double r_1mqu = quantile_sorted(data, 1.0 - q);
  double lo_sum = 0.0, hi_sum = 0.0;
  int lo_n = 0, hi_n = 0;
  for (double v : data) {
    if (v <= r_ql) {
      lo_sum += v;
      ++lo_n;
    }
    if (v >= r_1mqu) {
      hi_sum += v;
      ++hi_n;
    }
  }
  CHECK(cdf.r_ql() == r_ql);
  CHECK(cdf.r_1mqu() == r_1mqu);
  CHECK(cdf.lambda_lower() == doctest::Approx(r_ql - lo_sum / lo_n).epsilon(1e-12));
  CHECK(cdf.lambda_upper() == doctest::Approx(hi_sum / hi_n - r_1mqu).epsilon(1e-12));
  CHECK(cdf.r_p() == quantile_sorted(data, 0.001));
  CHECK(cdf.r_1mp() == quantile_sorted(data, 0.999));
}

TEST_CASE("fitted cdf tracks the normal cdf") {
  const ReferenceCdf cdf = normal_cdf(200000, 4);
  for (double r = -4.0; r <= 4.0; r += 0.25) {
    const double phi = 0.5 * std::erfc(-r / std::sqrt(2.0));
    CHECK(std::abs(cdf(r) - phi) < 0.01);
  }
  // Exponential tails decay like the normal tail near the patch, not faster than it far out.
  CHECK(cdf(-6.0) > 0.5 * std::erfc(6.0 / std::sqrt(2.0)));
}

TEST_CASE("log forms agree with the direct evaluation") {
  const ReferenceCdf cdf = normal_cdf(50000, 5);
  for (double r = -5.0; r <= 5.0; r += 0.01) {
    CHECK(cdf.log_cdf(r) == doctest::Approx(std::log(cdf(r))).epsilon(1e-12));
    CHECK(cdf.log_survival(r) == doctest::Approx(std::log1p(-cdf(r))).epsilon(1e-9));
  }
  // Far tails stay finite in log space.
  CHECK(std::isfinite(cdf.log_cdf(-1e4)));
  CHECK(std::isfinite(cdf.log_survival(1e4)));
}

TEST_CASE("empirical F ignores the patch") {
  const ReferenceCdf cdf = fit_reference_cdf(testing::random_vector(1000, 6), 0.1, 0.1, 0.01);
  const auto s = cdf.sorted();
  CHECK(cdf.empirical(s[0] - 1.0) == 0.0);
  CHECK(cdf.empirical(s[499]) == 0.5);
  CHECK(cdf.empirical(s.back()) == 1.0);
}

TEST_CASE("default tail parameters") {
  const TailDefaults d = default_tail_parameters(250000);
  CHECK(d.q == doctest::Approx(400.0 / 250000));
  CHECK(d.p == doctest::Approx(5.0 / 250000));
  CHECK(default_tail_parameters(1000).q == 0.1);
}

TEST_CASE("fit errors") {
  auto err = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  CHECK(err([] { fit_reference_cdf(testing::random_vector(50, 1), 0.01, 0.01, 0.001); }) ==
        ErrorCode::InsufficientTail);
  CHECK(err([] { fit_reference_cdf(std::vector<double>(1000, 1.0), 0.1, 0.1, 0.01); }) ==
        ErrorCode::DegenerateTail);
  CHECK_THROWS_AS(fit_reference_cdf(testing::random_vector(1000, 1), 0.6, 0.1, 0.01), Error);
  CHECK_THROWS_AS(fit_reference_cdf(testing::random_vector(1000, 1), 0.1, 0.1, 0.2), Error);
}

TEST_CASE("serialization round-trips bit-exactly") {
  const ReferenceCdf cdf = normal_cdf(5000, 7, 0.05, 0.001);
  const auto bytes = serialize_reference_cdf(cdf);
  const ReferenceCdf back = deserialize_reference_cdf(bytes);
  CHECK(back == cdf);
  CHECK(serialize_reference_cdf(back) == bytes);
  auto cut = bytes;
  cut.pop_back();
  CHECK_THROWS_AS(deserialize_reference_cdf(cut), Error);
}
