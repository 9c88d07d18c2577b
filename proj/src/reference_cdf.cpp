#include "stsmon/reference_cdf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "stsmon/error.hpp"
#include "stsmon/file_io.hpp"
#include "stsmon/quantile.hpp"

namespace stsmon {
namespace {

constexpr double kTiny = std::numeric_limits<double>::denorm_min();
const double kBelowOne = std::nextafter(1.0, 0.0);

}  // namespace

void ReferenceCdf::set_quantiles() {
  r_ql_ = quantile_sorted(sorted_, q_lower_);
  r_1mqu_ = quantile_sorted(sorted_, 1.0 - q_upper_);
  r_p_ = quantile_sorted(sorted_, p_);
  r_1mp_ = quantile_sorted(sorted_, 1.0 - p_);
}

ReferenceCdf fit_reference_cdf(std::vector<double> residuals, double q_lower, double q_upper,
                               double p) {
  if (!(q_lower > 0 && q_lower < 0.5 && q_upper > 0 && q_upper < 0.5)) {
    fail(ErrorCode::InvalidArgument, "tail probabilities must lie in (0, 0.5)");
  }
  if (!(p > 0 && p <= std::min(q_lower, q_upper))) {
    fail(ErrorCode::InvalidArgument, "patch probability p must satisfy 0 < p <= min(q_l, q_u)");
  }
  const double needed = 1.0 / std::min(q_lower, q_upper);
  if (static_cast<double>(residuals.size()) < needed) {
    fail(ErrorCode::InsufficientTail,
         std::to_string(residuals.size()) + " residuals leave an empty tail; need at least " +
             std::to_string(static_cast<std::size_t>(std::ceil(needed))));
  }
  for (double r : residuals) {
    if (!std::isfinite(r)) fail(ErrorCode::InvalidArgument, "non-finite residual");
  }
  ReferenceCdf cdf;
  cdf.sorted_ = std::move(residuals);
  std::sort(cdf.sorted_.begin(), cdf.sorted_.end());
  cdf.q_lower_ = q_lower;
  cdf.q_upper_ = q_upper;
  cdf.p_ = p;
  cdf.set_quantiles();

  const auto& s = cdf.sorted_;
  const auto lower_end = std::upper_bound(s.begin(), s.end(), cdf.r_ql_);
  double lower_sum = 0.0;
  for (auto it = s.begin(); it != lower_end; ++it) lower_sum += *it;
  const double lower_mean = lower_sum / static_cast<double>(lower_end - s.begin());
  const auto upper_begin = std::lower_bound(s.begin(), s.end(), cdf.r_1mqu_);
  double upper_sum = 0.0;
  for (auto it = upper_begin; it != s.end(); ++it) upper_sum += *it;
  const double upper_mean = upper_sum / static_cast<double>(s.end() - upper_begin);

  cdf.lambda_lower_ = cdf.r_ql_ - lower_mean;
  cdf.lambda_upper_ = upper_mean - cdf.r_1mqu_;
  if (!(cdf.lambda_lower_ > 0.0) || !(cdf.lambda_upper_ > 0.0)) {
    fail(ErrorCode::DegenerateTail, "a residual tail has zero spread; exponential rate is 0");
  }
  return cdf;
}

ReferenceCdf ReferenceCdf::from_parts(std::vector<double> sorted, double q_lower, double q_upper,
                                      double p, double lambda_lower, double lambda_upper) {
  if (sorted.empty() || !std::is_sorted(sorted.begin(), sorted.end())) {
    fail(ErrorCode::FormatError, "reference residuals must be non-empty and ascending");
  }
  if (!(lambda_lower > 0 && lambda_upper > 0 && p > 0 && p <= std::min(q_lower, q_upper))) {
    fail(ErrorCode::FormatError, "invalid reference cdf parameters");
  }
  ReferenceCdf cdf;
  cdf.sorted_ = std::move(sorted);
  cdf.q_lower_ = q_lower;
  cdf.q_upper_ = q_upper;
  cdf.p_ = p;
  cdf.lambda_lower_ = lambda_lower;
  cdf.lambda_upper_ = lambda_upper;
  cdf.set_quantiles();
  return cdf;
}

double ReferenceCdf::empirical(double r) const noexcept {
  const auto it = std::upper_bound(sorted_.begin(), sorted_.end(), r);
  return static_cast<double>(it - sorted_.begin()) / static_cast<double>(sorted_.size());
}

double ReferenceCdf::eval(double r) const noexcept {
  double v;
  if (r <= r_p_) {
    v = p_ * std::exp((r - r_p_) / lambda_lower_);
  } else if (r >= r_1mp_) {
    v = 1.0 - p_ * std::exp(-(r - r_1mp_) / lambda_upper_);
  } else {
    v = std::clamp(empirical(r), p_, 1.0 - p_);
  }
  return std::clamp(v, kTiny, kBelowOne);
}

double ReferenceCdf::log_cdf(double r) const noexcept {
  if (r <= r_p_) return std::log(p_) + (r - r_p_) / lambda_lower_;
  if (r >= r_1mp_) return std::log1p(-p_ * std::exp(-(r - r_1mp_) / lambda_upper_));
  return std::log(std::clamp(empirical(r), p_, 1.0 - p_));
}

double ReferenceCdf::log_survival(double r) const noexcept {
  if (r >= r_1mp_) return std::log(p_) - (r - r_1mp_) / lambda_upper_;
  if (r <= r_p_) return std::log1p(-p_ * std::exp((r - r_p_) / lambda_lower_));
  return std::log1p(-std::clamp(empirical(r), p_, 1.0 - p_));
}

TailDefaults default_tail_parameters(std::size_t residual_count) {
  if (residual_count == 0) fail(ErrorCode::InsufficientData, "no residuals");
  const double m = static_cast<double>(residual_count);
  const double q = std::min(400.0 / m, 0.1);
  const double p = std::min(5.0 / m, q);
  return {q, p};
}

namespace {
constexpr char kCdfMagic[8] = {'S', 'T', 'S', 'R', 'C', 'D', 'F', '1'};
}

std::vector<std::uint8_t> serialize_reference_cdf(const ReferenceCdf& cdf) {
  ByteWriter w;
  w.text(std::string_view(kCdfMagic, 8));
  w.f64(cdf.q_lower());
  w.f64(cdf.q_upper());
  w.f64(cdf.p());
  w.f64(cdf.lambda_lower());
  w.f64(cdf.lambda_upper());
  w.f64(cdf.r_p());
  w.f64(cdf.r_1mp());
  w.u64(cdf.count());
  for (double v : cdf.sorted()) w.f64(v);
  return w.take();
}

ReferenceCdf deserialize_reference_cdf(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.bytes(8);
  if (!std::equal(magic.begin(), magic.end(), kCdfMagic)) {
    fail(ErrorCode::FormatError, "not a reference cdf block");
  }
  const double ql = r.f64(), qu = r.f64(), p = r.f64();
  const double ll = r.f64(), lu = r.f64();
  const double rp = r.f64(), r1mp = r.f64();
  const std::uint64_t n = r.u64();
  if (r.remaining() != n * 8) fail(ErrorCode::FormatError, "reference cdf length mismatch");
  std::vector<double> sorted(n);
  for (auto& v : sorted) v = r.f64();
  ReferenceCdf cdf = ReferenceCdf::from_parts(std::move(sorted), ql, qu, p, ll, lu);
  if (cdf.r_p() != rp || cdf.r_1mp() != r1mp) {
    fail(ErrorCode::FormatError, "stored patch quantiles disagree with the residual sample");
  }
  return cdf;
}

}  // namespace stsmon
