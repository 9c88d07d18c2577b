#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace stsmon {

// Empirical cdf of in-control residuals with exponential tails patched in
// below r_p and above r_{1-p}, so that 0 < cdf(r) < 1 for every finite r.
class ReferenceCdf {
 public:
  ReferenceCdf() = default;

  // Rebuilds a cdf from persisted parameters (no refitting).
  static ReferenceCdf from_parts(std::vector<double> sorted, double q_lower, double q_upper,
                                 double p, double lambda_lower, double lambda_upper);

  double operator()(double r) const noexcept { return eval(r); }
  double eval(double r) const noexcept;
  // ln cdf(r) and ln(1 - cdf(r)), evaluated in closed form in the tails so
  // that extreme residuals do not underflow.
  double log_cdf(double r) const noexcept;
  double log_survival(double r) const noexcept;
  // Empirical F(r) = #{x <= r} / count without patching.
  double empirical(double r) const noexcept;

  std::span<const double> sorted() const noexcept { return sorted_; }
  std::size_t count() const noexcept { return sorted_.size(); }
  double q_lower() const noexcept { return q_lower_; }
  double q_upper() const noexcept { return q_upper_; }
  double p() const noexcept { return p_; }
  double lambda_lower() const noexcept { return lambda_lower_; }
  double lambda_upper() const noexcept { return lambda_upper_; }
  double r_p() const noexcept { return r_p_; }
  double r_1mp() const noexcept { return r_1mp_; }
  double r_ql() const noexcept { return r_ql_; }
  double r_1mqu() const noexcept { return r_1mqu_; }

  friend bool operator==(const ReferenceCdf&, const ReferenceCdf&) = default;

 private:
  friend ReferenceCdf fit_reference_cdf(std::vector<double>, double, double, double);
  void set_quantiles();

  std::vector<double> sorted_;
  double q_lower_ = 0, q_upper_ = 0, p_ = 0;
  double lambda_lower_ = 0, lambda_upper_ = 0;
  double r_p_ = 0, r_1mp_ = 0, r_ql_ = 0, r_1mqu_ = 0;
};

// Tail rates are the exponential MLEs: lambda_l = r_ql - mean{r <= r_ql},
// lambda_u = mean{r >= r_1mqu} - r_1mqu.
ReferenceCdf fit_reference_cdf(std::vector<double> residuals, double q_lower, double q_upper,
                               double p);

struct TailDefaults {
  double q;
  double p;
};
// q = 400/M (about 400 points per tail, capped at 0.1) and p = 5/M.
TailDefaults default_tail_parameters(std::size_t residual_count);

std::vector<std::uint8_t> serialize_reference_cdf(const ReferenceCdf& cdf);
ReferenceCdf deserialize_reference_cdf(std::span<const std::uint8_t> bytes);

}  // namespace stsmon
