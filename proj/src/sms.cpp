#include "stsmon/sms.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "stsmon/error.hpp"
#include "stsmon/file_io.hpp"

namespace stsmon {

std::string_view to_string(SmsKind kind) {
  switch (kind) {
    case SmsKind::AD: return "ad";
    case SmsKind::BP: return "bp";
    case SmsKind::EPWMA: return "epwma";
    case SmsKind::EPWMV: return "epwmv";
  }
  return "?";
}

SmsKind parse_sms_kind(std::string_view text) {
  std::string s(text);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "ad") return SmsKind::AD;
  if (s == "bp") return SmsKind::BP;
  if (s == "epwma") return SmsKind::EPWMA;
  if (s == "epwmv") return SmsKind::EPWMV;
  fail(ErrorCode::InvalidArgument, "unknown statistic '" + s + "' (expected ad, bp, epwma, epwmv)");
}

void SmsConfig::validate() const {
  if (w < 3 || w % 2 == 0) {
    fail(ErrorCode::InvalidArgument, "window width w must be odd and >= 3, got " + std::to_string(w));
  }
}

double kernel_weight(int h, int m, int w) {
  const double radius = (w + 1) / 2.0;
  const double d2 = static_cast<double>(h) * h + static_cast<double>(m) * m;
  const double r2 = radius * radius;
  if (d2 > r2) return 0.0;
  return 0.75 * (1.0 - d2 / r2);
}

DiskKernel make_kernel(int w) {
  DiskKernel k;
  k.radius = (w + 1) / 2;
  for (int h = -k.radius; h <= k.radius; ++h) {
    for (int m = -k.radius; m <= k.radius; ++m) {
      const double v = kernel_weight(h, m, w);
      if (v > 0.0) {
        k.points.push_back({h, m, v});
        k.total += v;
      }
    }
  }
  return k;
}

namespace detail {

void kernel_filter(const GreyImage& src, std::size_t r0, std::size_t c0,
                   std::span<const KernelPoint> kernel, GreyImage& out) {
  const auto rows = static_cast<std::ptrdiff_t>(out.rows());
  const std::size_t cols = out.cols();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t rr = 0; rr < rows; ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    double* o = out.pixels().data() + r * cols;
    std::fill(o, o + cols, 0.0);
    for (const auto& k : kernel) {
      const double* s = src.row_ptr(static_cast<std::size_t>(static_cast<std::ptrdiff_t>(r0 + r) - k.h)) +
                        (static_cast<std::ptrdiff_t>(c0) - k.m);
      const double wgt = k.weight;
      for (std::size_t c = 0; c < cols; ++c) o[c] += wgt * s[c];
    }
  }
}

}  // namespace detail

double anderson_darling(std::span<const double> window, const ReferenceCdf& cdf) {
  if (window.empty()) fail(ErrorCode::InvalidArgument, "empty window");
  std::vector<double> x(window.begin(), window.end());
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  const double nd = static_cast<double>(n);
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    sum += (2.0 * static_cast<double>(k) + 1.0) / nd *
           (cdf.log_cdf(x[k]) + cdf.log_survival(x[n - 1 - k]));
  }
  return -nd - sum;
}

namespace {

void require_window(const GreyImage& surface, std::size_t need, const SmsConfig& cfg) {
  if (surface.rows() < need || surface.cols() < need) {
    fail(ErrorCode::WindowTooLarge,
         std::string(to_string(cfg.kind)) + " window w=" + std::to_string(cfg.w) + " needs at least " +
             std::to_string(need) + "x" + std::to_string(need) + " pixels, surface is " +
             std::to_string(surface.rows()) + "x" + std::to_string(surface.cols()));
  }
}

// Maintains each row of windows as a sorted list of image-wide ranks; sliding
// one column removes w ranks and merges in w new ones.
class SortedWindowScan {
 public:
  SortedWindowScan(const std::vector<std::uint32_t>& rank, std::size_t cols, std::size_t w)
      : rank_(rank), cols_(cols), w_(w) {
    window_.reserve(w * w);
    next_.reserve(w * w);
    outgoing_.resize(w);
    incoming_.resize(w);
  }

  const std::vector<std::uint32_t>& start(std::size_t top) {
    window_.clear();
    for (std::size_t r = top; r < top + w_; ++r) {
      for (std::size_t c = 0; c < w_; ++c) window_.push_back(rank_[r * cols_ + c]);
    }
    std::sort(window_.begin(), window_.end());
    top_ = top;
    left_ = 0;
    return window_;
  }

  const std::vector<std::uint32_t>& slide() {
    for (std::size_t i = 0; i < w_; ++i) {
      outgoing_[i] = rank_[(top_ + i) * cols_ + left_];
      incoming_[i] = rank_[(top_ + i) * cols_ + left_ + w_];
    }
    std::sort(outgoing_.begin(), outgoing_.end());
    std::sort(incoming_.begin(), incoming_.end());
    next_.clear();
    std::size_t o = 0;
    std::size_t j = 0;
    for (std::uint32_t x : window_) {
      if (o < w_ && x == outgoing_[o]) {
        ++o;
        continue;
      }
      while (j < w_ && incoming_[j] < x) next_.push_back(incoming_[j++]);
      next_.push_back(x);
    }
    while (j < w_) next_.push_back(incoming_[j++]);
    window_.swap(next_);
    ++left_;
    return window_;
  }

 private:
  const std::vector<std::uint32_t>& rank_;
  std::size_t cols_;
  std::size_t w_;
  std::size_t top_ = 0;
  std::size_t left_ = 0;
  std::vector<std::uint32_t> window_, next_, outgoing_, incoming_;
};

}  // namespace

SmsImage ad_sms(const ResidualImage& residuals, const ReferenceCdf& cdf, const SmsConfig& cfg) {
  cfg.validate();
  if (cfg.kind != SmsKind::AD) fail(ErrorCode::ConfigMismatch, "ad_sms called with a non-AD config");
  const GreyImage& res = residuals.values;
  const auto w = static_cast<std::size_t>(cfg.w);
  require_window(res, w, cfg);
  const std::size_t half = (w - 1) / 2;
  const std::size_t n = w * w;
  const std::size_t total = res.size();

  // Ties are broken by position; tied values share log terms, so the
  // statistic does not depend on the tie order.
  std::vector<std::uint32_t> order(total);
  std::iota(order.begin(), order.end(), 0u);
  const auto px = res.pixels();
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return px[a] < px[b]; });
  std::vector<std::uint32_t> rank(total);
  std::vector<double> log_lo(total), log_hi(total);
  for (std::size_t k = 0; k < total; ++k) {
    rank[order[k]] = static_cast<std::uint32_t>(k);
    log_lo[k] = cdf.log_cdf(px[order[k]]);
    log_hi[k] = cdf.log_survival(px[order[k]]);
  }
  std::vector<double> coef(n);
  const double nd = static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) coef[k] = (2.0 * static_cast<double>(k) + 1.0) / nd;

  SmsImage out;
  out.kind = SmsKind::AD;
  out.w = cfg.w;
  out.values = GreyImage(res.rows() - w + 1, res.cols() - w + 1);
  out.margin_top = out.margin_bottom = out.margin_left = out.margin_right = half;
  out.source_offset_row = residuals.offset_row() + half;
  out.source_offset_col = residuals.offset_col() + half;

  const auto out_rows = static_cast<std::ptrdiff_t>(out.values.rows());
  const std::size_t out_cols = out.values.cols();
#pragma omp parallel
  {
    SortedWindowScan scan(rank, res.cols(), w);
#pragma omp for schedule(static)
    for (std::ptrdiff_t rr = 0; rr < out_rows; ++rr) {
      const auto r = static_cast<std::size_t>(rr);
      for (std::size_t c = 0; c < out_cols; ++c) {
        const auto& win = c == 0 ? scan.start(r) : scan.slide();
        double sum = 0.0;
        for (std::size_t k = 0; k < n; ++k) sum += coef[k] * (log_lo[win[k]] + log_hi[win[n - 1 - k]]);
        out.values(r, c) = -nd - sum;
      }
    }
  }
  return out;
}

SmsImage bp_sms(const ResidualImage& residuals, const SmsConfig& cfg) {
  cfg.validate();
  if (cfg.kind != SmsKind::BP) fail(ErrorCode::ConfigMismatch, "bp_sms called with a non-BP config");
  const GreyImage& res = residuals.values;
  const auto w = static_cast<std::size_t>(cfg.w);
  require_window(res, 2 * w + 1, cfg);
  const DiskKernel kernel = make_kernel(cfg.w);
  const int half = (cfg.w - 1) / 2;
  int reach = 0;
  for (const auto& k : kernel.points) reach = std::max({reach, std::abs(k.h), std::abs(k.m)});

  const auto H = static_cast<std::ptrdiff_t>(res.rows());
  const auto W = static_cast<std::ptrdiff_t>(res.cols());
  const auto wi = static_cast<std::ptrdiff_t>(w);
  const std::ptrdiff_t v_r0 = wi, v_r1 = H - wi - 1, v_c0 = wi, v_c1 = W - wi - 1;

  SmsImage out;
  out.kind = SmsKind::BP;
  out.w = cfg.w;
  out.values = GreyImage(static_cast<std::size_t>(v_r1 - v_r0 + 1), static_cast<std::size_t>(v_c1 - v_c0 + 1));
  out.margin_top = out.margin_bottom = out.margin_left = out.margin_right = w;
  out.source_offset_row = residuals.offset_row() + w;
  out.source_offset_col = residuals.offset_col() + w;

  // Cov(i, i+d) is the kernel smoothing of P_d(z) = r(z) r(z+d) evaluated at
  // i, and Cov(i, i-d) equals the same smoothed surface at i-d. Offsets are
  // therefore visited over a half plane only.
  std::vector<std::pair<int, int>> offsets{{0, 0}};
  for (int a = 0; a <= half; ++a) {
    for (int b = -half; b <= half; ++b) {
      if (a > 0 || b > 0) offsets.emplace_back(a, b);
    }
  }

  const auto out_rows = static_cast<std::ptrdiff_t>(out.values.rows());
  const std::size_t out_cols = out.values.cols();
  for (const auto& [a, b] : offsets) {
    const std::ptrdiff_t b_r0 = v_r0 - std::max(a, 0), b_r1 = v_r1 - std::min(a, 0);
    const std::ptrdiff_t b_c0 = v_c0 - std::max(b, 0), b_c1 = v_c1 - std::min(b, 0);
    const std::ptrdiff_t p_r0 = b_r0 - reach, p_c0 = b_c0 - reach;
    const auto p_rows = static_cast<std::size_t>(b_r1 - b_r0 + 1 + 2 * reach);
    const auto p_cols = static_cast<std::size_t>(b_c1 - b_c0 + 1 + 2 * reach);
    GreyImage prod(p_rows, p_cols);
    for (std::size_t r = 0; r < p_rows; ++r) {
      const double* here = res.row_ptr(static_cast<std::size_t>(p_r0) + r) + p_c0;
      const double* there = res.row_ptr(static_cast<std::size_t>(p_r0 + a) + r) + p_c0 + b;
      double* o = prod.pixels().data() + r * p_cols;
      for (std::size_t c = 0; c < p_cols; ++c) o[c] = here[c] * there[c];
    }
    GreyImage cov(static_cast<std::size_t>(b_r1 - b_r0 + 1), static_cast<std::size_t>(b_c1 - b_c0 + 1));
    detail::kernel_filter(prod, static_cast<std::size_t>(reach), static_cast<std::size_t>(reach),
                          kernel.points, cov);
    for (double& v : cov.pixels()) v /= kernel.total;

    const bool self = a == 0 && b == 0;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t rr = 0; rr < out_rows; ++rr) {
      const auto r = static_cast<std::size_t>(rr);
      double* t = out.values.pixels().data() + r * out_cols;
      const double* fwd = cov.row_ptr(static_cast<std::size_t>(v_r0 + rr - b_r0)) + (v_c0 - b_c0);
      const double* back = cov.row_ptr(static_cast<std::size_t>(v_r0 + rr - a - b_r0)) + (v_c0 - b - b_c0);
      if (self) {
        for (std::size_t c = 0; c < out_cols; ++c) t[c] += fwd[c] * fwd[c];
      } else {
        for (std::size_t c = 0; c < out_cols; ++c) t[c] += fwd[c] * fwd[c] + back[c] * back[c];
      }
    }
  }
  return out;
}

double image_statistic(const SmsImage& sms) {
  if (sms.values.empty()) fail(ErrorCode::EmptyValidRegion, "statistic image has no valid pixels");
  const auto px = sms.values.pixels();
  return *std::max_element(px.begin(), px.end());
}

double image_minimum(const SmsImage& sms) {
  if (sms.values.empty()) fail(ErrorCode::EmptyValidRegion, "statistic image has no valid pixels");
  const auto px = sms.values.pixels();
  return *std::min_element(px.begin(), px.end());
}

std::string sms_header_json(const SmsImage& sms) {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["kind"] = to_string(sms.kind);
  j["w"] = sms.w;
  j["rows"] = sms.values.rows();
  j["cols"] = sms.values.cols();
  j["margins"] = {{"top", sms.margin_top},
                  {"bottom", sms.margin_bottom},
                  {"left", sms.margin_left},
                  {"right", sms.margin_right}};
  j["source_offset"] = {{"row", sms.source_offset_row}, {"col", sms.source_offset_col}};
  j["dtype"] = "float64-le";
  j["order"] = "row-major";
  return j.dump(2) + "\n";
}

std::vector<std::uint8_t> sms_grid_bytes(const SmsImage& sms) {
  ByteWriter w;
  for (double v : sms.values.pixels()) w.f64(v);
  return w.take();
}

}  // namespace stsmon
