#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stsmon/image.hpp"
#include "stsmon/reference_cdf.hpp"
#include "stsmon/tree.hpp"

namespace stsmon {

enum class SmsKind { AD, BP, EPWMA, EPWMV };

std::string_view to_string(SmsKind kind);
SmsKind parse_sms_kind(std::string_view text);

struct SmsConfig {
  SmsKind kind = SmsKind::BP;
  int w = 15;
  // EPWMV only: the unweighted window mean runs over the kernel disk
  // (h^2 + m^2 <= ((w+1)/2)^2) when true, over the w x w square otherwise.
  bool epwmv_disk_mean = true;

  void validate() const;
  friend bool operator==(const SmsConfig&, const SmsConfig&) = default;
};

// Per-pixel statistic over the valid region of its input surface. Margins
// are measured on that surface (residual image for AD/BP, the image itself
// for the baselines); source_offset_* locate values(0,0) in the original
// image.
struct SmsImage {
  SmsKind kind = SmsKind::BP;
  int w = 0;
  GreyImage values;
  std::size_t margin_top = 0, margin_bottom = 0, margin_left = 0, margin_right = 0;
  std::size_t source_offset_row = 0, source_offset_col = 0;
};

// Epanechnikov weight (3/4)(1 - (h^2+m^2)/((w+1)/2)^2) inside the disk, else 0.
double kernel_weight(int h, int m, int w);

struct KernelPoint {
  int h;
  int m;
  double weight;
};

// Nonzero kernel entries in row-major (h, then m) order, plus their sum.
struct DiskKernel {
  int radius = 0;  // (w+1)/2
  std::vector<KernelPoint> points;
  double total = 0.0;
};
DiskKernel make_kernel(int w);

// One-sample Anderson-Darling statistic of `window` against `cdf`.
double anderson_darling(std::span<const double> window, const ReferenceCdf& cdf);

SmsImage ad_sms(const ResidualImage& residuals, const ReferenceCdf& cdf, const SmsConfig& cfg);
SmsImage bp_sms(const ResidualImage& residuals, const SmsConfig& cfg);

// Maximum over the valid region.
double image_statistic(const SmsImage& sms);
// Minimum over the valid region (two-sided baseline charts).
double image_minimum(const SmsImage& sms);

// JSON header (dims, margins, kind, w) and raw little-endian float64 grid.
std::string sms_header_json(const SmsImage& sms);
std::vector<std::uint8_t> sms_grid_bytes(const SmsImage& sms);

namespace detail {
// Accumulates out(r, c) = sum_k weight_k * src(r0 + r - h_k, c0 + c - m_k)
// for r < out.rows(), c < out.cols(), where (r0, c0) is the position of
// out(0,0) in src. Caller guarantees all reads stay inside src.
void kernel_filter(const GreyImage& src, std::size_t r0, std::size_t c0,
                   std::span<const KernelPoint> kernel, GreyImage& out);
}  // namespace detail

}  // namespace stsmon
