#include "stsmon/baselines.hpp"

#include <string>

#include "stsmon/error.hpp"

namespace stsmon {
namespace {

SmsImage prepare(const GreyImage& img, const SmsConfig& cfg, SmsKind kind) {
  cfg.validate();
  if (cfg.kind != kind) fail(ErrorCode::ConfigMismatch, "baseline called with a mismatched config");
  const auto need = static_cast<std::size_t>(cfg.w + 2);
  if (img.rows() < need || img.cols() < need) {
    fail(ErrorCode::WindowTooLarge, std::string(to_string(kind)) + " window w=" + std::to_string(cfg.w) +
                                        " needs at least " + std::to_string(need) + "x" +
                                        std::to_string(need) + " pixels");
  }
  const auto margin = static_cast<std::size_t>((cfg.w + 1) / 2);
  SmsImage out;
  out.kind = kind;
  out.w = cfg.w;
  out.values = GreyImage(img.rows() - 2 * margin, img.cols() - 2 * margin);
  out.margin_top = out.margin_bottom = out.margin_left = out.margin_right = margin;
  out.source_offset_row = out.source_offset_col = margin;
  return out;
}

}  // namespace

SmsImage epwma_sms(const GreyImage& img, const SmsConfig& cfg) {
  SmsImage out = prepare(img, cfg, SmsKind::EPWMA);
  const DiskKernel kernel = make_kernel(cfg.w);
  detail::kernel_filter(img, out.margin_top, out.margin_left, kernel.points, out.values);
  for (double& v : out.values.pixels()) v /= kernel.total;
  return out;
}

SmsImage epwmv_sms(const GreyImage& img, const SmsConfig& cfg) {
  SmsImage out = prepare(img, cfg, SmsKind::EPWMV);
  const DiskKernel kernel = make_kernel(cfg.w);

  std::vector<KernelPoint> window;
  if (cfg.epwmv_disk_mean) {
    const long r2 = static_cast<long>(kernel.radius) * kernel.radius;
    for (int h = -kernel.radius; h <= kernel.radius; ++h) {
      for (int m = -kernel.radius; m <= kernel.radius; ++m) {
        if (static_cast<long>(h) * h + static_cast<long>(m) * m <= r2) window.push_back({h, m, 1.0});
      }
    }
  } else {
    const int half = (cfg.w - 1) / 2;
    for (int h = -half; h <= half; ++h) {
      for (int m = -half; m <= half; ++m) window.push_back({h, m, 1.0});
    }
  }
  GreyImage mean(out.values.rows(), out.values.cols());
  detail::kernel_filter(img, out.margin_top, out.margin_left, window, mean);
  const double count = static_cast<double>(window.size());
  for (double& v : mean.pixels()) v /= count;

  const auto rows = static_cast<std::ptrdiff_t>(out.values.rows());
  const std::size_t cols = out.values.cols();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t rr = 0; rr < rows; ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    for (std::size_t c = 0; c < cols; ++c) {
      const double centre = mean(r, c);
      const std::size_t sr = r + out.margin_top;
      const std::size_t sc = c + out.margin_left;
      double acc = 0.0;
      for (const auto& k : kernel.points) {
        const double d = img(static_cast<std::size_t>(static_cast<std::ptrdiff_t>(sr) - k.h),
                             static_cast<std::size_t>(static_cast<std::ptrdiff_t>(sc) - k.m)) -
                         centre;
        acc += k.weight * d * d;
      }
      out.values(r, c) = acc / kernel.total;
    }
  }
  return out;
}

}  // namespace stsmon
