#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stsmon/image.hpp"
#include "stsmon/reference_cdf.hpp"
#include "stsmon/sms.hpp"
#include "stsmon/tree.hpp"

namespace stsmon {

// Lazily produced Phase I / Phase II images. `load` must be safe to call
// concurrently for distinct indices.
struct ImageSource {
  std::size_t count = 0;
  std::function<GreyImage(std::size_t)> load;

  static ImageSource from_images(std::vector<GreyImage> images);
};

enum class ReferenceSource { PhaseI, Explicit };

struct CalibrationOptions {
  double alpha = 0.003;
  int n_d = 10;
  // Alternative rule: place the limit so exactly k Phase I statistics exceed it.
  std::optional<int> exceedances;
  ReferenceSource reference = ReferenceSource::PhaseI;
  // Residuals used to fit the A-D reference cdf when reference == Explicit.
  std::vector<double> explicit_reference;
  // Tail-fit overrides; defaults follow default_tail_parameters.
  std::optional<double> tail_q;
  std::optional<double> patch_p;

  void validate() const;
};

// Everything needed to score new images: the model, the statistic, its
// reference cdf (A-D) and the Phase I limits.
struct CalibrationBundle {
  TrainedModel model;
  std::uint64_t model_digest = 0;
  SmsConfig sms;
  std::optional<ReferenceCdf> reference;
  double alpha = 0.003;
  int n_d = 10;
  std::optional<int> exceedances;

  // AD/BP: upper control limit on S = max SMS. Baselines: half-width h of
  // the symmetric limits (LCL, UCL) = (center - h, center + h).
  double control_limit = 0.0;
  double center_line = 0.0;
  double lcl = 0.0;
  double ucl = 0.0;
  double diag_threshold = 0.0;
  // Diagnostic thresholds for n_D = 1, 2, ..., size() (at most kDiagTableSize).
  std::vector<double> diag_table;
  std::size_t m_sms = 0;
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;

  // Per Phase I image, in input order: max SMS, and min SMS for baselines.
  std::vector<double> phase1_max;
  std::vector<double> phase1_min;

  static constexpr int kDiagTableSize = 100;

  // Threshold for another n_D from the stored table; the calibrated n_D is
  // always available.
  double diag_threshold_for(int n_d) const;

  bool two_sided() const noexcept {
    return sms.kind == SmsKind::EPWMA || sms.kind == SmsKind::EPWMV;
  }
  // Charted value for Phase I image j: S_j for AD/BP, the deviation from the
  // center line for baselines.
  std::vector<double> phase1_charted() const;
  std::vector<double> phase1_sorted() const;
};

// Calibrates several statistics at once, sharing residual computation.
std::vector<CalibrationBundle> calibrate_many(const ImageSource& phase1, const TrainedModel& model,
                                              std::span<const SmsConfig> configs,
                                              const CalibrationOptions& options);

CalibrationBundle calibrate(const ImageSource& phase1, const TrainedModel& model, const SmsConfig& cfg,
                            const CalibrationOptions& options);

// Binary image over the SMS valid region; black where the statistic exceeds
// the diagnostic threshold (for baselines: where |value - center| does).
struct DiagnosticImage {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> black;
  std::size_t source_offset_row = 0;
  std::size_t source_offset_col = 0;

  std::size_t black_count() const;
  // Full source-size rendering with white margins.
  std::vector<std::uint8_t> full_size(std::size_t src_rows, std::size_t src_cols) const;
};

DiagnosticImage diagnostic_image(const SmsImage& sms, const CalibrationBundle& bundle);

struct MonitorReport {
  double s = 0.0;      // max SMS
  double s_min = 0.0;  // min SMS (reported for baselines)
  bool alarmed = false;
  SmsImage sms;
  std::optional<DiagnosticImage> diagnostic;
};

// Statistic surface for an already standardized image.
SmsImage compute_sms(const GreyImage& standardized, const RegressionTree& tree, const SmsConfig& cfg,
                     const ReferenceCdf* reference);

bool is_alarm(const CalibrationBundle& bundle, double s_max, double s_min);

MonitorReport monitor_image(const GreyImage& raw, const CalibrationBundle& bundle,
                            bool force_diagnostic = false);

// Bundle file: see docs/FORMATS.md.
std::vector<std::uint8_t> serialize_bundle(const CalibrationBundle& bundle);
CalibrationBundle deserialize_bundle(std::span<const std::uint8_t> bytes);
std::string bundle_manifest_json(const CalibrationBundle& bundle);

std::string report_json(const MonitorReport& report, const CalibrationBundle& bundle,
                        const std::string& diag_path);

}  // namespace stsmon
