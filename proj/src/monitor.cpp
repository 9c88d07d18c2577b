#include "stsmon/monitor.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <queue>
#include <string>

#include "stsmon/baselines.hpp"
#include "stsmon/error.hpp"
#include "stsmon/file_io.hpp"
#include "stsmon/parallel.hpp"
#include "stsmon/quantile.hpp"

namespace stsmon {

using json = nlohmann::ordered_json;

ImageSource ImageSource::from_images(std::vector<GreyImage> images) {
  auto shared = std::make_shared<const std::vector<GreyImage>>(std::move(images));
  return {shared->size(), [shared](std::size_t i) { return (*shared)[i]; }};
}

void CalibrationOptions::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
  if (n_d < 1) fail(ErrorCode::InvalidArgument, "n_D must be >= 1");
  if (exceedances && *exceedances < 0) fail(ErrorCode::InvalidArgument, "exceedance count must be >= 0");
  if (reference == ReferenceSource::Explicit && explicit_reference.empty()) {
    fail(ErrorCode::InvalidArgument, "explicit reference selected but no residuals supplied");
  }
}

namespace {

bool is_two_sided(SmsKind kind) { return kind == SmsKind::EPWMA || kind == SmsKind::EPWMV; }

// Baseline charts track sqrt(EPWMV) rather than the variance itself.
double charted(SmsKind kind, double v) {
  return kind == SmsKind::EPWMV ? std::sqrt(std::max(v, 0.0)) : v;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

// Keeps the `keep` largest (or smallest) values pushed so far.
class Extremes {
 public:
  Extremes(std::size_t keep, bool largest) : keep_(keep), largest_(largest) {}

  void push(double v) {
    const double key = largest_ ? v : -v;
    if (heap_.size() < keep_) {
      heap_.push(key);
    } else if (key > heap_.top()) {
      heap_.pop();
      heap_.push(key);
    }
  }

  std::vector<double> values() const {
    auto copy = heap_;
    std::vector<double> out;
    while (!copy.empty()) {
      out.push_back(largest_ ? copy.top() : -copy.top());
      copy.pop();
    }
    return out;
  }

 private:
  std::size_t keep_;
  bool largest_;
  std::priority_queue<double, std::vector<double>, std::greater<>> heap_;
};

// Pooled values at or above the (1 - n_d/m_sms) quantile of `total` values.
std::size_t keep_count(int n_d, std::size_t m_sms, std::size_t total) {
  return total - quantile_rank(1.0 - static_cast<double>(n_d) / static_cast<double>(m_sms), total) + 1;
}

int table_size(std::size_t m_sms) {
  return static_cast<int>(std::min<std::size_t>(CalibrationBundle::kDiagTableSize, m_sms - 1));
}

double control_limit_from(std::vector<double> charted_stats, const CalibrationOptions& opt) {
  std::sort(charted_stats.begin(), charted_stats.end());
  const std::size_t n = charted_stats.size();
  if (opt.exceedances) {
    const auto k = static_cast<std::size_t>(*opt.exceedances);
    if (k >= n) fail(ErrorCode::InvalidArgument, "exceedance count must be below the Phase I count");
    return charted_stats[n - k - 1];
  }
  return quantile_sorted(charted_stats, 1.0 - opt.alpha);
}

struct PerConfig {
  std::vector<double> max;
  std::vector<double> min;
  std::vector<double> charted_sum;
  std::unique_ptr<Extremes> top;
  std::unique_ptr<Extremes> bottom;
  std::vector<double> all;  // used instead of the heaps when keep is large
  std::size_t m_sms = 0;
  std::size_t keep = 0;  // largest keep over the thresholds tabulated
  bool store_all = false;
};

}  // namespace

double CalibrationBundle::diag_threshold_for(int nd) const {
  if (nd == n_d) return diag_threshold;
  if (nd < 1 || static_cast<std::size_t>(nd) > diag_table.size()) {
    fail(ErrorCode::InvalidArgument, "n_D override must lie in [1, " + std::to_string(diag_table.size()) +
                                         "] or equal the calibrated value " + std::to_string(n_d));
  }
  return diag_table[static_cast<std::size_t>(nd) - 1];
}

std::vector<double> CalibrationBundle::phase1_charted() const {
  std::vector<double> out(phase1_max.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    if (two_sided()) {
      out[j] = std::max(charted(sms.kind, phase1_max[j]) - center_line,
                        center_line - charted(sms.kind, phase1_min[j]));
    } else {
      out[j] = phase1_max[j];
    }
  }
  return out;
}

std::vector<double> CalibrationBundle::phase1_sorted() const {
  auto v = phase1_charted();
  std::sort(v.begin(), v.end());
  return v;
}

SmsImage compute_sms(const GreyImage& standardized, const RegressionTree& tree, const SmsConfig& cfg,
                     const ReferenceCdf* reference) {
  switch (cfg.kind) {
    case SmsKind::AD:
      if (!reference) fail(ErrorCode::ConfigMismatch, "A-D statistic requires a reference cdf");
      return ad_sms(residual_image(tree, standardized), *reference, cfg);
    case SmsKind::BP:
      return bp_sms(residual_image(tree, standardized), cfg);
    case SmsKind::EPWMA:
      return epwma_sms(standardized, cfg);
    case SmsKind::EPWMV:
      return epwmv_sms(standardized, cfg);
  }
  fail(ErrorCode::InvalidArgument, "unknown statistic kind");
}

std::vector<CalibrationBundle> calibrate_many(const ImageSource& phase1, const TrainedModel& model,
                                              std::span<const SmsConfig> configs,
                                              const CalibrationOptions& options) {
  options.validate();
  if (configs.empty()) fail(ErrorCode::InvalidArgument, "no statistics to calibrate");
  for (const auto& c : configs) c.validate();
  const std::size_t n = phase1.count;
  if (n == 0) fail(ErrorCode::InsufficientPhaseI, "no Phase I images");
  if (static_cast<double>(n) < std::ceil(1.0 / options.alpha)) {
    spdlog::warn("{} Phase I images is fewer than 1/alpha = {:.0f}; the control limit is the sample maximum",
                 n, std::ceil(1.0 / options.alpha));
  }
  const GreyImage first = phase1.load(0);
  const std::size_t rows = first.rows();
  const std::size_t cols = first.cols();
  auto checked_load = [&](std::size_t j) {
    GreyImage img = j == 0 ? first : phase1.load(j);
    if (img.rows() != rows || img.cols() != cols) {
      fail(ErrorCode::DimensionMismatch, "Phase I image " + std::to_string(j) + " is " +
                                             std::to_string(img.rows()) + "x" + std::to_string(img.cols()) +
                                             ", expected " + std::to_string(rows) + "x" +
                                             std::to_string(cols));
    }
    return standardize(img);
  };

  const bool need_ad = std::any_of(configs.begin(), configs.end(),
                                   [](const SmsConfig& c) { return c.kind == SmsKind::AD; });
  const bool need_residuals =
      std::any_of(configs.begin(), configs.end(),
                  [](const SmsConfig& c) { return c.kind == SmsKind::AD || c.kind == SmsKind::BP; });
  const RegressionTree& tree = model.tree;

  std::optional<ReferenceCdf> reference;
  if (need_ad) {
    std::vector<double> pooled;
    if (options.reference == ReferenceSource::Explicit) {
      pooled = options.explicit_reference;
    } else {
      const NeighborhoodSpec spec(tree.l());
      const std::size_t per = spec.interior_rows(rows) * spec.interior_cols(cols);
      if (per == 0) fail(ErrorCode::ImageTooSmall, "Phase I images too small for the model neighborhood");
      pooled.resize(n * per);
      parallel_for(n, [&](std::size_t j) {
        const ResidualImage res = residual_image(tree, checked_load(j));
        std::copy(res.values.pixels().begin(), res.values.pixels().end(),
                  pooled.begin() + static_cast<std::ptrdiff_t>(j * per));
      });
    }
    const TailDefaults tails = default_tail_parameters(pooled.size());
    const double q = options.tail_q.value_or(tails.q);
    const double p = options.patch_p.value_or(std::min(tails.p, q));
    reference = fit_reference_cdf(std::move(pooled), q, q, p);
  }

  std::vector<PerConfig> per(configs.size());
  for (auto& pc : per) {
    pc.max.resize(n);
    pc.min.resize(n);
    pc.charted_sum.resize(n);
  }
  std::mutex pool_mutex;

  parallel_for(n, [&](std::size_t j) {
    const GreyImage img = checked_load(j);
    std::optional<ResidualImage> res;
    if (need_residuals) res = residual_image(tree, img);
    for (std::size_t c = 0; c < configs.size(); ++c) {
      const SmsConfig& cfg = configs[c];
      SmsImage sms;
      switch (cfg.kind) {
        case SmsKind::AD: sms = ad_sms(*res, *reference, cfg); break;
        case SmsKind::BP: sms = bp_sms(*res, cfg); break;
        default: sms = compute_sms(img, tree, cfg, nullptr); break;
      }
      const auto values = sms.values.pixels();
      if (values.empty()) fail(ErrorCode::EmptyValidRegion, "Phase I image too small for the window");
      PerConfig& pc = per[c];
      pc.max[j] = image_statistic(sms);
      pc.min[j] = image_minimum(sms);
      double sum = 0.0;
      for (double v : values) sum += charted(cfg.kind, v);
      pc.charted_sum[j] = sum;

      std::lock_guard lock(pool_mutex);
      if (pc.m_sms == 0) {
        pc.m_sms = values.size();
        if (static_cast<std::size_t>(options.n_d) >= pc.m_sms) {
          fail(ErrorCode::InvalidArgument, "n_D must be smaller than the SMS count per image");
        }
        const std::size_t total = n * pc.m_sms;
        const int widest = std::max(options.n_d, table_size(pc.m_sms));
        pc.keep = keep_count(widest, pc.m_sms, total);
        pc.store_all = 2 * pc.keep >= total;
        if (!pc.store_all) {
          pc.top = std::make_unique<Extremes>(pc.keep, true);
          if (is_two_sided(cfg.kind)) pc.bottom = std::make_unique<Extremes>(pc.keep, false);
        }
      }
      for (double v : values) {
        const double x = charted(cfg.kind, v);
        if (pc.store_all) {
          pc.all.push_back(x);
        } else {
          pc.top->push(x);
          if (pc.bottom) pc.bottom->push(x);
        }
      }
    }
  });

  std::vector<CalibrationBundle> out;
  const std::uint64_t digest = fnv1a64(serialize_model(model));
  for (std::size_t c = 0; c < configs.size(); ++c) {
    const SmsConfig& cfg = configs[c];
    PerConfig& pc = per[c];
    CalibrationBundle b;
    b.model = model;
    b.model_digest = digest;
    b.sms = cfg;
    if (cfg.kind == SmsKind::AD) b.reference = reference;
    b.alpha = options.alpha;
    b.n_d = options.n_d;
    b.exceedances = options.exceedances;
    b.m_sms = pc.m_sms;
    b.image_rows = rows;
    b.image_cols = cols;
    b.phase1_max = pc.max;
    if (b.two_sided()) b.phase1_min = pc.min;

    std::vector<double> candidates = pc.store_all ? pc.all : pc.top->values();
    if (b.two_sided()) {
      double total = 0.0;
      for (double s : pc.charted_sum) total += s;
      b.center_line = total / static_cast<double>(n * pc.m_sms);
      if (pc.bottom) {
        auto low = pc.bottom->values();
        candidates.insert(candidates.end(), low.begin(), low.end());
      }
      for (double& v : candidates) v = std::abs(v - b.center_line);
    }
    // k-th largest of the pooled sample = the (1 - n_D/M_SMS) quantile.
    std::sort(candidates.begin(), candidates.end(), std::greater<>());
    const std::size_t total = n * pc.m_sms;
    for (int nd = 1; nd <= table_size(pc.m_sms); ++nd) {
      b.diag_table.push_back(candidates[keep_count(nd, pc.m_sms, total) - 1]);
    }
    b.diag_threshold = candidates[keep_count(options.n_d, pc.m_sms, total) - 1];

    b.control_limit = control_limit_from(b.phase1_charted(), options);
    if (b.two_sided()) {
      b.lcl = b.center_line - b.control_limit;
      b.ucl = b.center_line + b.control_limit;
    } else {
      b.lcl = -std::numeric_limits<double>::infinity();
      b.ucl = b.control_limit;
    }
    out.push_back(std::move(b));
  }
  return out;
}

CalibrationBundle calibrate(const ImageSource& phase1, const TrainedModel& model, const SmsConfig& cfg,
                            const CalibrationOptions& options) {
  auto bundles = calibrate_many(phase1, model, std::span<const SmsConfig>(&cfg, 1), options);
  return std::move(bundles.front());
}

std::size_t DiagnosticImage::black_count() const {
  return static_cast<std::size_t>(std::count(black.begin(), black.end(), std::uint8_t{1}));
}

std::vector<std::uint8_t> DiagnosticImage::full_size(std::size_t src_rows, std::size_t src_cols) const {
  if (source_offset_row + rows > src_rows || source_offset_col + cols > src_cols) {
    fail(ErrorCode::DimensionMismatch, "diagnostic image does not fit the source dimensions");
  }
  std::vector<std::uint8_t> out(src_rows * src_cols, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(black.begin() + static_cast<std::ptrdiff_t>(r * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>((r + source_offset_row) * src_cols + source_offset_col));
  }
  return out;
}

DiagnosticImage diagnostic_image(const SmsImage& sms, const CalibrationBundle& bundle) {
  if (sms.kind != bundle.sms.kind || sms.w != bundle.sms.w) {
    fail(ErrorCode::ConfigMismatch, "statistic image does not match the bundle's statistic/window");
  }
  DiagnosticImage d;
  d.rows = sms.values.rows();
  d.cols = sms.values.cols();
  d.source_offset_row = sms.source_offset_row;
  d.source_offset_col = sms.source_offset_col;
  d.black.resize(sms.values.size());
  const auto px = sms.values.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double v = bundle.two_sided() ? std::abs(charted(sms.kind, px[i]) - bundle.center_line) : px[i];
    d.black[i] = v > bundle.diag_threshold ? 1 : 0;
  }
  return d;
}

bool is_alarm(const CalibrationBundle& bundle, double s_max, double s_min) {
  if (bundle.two_sided()) {
    return charted(bundle.sms.kind, s_max) > bundle.ucl || charted(bundle.sms.kind, s_min) < bundle.lcl;
  }
  return s_max > bundle.control_limit;
}

MonitorReport monitor_image(const GreyImage& raw, const CalibrationBundle& bundle, bool force_diagnostic) {
  MonitorReport rep;
  const GreyImage img = standardize(raw);
  const NeighborhoodSpec spec(bundle.model.tree.l());
  if (spec.interior_rows(img.rows()) == 0 || spec.interior_cols(img.cols()) == 0) {
    fail(ErrorCode::ImageTooSmall, "image too small for the model neighborhood");
  }
  try {
    rep.sms = compute_sms(img, bundle.model.tree, bundle.sms, bundle.reference ? &*bundle.reference : nullptr);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::WindowTooLarge) throw Error(ErrorCode::ImageTooSmall, e.what());
    throw;
  }
  rep.s = image_statistic(rep.sms);
  rep.s_min = image_minimum(rep.sms);
  rep.alarmed = is_alarm(bundle, rep.s, rep.s_min);
  if (rep.alarmed || force_diagnostic) rep.diagnostic = diagnostic_image(rep.sms, bundle);
  return rep;
}

std::string bundle_manifest_json(const CalibrationBundle& b) {
  json j;
  j["schema_version"] = 1;
  j["kind"] = to_string(b.sms.kind);
  j["w"] = b.sms.w;
  j["epwmv_disk_mean"] = b.sms.epwmv_disk_mean;
  j["alpha"] = b.alpha;
  j["exceedances"] = b.exceedances ? json(*b.exceedances) : json(nullptr);
  j["control_limit"] = b.control_limit;
  j["center_line"] = b.center_line;
  j["lcl"] = b.two_sided() ? json(b.lcl) : json(nullptr);
  j["ucl"] = b.ucl;
  j["diag_threshold"] = b.diag_threshold;
  j["n_d"] = b.n_d;
  j["m_sms"] = b.m_sms;
  j["n_phase1"] = b.phase1_max.size();
  j["image_rows"] = b.image_rows;
  j["image_cols"] = b.image_cols;
  j["l"] = b.model.tree.l();
  j["model_digest"] = hex64(b.model_digest);
  if (b.reference) {
    j["reference_cdf"] = {{"q_l", b.reference->q_lower()},     {"q_u", b.reference->q_upper()},
                          {"p", b.reference->p()},             {"lambda_l", b.reference->lambda_lower()},
                          {"lambda_u", b.reference->lambda_upper()}, {"r_p", b.reference->r_p()},
                          {"r_1mp", b.reference->r_1mp()},     {"count", b.reference->count()}};
  }
  return j.dump(2);
}

namespace {
constexpr char kBundleMagic[8] = {'S', 'T', 'S', 'B', 'N', 'D', 'L', 'E'};
constexpr std::uint32_t kBundleVersion = 1;
}  // namespace

std::vector<std::uint8_t> serialize_bundle(const CalibrationBundle& b) {
  ByteWriter w;
  w.text(std::string_view(kBundleMagic, 8));
  w.u32(kBundleVersion);
  const std::string manifest = bundle_manifest_json(b);
  w.u64(manifest.size());
  w.text(manifest);
  const auto model = serialize_model(b.model);
  w.u64(model.size());
  w.bytes(model);
  if (b.reference) {
    const auto cdf = serialize_reference_cdf(*b.reference);
    w.u64(cdf.size());
    w.bytes(cdf);
  } else {
    w.u64(0);
  }
  const bool has_min = b.two_sided();
  ByteWriter stats;
  stats.u64(b.phase1_max.size());
  for (double v : b.phase1_max) stats.f64(v);
  stats.u8(has_min ? 1 : 0);
  if (has_min) {
    for (double v : b.phase1_min) stats.f64(v);
  }
  stats.u64(b.diag_table.size());
  for (double v : b.diag_table) stats.f64(v);
  w.u64(stats.data().size());
  w.bytes(stats.data());
  return w.take();
}

CalibrationBundle deserialize_bundle(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.bytes(8);
  if (!std::equal(magic.begin(), magic.end(), kBundleMagic)) fail(ErrorCode::FormatError, "not a bundle file");
  const std::uint32_t version = r.u32();
  if (version != kBundleVersion) {
    fail(ErrorCode::FormatError, "unsupported bundle version " + std::to_string(version));
  }
  const auto manifest_bytes = r.bytes(r.u64());
  const auto model_bytes = r.bytes(r.u64());
  const auto cdf_bytes = r.bytes(r.u64());
  const auto stats_bytes = r.bytes(r.u64());
  if (r.remaining() != 0) fail(ErrorCode::FormatError, "trailing bytes after bundle");

  json j;
  try {
    j = json::parse(manifest_bytes.begin(), manifest_bytes.end());
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, std::string("bundle manifest: ") + e.what());
  }
  CalibrationBundle b;
  try {
    b.sms.kind = parse_sms_kind(j.at("kind").get<std::string>());
    b.sms.w = j.at("w").get<int>();
    b.sms.epwmv_disk_mean = j.at("epwmv_disk_mean").get<bool>();
    b.alpha = j.at("alpha").get<double>();
    if (!j.at("exceedances").is_null()) b.exceedances = j.at("exceedances").get<int>();
    b.control_limit = j.at("control_limit").get<double>();
    b.center_line = j.at("center_line").get<double>();
    b.lcl = j.at("lcl").is_null() ? -std::numeric_limits<double>::infinity() : j.at("lcl").get<double>();
    b.ucl = j.at("ucl").get<double>();
    b.diag_threshold = j.at("diag_threshold").get<double>();
    b.n_d = j.at("n_d").get<int>();
    b.m_sms = j.at("m_sms").get<std::size_t>();
    b.image_rows = j.at("image_rows").get<std::size_t>();
    b.image_cols = j.at("image_cols").get<std::size_t>();
    b.model_digest = parse_hex64(j.at("model_digest").get<std::string>());
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, std::string("bundle manifest: ") + e.what());
  }
  if (fnv1a64(model_bytes) != b.model_digest) {
    fail(ErrorCode::FormatError, "embedded model does not match the manifest digest");
  }
  b.model = deserialize_model(model_bytes);
  if (!cdf_bytes.empty()) b.reference = deserialize_reference_cdf(cdf_bytes);
  if (b.sms.kind == SmsKind::AD && !b.reference) fail(ErrorCode::FormatError, "A-D bundle lacks a reference cdf");

  ByteReader s(stats_bytes);
  b.phase1_max.resize(s.u64());
  for (auto& v : b.phase1_max) v = s.f64();
  if (s.u8() != 0) {
    b.phase1_min.resize(b.phase1_max.size());
    for (auto& v : b.phase1_min) v = s.f64();
  }
  b.diag_table.resize(s.u64());
  for (auto& v : b.diag_table) v = s.f64();
  if (s.remaining() != 0) fail(ErrorCode::FormatError, "trailing bytes in Phase I statistics");
  return b;
}

std::string report_json(const MonitorReport& rep, const CalibrationBundle& b, const std::string& diag_path) {
  json j;
  j["schema_version"] = 1;
  j["kind"] = to_string(b.sms.kind);
  j["w"] = b.sms.w;
  j["s"] = rep.s;
  if (b.two_sided()) {
    j["s_min"] = rep.s_min;
    j["lcl"] = b.lcl;
    j["ucl"] = b.ucl;
    j["center_line"] = b.center_line;
  }
  j["cl"] = b.two_sided() ? b.ucl : b.control_limit;
  j["alarmed"] = rep.alarmed;
  j["black_pixels"] = rep.diagnostic ? json(rep.diagnostic->black_count()) : json(nullptr);
  j["diag_path"] = diag_path.empty() ? json(nullptr) : json(diag_path);
  return j.dump(2);
}

}  // namespace stsmon
