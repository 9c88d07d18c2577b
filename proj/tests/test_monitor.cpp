#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "stsmon/baselines.hpp"
#include "stsmon/error.hpp"
#include "stsmon/monitor.hpp"
#include "stsmon/quantile.hpp"
#include "stsmon/simulator.hpp"
#include "support.hpp"

using namespace stsmon;

namespace {

const TrainedModel& small_model() {
  static const TrainedModel m = [] {
    SarParams p;
    p.rows = p.cols = 120;
    p.seed = 99;
    FitConfig c;
    c.min_leaf_size = 15;
    return train_model(to_greyscale(generate_sar(p)), c, 1);
  }();
  return m;
}

std::vector<GreyImage> phase1_images(std::size_t n, std::uint64_t seed, std::size_t size = 40) {
  std::vector<GreyImage> out;
  for (std::size_t j = 0; j < n; ++j) {
    SarParams p;
    p.rows = p.cols = size;
    p.seed = derive_seed(seed, {j});
    out.push_back(to_greyscale(generate_sar(p)));
  }
  return out;
}

std::vector<double> all_sms(const std::vector<GreyImage>& images, const CalibrationBundle& b) {
  std::vector<double> pooled;
  for (const auto& img : images) {
    const SmsImage s = compute_sms(standardize(img), b.model.tree, b.sms, b.reference ? &*b.reference : nullptr);
    pooled.insert(pooled.end(), s.values.pixels().begin(), s.values.pixels().end());
  }
  return pooled;
}

}  // namespace

TEST_CASE("control limit is the (1 - alpha) empirical quantile of Phase I S") {
  const auto images = phase1_images(40, 1);
  CalibrationOptions opt;
  opt.alpha = 0.05;
  opt.n_d = 3;
  const CalibrationBundle b = calibrate(ImageSource::from_images(images), small_model(), {SmsKind::BP, 3}, opt);
  REQUIRE(b.phase1_max.size() == 40);
  for (std::size_t j = 0; j < images.size(); ++j) {
    const MonitorReport rep = monitor_image(images[j], b);
    CHECK(rep.s == b.phase1_max[j]);
  }
  auto sorted = b.phase1_max;
  std::sort(sorted.begin(), sorted.end());
  CHECK(b.control_limit == sorted[37]);  // ceil(0.95 * 40) = 38
  CHECK(b.ucl == b.control_limit);
  CHECK_FALSE(b.two_sided());
  CHECK(b.m_sms == (40 - 1 - 2 * 3) * (40 - 2 - 2 * 3));

  auto pooled = all_sms(images, b);
  const std::size_t total = pooled.size();
  std::sort(pooled.begin(), pooled.end());
  CHECK(b.diag_threshold == quantile_sorted(pooled, 1.0 - 3.0 / b.m_sms));
  for (int nd = 1; nd <= 20; ++nd) {
    CHECK(b.diag_threshold_for(nd) == quantile_sorted(pooled, 1.0 - static_cast<double>(nd) / b.m_sms));
  }
  CHECK(total == 40 * b.m_sms);
  CHECK_THROWS_AS(b.diag_threshold_for(0), Error);
}

TEST_CASE("exceedance rule leaves exactly k Phase I values above the limit") {
  const auto images = phase1_images(25, 2);
  CalibrationOptions opt;
  opt.exceedances = 2;
  const CalibrationBundle b = calibrate(ImageSource::from_images(images), small_model(), {SmsKind::BP, 3}, opt);
  const auto above = std::count_if(b.phase1_max.begin(), b.phase1_max.end(),
                                   [&](double s) { return s > b.control_limit; });
  CHECK(above == 2);
}

TEST_CASE("A-D calibration fits the reference cdf on pooled Phase I residuals") {
  const auto images = phase1_images(12, 3);
  CalibrationOptions opt;
  const CalibrationBundle b = calibrate(ImageSource::from_images(images), small_model(), {SmsKind::AD, 5}, opt);
  REQUIRE(b.reference.has_value());
  std::vector<double> pooled;
  for (const auto& img : images) {
    const ResidualImage r = residual_image(small_model().tree, standardize(img));
    pooled.insert(pooled.end(), r.values.pixels().begin(), r.values.pixels().end());
  }
  CHECK(b.reference->count() == pooled.size());
  const TailDefaults d = default_tail_parameters(pooled.size());
  CHECK(*b.reference == fit_reference_cdf(pooled, d.q, d.q, d.p));
  for (std::size_t j = 0; j < images.size(); ++j) CHECK(monitor_image(images[j], b).s == b.phase1_max[j]);

  // An explicit reference set replaces the pooled Phase I residuals.
  CalibrationOptions ex;
  ex.reference = ReferenceSource::Explicit;
  ex.explicit_reference = testing::random_vector(5000, 5);
  const CalibrationBundle e = calibrate(ImageSource::from_images(images), small_model(), {SmsKind::AD, 5}, ex);
  CHECK(e.reference->count() == 5000);
}

TEST_CASE("calibrating several statistics at once matches one at a time") {
  const auto images = phase1_images(10, 4);
  const std::vector<SmsConfig> cfgs{{SmsKind::BP, 3}, {SmsKind::AD, 5}, {SmsKind::EPWMV, 5}};
  CalibrationOptions opt;
  const auto many = calibrate_many(ImageSource::from_images(images), small_model(), cfgs, opt);
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    const auto one = calibrate(ImageSource::from_images(images), small_model(), cfgs[i], opt);
    CHECK(serialize_bundle(one) == serialize_bundle(many[i]));
  }
}

TEST_CASE("baselines chart two-sided limits about the pooled mean") {
  const auto images = phase1_images(30, 5);
  CalibrationOptions opt;
  opt.alpha = 0.1;
  for (SmsKind kind : {SmsKind::EPWMA, SmsKind::EPWMV}) {
    const CalibrationBundle b = calibrate(ImageSource::from_images(images), small_model(), {kind, 5}, opt);
    CHECK(b.two_sided());
    auto pooled = all_sms(images, b);
    if (kind == SmsKind::EPWMV) {
      for (double& v : pooled) v = std::sqrt(v);
    }
    double mean = 0.0;
    for (double v : pooled) mean += v;
    mean /= pooled.size();
    CHECK(b.center_line == doctest::Approx(mean).epsilon(1e-12));
    std::vector<double> dev;
    for (std::size_t j = 0; j < images.size(); ++j) {
      const SmsImage s = compute_sms(standardize(images[j]), b.model.tree, b.sms, nullptr);
      double hi = image_statistic(s), lo = image_minimum(s);
      if (kind == SmsKind::EPWMV) {
        hi = std::sqrt(hi);
        lo = std::sqrt(lo);
      }
      dev.push_back(std::max(hi - b.center_line, b.center_line - lo));
    }
    std::sort(dev.begin(), dev.end());
    CHECK(b.control_limit == doctest::Approx(dev[26]).epsilon(1e-12));  // ceil(0.9 * 30) = 27
    CHECK(b.lcl == doctest::Approx(b.center_line - b.control_limit));
    CHECK(b.ucl == doctest::Approx(b.center_line + b.control_limit));
    std::vector<double> absdev;
    for (double v : pooled) absdev.push_back(std::abs(v - b.center_line));
    std::sort(absdev.begin(), absdev.end());
    CHECK(b.diag_threshold == doctest::Approx(quantile_sorted(absdev, 1.0 - 10.0 / b.m_sms)).epsilon(1e-12));
    // Raw SMS values whose charted value is x.
    auto raw = [&](double x) { return kind == SmsKind::EPWMV ? x * x : x; };
    CHECK(is_alarm(b, raw(b.ucl + 0.01), raw(b.center_line)));
    CHECK_FALSE(is_alarm(b, raw(b.center_line), raw(b.center_line)));
    if (b.lcl > 0.01) CHECK(is_alarm(b, raw(b.center_line), raw(b.lcl - 0.01)));
  }
}

TEST_CASE("bundle round trip reproduces Phase I statistics bit-exactly") {
  const auto images = phase1_images(15, 6);
  for (SmsKind kind : {SmsKind::AD, SmsKind::BP, SmsKind::EPWMA}) {
    const CalibrationBundle b =
        calibrate(ImageSource::from_images(images), small_model(), {kind, 5}, CalibrationOptions{});
    const auto bytes = serialize_bundle(b);
    const CalibrationBundle back = deserialize_bundle(bytes);
    CHECK(serialize_bundle(back) == bytes);
    CHECK(back.phase1_max == b.phase1_max);
    CHECK(back.control_limit == b.control_limit);
    CHECK(back.diag_threshold == b.diag_threshold);
    CHECK(back.diag_table == b.diag_table);
    for (std::size_t j = 0; j < images.size(); ++j) CHECK(monitor_image(images[j], back).s == b.phase1_max[j]);
    CHECK_THROWS_AS(deserialize_bundle(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 3)), Error);
  }
}

TEST_CASE("diagnostic image marks SMS above the threshold") {
  const auto images = phase1_images(10, 7);
  CalibrationOptions opt;
  const CalibrationBundle b = calibrate(ImageSource::from_images(images), small_model(), {SmsKind::BP, 3}, opt);
  const MonitorReport rep = monitor_image(images[0], b, true);
  REQUIRE(rep.diagnostic.has_value());
  const DiagnosticImage& d = *rep.diagnostic;
  std::size_t black = 0;
  for (std::size_t i = 0; i < rep.sms.values.size(); ++i) {
    const bool above = rep.sms.values.pixels()[i] > b.diag_threshold;
    CHECK(static_cast<bool>(d.black[i]) == above);
    black += above;
  }
  CHECK(d.black_count() == black);
  const auto full = d.full_size(40, 40);
  std::size_t full_black = std::count(full.begin(), full.end(), 1);
  CHECK(full_black == black);
  CHECK(d.source_offset_row == rep.sms.source_offset_row);

  CalibrationBundle high = b;
  high.diag_threshold = 1e300;
  CHECK(diagnostic_image(rep.sms, high).black_count() == 0);
  CalibrationBundle other = b;
  other.sms.w = 5;
  CHECK_THROWS_AS(diagnostic_image(rep.sms, other), Error);
  // No alarm and no forcing: no diagnostic.
  CalibrationBundle lax = b;
  lax.control_limit = lax.ucl = 1e300;
  CHECK_FALSE(monitor_image(images[0], lax).diagnostic.has_value());
}

TEST_CASE("calibration input errors") {
  auto code = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  CHECK(code([] {
          calibrate(ImageSource::from_images({}), small_model(), {SmsKind::BP, 3}, CalibrationOptions{});
        }) == ErrorCode::InsufficientPhaseI);
  auto mixed = phase1_images(3, 8);
  mixed.push_back(phase1_images(1, 9, 45)[0]);
  CHECK(code([&] {
          calibrate(ImageSource::from_images(mixed), small_model(), {SmsKind::BP, 3}, CalibrationOptions{});
        }) == ErrorCode::DimensionMismatch);
  CHECK(code([] {
          compute_sms(standardize(phase1_images(1, 1)[0]), small_model().tree, {SmsKind::AD, 3}, nullptr);
        }) == ErrorCode::ConfigMismatch);
  CalibrationOptions bad;
  bad.alpha = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("monitoring an image too small for the window") {
  const auto images = phase1_images(5, 10);
  const CalibrationBundle b =
      calibrate(ImageSource::from_images(images), small_model(), {SmsKind::BP, 5}, CalibrationOptions{});
  try {
    monitor_image(testing::random_image(8, 8, 1), b);
    FAIL("expected ImageTooSmall");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ImageTooSmall);
  }
}

TEST_CASE("report JSON carries the schema version") {
  const auto images = phase1_images(5, 11);
  const CalibrationBundle b =
      calibrate(ImageSource::from_images(images), small_model(), {SmsKind::BP, 3}, CalibrationOptions{});
  const MonitorReport rep = monitor_image(images[0], b);
  const std::string j = report_json(rep, b, "");
  CHECK(j.find("\"schema_version\": 1") != std::string::npos);
  CHECK(j.find("\"diag_path\": null") != std::string::npos);
  CHECK(bundle_manifest_json(b).find("\"kind\": \"bp\"") != std::string::npos);
}
