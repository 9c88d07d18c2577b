#include "stsmon/simulator.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "stsmon/baselines.hpp"
#include "stsmon/error.hpp"
#include "stsmon/monitor.hpp"
#include "stsmon/parallel.hpp"

namespace stsmon {

void SarParams::validate() const {
  if (!(std::abs(phi1) + std::abs(phi2) < 1.0)) fail(ErrorCode::InvalidArgument, "SAR requires |phi1| + |phi2| < 1");
  if (!(sigma >= 0.0)) fail(ErrorCode::InvalidArgument, "SAR noise sd must be >= 0");
  if (rows == 0 || cols == 0) fail(ErrorCode::InvalidArgument, "SAR field must be non-empty");
}

GreyImage generate_sar(const SarParams& p) {
  p.validate();
  const std::size_t R = p.rows + kSarBurnIn;
  const std::size_t C = p.cols + kSarBurnIn;
  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> prev(C, 0.0), cur(C, 0.0);
  GreyImage out(p.rows, p.cols);
  for (std::size_t i = 0; i < R; ++i) {
    double left = 0.0;
    for (std::size_t k = 0; k < C; ++k) {
      const double y = p.phi1 * prev[k] + p.phi2 * left + p.sigma * noise(rng);
      cur[k] = y;
      left = y;
    }
    if (i >= kSarBurnIn) {
      std::copy(cur.begin() + kSarBurnIn, cur.end(), out.pixels().begin() + (i - kSarBurnIn) * p.cols);
    }
    std::swap(prev, cur);
  }
  return out;
}

GreyImage to_greyscale(const GreyImage& field) {
  if (field.empty()) fail(ErrorCode::ConstantField, "empty field");
  const auto [lo, hi] = std::minmax_element(field.pixels().begin(), field.pixels().end());
  const double min = *lo, max = *hi;
  if (!(max > min)) fail(ErrorCode::ConstantField, "field is constant");
  GreyImage out(field.rows(), field.cols());
  auto dst = out.pixels();
  const auto src = field.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = (src[i] - min) / (max - min) * 255.0;
  return out;
}

std::string_view to_string(DefectKind kind) {
  switch (kind) {
    case DefectKind::WhiteNoiseEllipse: return "white_noise_ellipse";
    case DefectKind::MilderArEllipse: return "milder_ar_ellipse";
    case DefectKind::BlackSquare: return "black_square";
    case DefectKind::WhiteNoiseSquare: return "white_noise_square";
  }
  return "?";
}

DefectKind parse_defect_kind(std::string_view text) {
  for (auto k : {DefectKind::WhiteNoiseEllipse, DefectKind::MilderArEllipse, DefectKind::BlackSquare,
                 DefectKind::WhiteNoiseSquare}) {
    if (text == to_string(k)) return k;
  }
  fail(ErrorCode::InvalidArgument, "unknown defect kind '" + std::string(text) + "'");
}

std::string DefectSpec::label() const {
  if (empty()) return "in_control";
  return fmt::format("{}_{}x{}", to_string(kind), size_rows, size_cols);
}

bool in_ellipse(std::size_t size_rows, std::size_t size_cols, std::size_t dr, std::size_t dc) {
  const double a1 = size_rows / 2.0, a2 = size_cols / 2.0;
  const double u = (static_cast<double>(dr) - (size_rows - 1) / 2.0) / a1;
  const double v = (static_cast<double>(dc) - (size_cols - 1) / 2.0) / a2;
  return u * u + v * v <= 1.0;
}

InjectedDefect inject_defect(const GreyImage& field, const DefectSpec& d, const SarParams& p) {
  InjectedDefect out{field, std::vector<std::uint8_t>(field.size(), 0), 0, 0};
  if (d.empty()) return out;
  if (d.size_rows > field.rows() || d.size_cols > field.cols()) {
    fail(ErrorCode::PlacementOutOfBounds, fmt::format("defect {}x{} does not fit a {}x{} image", d.size_rows,
                                                      d.size_cols, field.rows(), field.cols()));
  }
  std::mt19937_64 rng(d.seed);
  if (d.top_left) {
    out.top = (*d.top_left)[0];
    out.left = (*d.top_left)[1];
    if (out.top + d.size_rows > field.rows() || out.left + d.size_cols > field.cols()) {
      fail(ErrorCode::PlacementOutOfBounds,
           fmt::format("defect at ({}, {}) extends past the image", out.top, out.left));
    }
  } else {
    out.top = std::uniform_int_distribution<std::size_t>(0, field.rows() - d.size_rows)(rng);
    out.left = std::uniform_int_distribution<std::size_t>(0, field.cols() - d.size_cols)(rng);
  }

  const bool ellipse = d.kind == DefectKind::WhiteNoiseEllipse || d.kind == DefectKind::MilderArEllipse;
  for (std::size_t dr = 0; dr < d.size_rows; ++dr) {
    for (std::size_t dc = 0; dc < d.size_cols; ++dc) {
      if (!ellipse || in_ellipse(d.size_rows, d.size_cols, dr, dc)) {
        out.mask[(out.top + dr) * field.cols() + out.left + dc] = 1;
      }
    }
  }

  GreyImage source;
  if (d.kind == DefectKind::MilderArEllipse) {
    SarParams aux = p;
    aux.phi1 = d.milder_phi1;
    aux.phi2 = d.milder_phi2;
    aux.rows = field.rows();
    aux.cols = field.cols();
    aux.seed = derive_seed(d.seed, {1});
    source = generate_sar(aux);
  }
  const double field_min = *std::min_element(field.pixels().begin(), field.pixels().end());
  std::normal_distribution<double> noise(0.0, 1.0);
  auto px = out.field.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (!out.mask[i]) continue;
    switch (d.kind) {
      case DefectKind::WhiteNoiseEllipse:
      case DefectKind::WhiteNoiseSquare: px[i] = p.sigma * noise(rng); break;
      case DefectKind::MilderArEllipse: px[i] = source.pixels()[i]; break;
      case DefectKind::BlackSquare: px[i] = field_min; break;
    }
  }
  return out;
}

std::vector<std::array<std::size_t, 3>> mask_rle(const std::vector<std::uint8_t>& mask, std::size_t rows,
                                                 std::size_t cols) {
  if (mask.size() != rows * cols) fail(ErrorCode::DimensionMismatch, "mask size does not match dimensions");
  std::vector<std::array<std::size_t, 3>> runs;
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t c = 0;
    while (c < cols) {
      if (!mask[r * cols + c]) {
        ++c;
        continue;
      }
      const std::size_t start = c;
      while (c < cols && mask[r * cols + c]) ++c;
      runs.push_back({r, start, c - start});
    }
  }
  return runs;
}

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(master);
  for (std::uint64_t step : path) s = splitmix64(s ^ splitmix64(step + 0x632be59bd9b4e019ULL));
  return s;
}

void PowerExperimentConfig::validate() const {
  process.validate();
  fit.validate();
  if (replicates < 1) fail(ErrorCode::InvalidArgument, "replicates must be >= 1");
  if (phase1_count == 0) fail(ErrorCode::InsufficientPhaseI, "Phase I count must be >= 1");
  if (phase2_count == 0) fail(ErrorCode::InvalidArgument, "Phase II count must be >= 1");
  if (defects.empty()) fail(ErrorCode::InvalidArgument, "no defect specs");
  if (statistics.empty()) fail(ErrorCode::InvalidArgument, "no statistics");
  for (const auto& s : statistics) s.validate();
  if (fixed_l < 0) fail(ErrorCode::InvalidArgument, "fixed l must be >= 0");
}

PowerTable run_power_experiment(const PowerExperimentConfig& cfg) {
  cfg.validate();
  const std::size_t n_def = cfg.defects.size();
  const std::size_t n_stat = cfg.statistics.size();
  PowerTable table;
  table.phase2_count = cfg.phase2_count;
  std::vector<std::vector<std::size_t>> alarms(n_def * n_stat);
  const bool need_residuals = std::any_of(cfg.statistics.begin(), cfg.statistics.end(), [](const SmsConfig& c) {
    return c.kind == SmsKind::AD || c.kind == SmsKind::BP;
  });

  for (int rep = 0; rep < cfg.replicates; ++rep) {
    const auto r = static_cast<std::uint64_t>(rep);
    SarParams train = cfg.process;
    train.rows = cfg.training_rows;
    train.cols = cfg.training_cols;
    train.seed = derive_seed(cfg.seed, {r, 0});
    FitConfig fit = cfg.fit;
    fit.seed = derive_seed(cfg.seed, {r, 4});
    const TrainedModel model = train_model(to_greyscale(generate_sar(train)), fit, cfg.fixed_l);
    table.chosen_l.push_back(model.tree.l());

    ImageSource phase1;
    phase1.count = cfg.phase1_count;
    phase1.load = [&cfg, r](std::size_t j) {
      SarParams p = cfg.process;
      p.seed = derive_seed(cfg.seed, {r, 1, j});
      return to_greyscale(generate_sar(p));
    };
    CalibrationOptions opt;
    opt.alpha = cfg.alpha;
    opt.n_d = cfg.n_d;
    const auto bundles = calibrate_many(phase1, model, cfg.statistics, opt);

    for (std::size_t d = 0; d < n_def; ++d) {
      std::vector<std::uint8_t> hit(cfg.phase2_count * n_stat, 0);
      parallel_for(cfg.phase2_count, [&](std::size_t j) {
        SarParams p = cfg.process;
        p.seed = derive_seed(cfg.seed, {r, 2, d, j});
        DefectSpec spec = cfg.defects[d];
        spec.seed = derive_seed(cfg.seed, {r, 3, d, j});
        const GreyImage img = standardize(to_greyscale(inject_defect(generate_sar(p), spec, p).field));
        std::optional<ResidualImage> res;
        if (need_residuals) res = residual_image(model.tree, img);
        for (std::size_t s = 0; s < n_stat; ++s) {
          const CalibrationBundle& b = bundles[s];
          SmsImage sms;
          switch (b.sms.kind) {
            case SmsKind::AD: sms = ad_sms(*res, *b.reference, b.sms); break;
            case SmsKind::BP: sms = bp_sms(*res, b.sms); break;
            case SmsKind::EPWMA: sms = epwma_sms(img, b.sms); break;
            case SmsKind::EPWMV: sms = epwmv_sms(img, b.sms); break;
          }
          hit[j * n_stat + s] = is_alarm(b, image_statistic(sms), image_minimum(sms)) ? 1 : 0;
        }
      });
      for (std::size_t s = 0; s < n_stat; ++s) {
        std::size_t count = 0;
        for (std::size_t j = 0; j < cfg.phase2_count; ++j) count += hit[j * n_stat + s];
        alarms[d * n_stat + s].push_back(count);
      }
    }
    spdlog::info("replicate {}/{} done (l = {})", rep + 1, cfg.replicates, model.tree.l());
  }

  const double n2 = static_cast<double>(cfg.phase2_count);
  for (std::size_t d = 0; d < n_def; ++d) {
    for (std::size_t s = 0; s < n_stat; ++s) {
      PowerCell cell;
      cell.defect = cfg.defects[d].label();
      cell.statistic = cfg.statistics[s];
      cell.replicates = cfg.replicates;
      cell.alarms = alarms[d * n_stat + s];
      std::vector<double> p;
      for (auto a : cell.alarms) p.push_back(static_cast<double>(a) / n2);
      double mean = 0.0;
      for (double v : p) mean += v;
      mean /= static_cast<double>(p.size());
      cell.power = mean;
      if (p.size() > 1) {
        double ss = 0.0;
        for (double v : p) ss += (v - mean) * (v - mean);
        cell.mc_se = std::sqrt(ss / static_cast<double>(p.size() - 1)) / std::sqrt(static_cast<double>(p.size()));
      } else {
        cell.mc_se = std::sqrt(mean * (1.0 - mean) / n2);
      }
      table.cells.push_back(std::move(cell));
    }
  }
  return table;
}

std::string power_csv(const PowerTable& table) {
  std::string out = "defect,statistic,w,power,mc_se,replicates\n";
  for (const auto& c : table.cells) {
    out += fmt::format("{},{},{},{:.6f},{:.6f},{}\n", c.defect, to_string(c.statistic.kind), c.statistic.w, c.power,
                       c.mc_se, c.replicates);
  }
  return out;
}

}  // namespace stsmon
