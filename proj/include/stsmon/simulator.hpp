#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include "stsmon/image.hpp"
#include "stsmon/sms.hpp"
#include "stsmon/tree.hpp"

namespace stsmon {

// Rows/cols generated above and left of the retained field, then dropped.
inline constexpr std::size_t kSarBurnIn = 50;

struct SarParams {
  double phi1 = 0.6;   // vertical lag-1
  double phi2 = 0.35;  // horizontal lag-1
  double sigma = 1.0;
  std::size_t rows = 250;
  std::size_t cols = 250;
  std::uint64_t seed = 0;

  void validate() const;
};

// y(i,k) = phi1 y(i-1,k) + phi2 y(i,k-1) + eps(i,k), zero outside the
// generated block, noise drawn in raster order.
GreyImage generate_sar(const SarParams& p);

// Affine map of the field onto [0, 255] (min -> 0, max -> 255).
GreyImage to_greyscale(const GreyImage& field);

enum class DefectKind { WhiteNoiseEllipse, MilderArEllipse, BlackSquare, WhiteNoiseSquare };

std::string_view to_string(DefectKind kind);
DefectKind parse_defect_kind(std::string_view text);

struct DefectSpec {
  DefectKind kind = DefectKind::WhiteNoiseEllipse;
  std::size_t size_rows = 5;
  std::size_t size_cols = 5;
  // Top-left corner of the bounding box; random when empty.
  std::optional<std::array<std::size_t, 2>> top_left;
  // MilderArEllipse only.
  double milder_phi1 = 0.54;
  double milder_phi2 = 0.315;
  std::uint64_t seed = 0;

  bool empty() const noexcept { return size_rows == 0 || size_cols == 0; }
  std::string label() const;
};

struct InjectedDefect {
  GreyImage field;
  // 1 where the pixel was replaced.
  std::vector<std::uint8_t> mask;
  std::size_t top = 0;
  std::size_t left = 0;
};

// Ellipse membership for a box of the given size: semi-axes size/2, center
// at (size-1)/2 from the top-left corner.
bool in_ellipse(std::size_t size_rows, std::size_t size_cols, std::size_t dr, std::size_t dc);

InjectedDefect inject_defect(const GreyImage& field, const DefectSpec& d, const SarParams& p);

// Mask as [row, start_col, length] runs in raster order.
std::vector<std::array<std::size_t, 3>> mask_rle(const std::vector<std::uint8_t>& mask, std::size_t rows,
                                                 std::size_t cols);

// Seed for a substream identified by `path`, independent of evaluation order.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

struct PowerExperimentConfig {
  SarParams process;  // seed ignored; rows/cols are the Phase I/II dimensions
  std::size_t training_rows = 500;
  std::size_t training_cols = 500;
  int replicates = 3;
  std::size_t phase1_count = 300;
  std::size_t phase2_count = 50;
  double alpha = 0.003;
  int n_d = 10;
  // An empty (zero-size) spec scores in-control Phase II images.
  std::vector<DefectSpec> defects;
  std::vector<SmsConfig> statistics;
  FitConfig fit;
  int fixed_l = 0;  // 0: cross-validate over fit.l_candidates
  std::uint64_t seed = 0;

  void validate() const;
};

struct PowerCell {
  std::string defect;
  SmsConfig statistic;
  double power = 0.0;
  double mc_se = 0.0;
  int replicates = 0;
  std::vector<std::size_t> alarms;  // per replicate
};

struct PowerTable {
  std::vector<PowerCell> cells;  // defect-major, then statistic order
  std::vector<int> chosen_l;     // per replicate
  std::size_t phase2_count = 0;
};

PowerTable run_power_experiment(const PowerExperimentConfig& cfg);

// Columns: defect,statistic,w,power,mc_se,replicates
std::string power_csv(const PowerTable& table);

}  // namespace stsmon
