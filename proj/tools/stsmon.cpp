// stsmon: train / calibrate / monitor / simulate / benchmark.

#include <CLI11.hpp>
#include <json.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "stsmon/error.hpp"
#include "stsmon/file_io.hpp"
#include "stsmon/monitor.hpp"
#include "stsmon/parallel.hpp"
#include "stsmon/png_io.hpp"
#include "stsmon/simulator.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace stsmon;

namespace {

constexpr int kSchemaVersion = 1;

enum Exit { kOk = 0, kUsage = 2, kIo = 3, kData = 4, kConfig = 5 };

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return kUsage;
    case ErrorCode::IoError:
    case ErrorCode::FormatError: return kIo;
    case ErrorCode::ConfigMismatch: return kConfig;
    default: return kData;
  }
}

struct Globals {
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out_dir = ".";
  std::string log_level = "info";

  fs::path out(const std::string& name) const {
    const fs::path p(name);
    return p.is_absolute() ? p : fs::path(out_dir) / p;
  }
  json to_json() const {
    return {{"seed", seed}, {"threads", threads}, {"log_level", log_level}};
  }
};

std::vector<fs::path> list_pngs(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) fail(ErrorCode::IoError, "not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

ImageSource png_source(std::vector<fs::path> files) {
  auto shared = std::make_shared<const std::vector<fs::path>>(std::move(files));
  return {shared->size(), [shared](std::size_t i) { return read_png((*shared)[i]); }};
}

// "bp:5,ad:15" -> statistic list
std::vector<SmsConfig> parse_stats(const std::string& text, bool epwmv_disk) {
  std::vector<SmsConfig> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find(',', pos), text.size());
    const std::string item = text.substr(pos, end - pos);
    const std::size_t colon = item.find(':');
    if (colon == std::string::npos) fail(ErrorCode::InvalidArgument, "statistic '" + item + "' is not KIND:W");
    SmsConfig c;
    c.kind = parse_sms_kind(item.substr(0, colon));
    try {
      c.w = std::stoi(item.substr(colon + 1));
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidArgument, "bad window in '" + item + "'");
    }
    c.epwmv_disk_mean = epwmv_disk;
    c.validate();
    out.push_back(c);
    pos = end + 1;
  }
  return out;
}

// "5x21" -> (5, 21)
std::pair<std::size_t, std::size_t> parse_size(const std::string& text) {
  const std::size_t x = text.find('x');
  try {
    if (x != std::string::npos) return {std::stoul(text.substr(0, x)), std::stoul(text.substr(x + 1))};
  } catch (const std::exception&) {
  }
  fail(ErrorCode::InvalidArgument, "size '" + text + "' is not ROWSxCOLS");
}

std::vector<int> parse_l_candidates(const std::string& text) {
  std::vector<int> out;
  try {
    const std::size_t dots = text.find("..");
    if (dots != std::string::npos) {
      const int lo = std::stoi(text.substr(0, dots)), hi = std::stoi(text.substr(dots + 2));
      for (int l = lo; l <= hi; ++l) out.push_back(l);
    } else {
      std::size_t pos = 0;
      while (pos <= text.size()) {
        const std::size_t end = std::min(text.find(',', pos), text.size());
        out.push_back(std::stoi(text.substr(pos, end - pos)));
        pos = end + 1;
      }
    }
  } catch (const std::exception&) {
    fail(ErrorCode::InvalidArgument, "l candidates '" + text + "' are not LO..HI or a comma list");
  }
  return out;
}

json fit_json(const FitConfig& c) {
  return {{"min_leaf_size", c.min_leaf_size},   {"max_depth", c.max_depth},
          {"min_split_improvement", c.min_split_improvement}, {"cv_folds", c.cv_folds},
          {"l_candidates", c.l_candidates},     {"cv_tolerance", c.cv_tolerance},
          {"seed", c.seed}};
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

// ---- train ----

struct TrainArgs {
  std::string image;
  std::string l_candidates = "1..20";
  int fixed_l = 0;
  FitConfig fit;
  std::string out = "model.stsm";
};

int run_train(const Globals& g, TrainArgs a) {
  a.fit.seed = g.seed;
  if (a.fixed_l == 0) a.fit.l_candidates = parse_l_candidates(a.l_candidates);
  a.fit.validate();
  const GreyImage img = read_png(a.image);
  const TrainedModel model = train_model(img, a.fit, a.fixed_l);
  const auto bytes = serialize_model(model);

  json cv = json::array();
  for (const auto& e : model.selection.report) {
    cv.push_back({{"l", e.l}, {"evaluated", e.evaluated}, {"cv_error", e.cv_error}, {"rows", e.rows}});
  }
  json manifest{{"schema_version", kSchemaVersion},
                {"command", "train"},
                {"globals", g.to_json()},
                {"image", a.image},
                {"image_rows", img.rows()},
                {"image_cols", img.cols()},
                {"fixed_l", a.fixed_l},
                {"fit", fit_json(a.fit)},
                {"chosen_l", model.tree.l()},
                {"cv_report", cv},
                {"leaves", model.tree.leaf_count()},
                {"depth", model.tree.depth()},
                {"model_digest", fmt::format("{:016x}", fnv1a64(bytes))}};
  write_file_atomic(g.out(a.out), bytes);
  write_json(g.out(a.out + ".json"), manifest);
  spdlog::info("model l = {} ({} leaves) -> {}", model.tree.l(), model.tree.leaf_count(), g.out(a.out).string());
  return kOk;
}

// ---- calibrate ----

struct CalibrateArgs {
  std::string model;
  std::string phase1;
  std::string reference_dir;
  std::string stat = "bp";
  int w = 15;
  bool epwmv_square = false;
  CalibrationOptions opt;
  int exceedances = -1;
  double tail_q = 0.0;
  double patch_p = 0.0;
  std::string out = "bundle.stsb";
};

int run_calibrate(const Globals& g, CalibrateArgs a) {
  SmsConfig cfg{parse_sms_kind(a.stat), a.w, !a.epwmv_square};
  cfg.validate();
  if (a.exceedances >= 0) a.opt.exceedances = a.exceedances;
  if (a.tail_q > 0.0) a.opt.tail_q = a.tail_q;
  if (a.patch_p > 0.0) a.opt.patch_p = a.patch_p;
  const TrainedModel model = deserialize_model(read_file(a.model));
  const auto files = list_pngs(a.phase1);
  if (files.empty()) fail(ErrorCode::InsufficientPhaseI, "no PNG images in " + a.phase1);
  if (!a.reference_dir.empty()) {
    if (cfg.kind != SmsKind::AD) fail(ErrorCode::InvalidArgument, "--reference-dir only applies to the ad statistic");
    a.opt.reference = ReferenceSource::Explicit;
    for (const auto& f : list_pngs(a.reference_dir)) {
      const auto res = residual_image(model.tree, standardize(read_png(f)));
      a.opt.explicit_reference.insert(a.opt.explicit_reference.end(), res.values.pixels().begin(),
                                      res.values.pixels().end());
    }
  }
  a.opt.validate();
  const CalibrationBundle bundle = calibrate(png_source(files), model, cfg, a.opt);

  json manifest = json::parse(bundle_manifest_json(bundle));
  manifest["command"] = "calibrate";
  manifest["globals"] = g.to_json();
  manifest["model_file"] = a.model;
  manifest["phase1_dir"] = a.phase1;
  manifest["phase1_count"] = files.size();
  manifest["reference"] = a.reference_dir.empty() ? json("phase1") : json(a.reference_dir);
  write_file_atomic(g.out(a.out), serialize_bundle(bundle));
  write_json(g.out(a.out + ".json"), manifest);
  spdlog::info("{} w={} CL={:.6g} diag threshold={:.6g} from {} images", to_string(cfg.kind), cfg.w,
               bundle.two_sided() ? bundle.ucl : bundle.control_limit, bundle.diag_threshold, files.size());
  return kOk;
}

// ---- monitor ----

struct MonitorArgs {
  std::string bundle;
  std::vector<std::string> inputs;
  bool diag_always = false;
  int n_d = 0;
  bool export_sms = false;
  std::string summary = "summary.csv";
};

int run_monitor(const Globals& g, const MonitorArgs& a) {
  CalibrationBundle bundle = deserialize_bundle(read_file(a.bundle));
  if (a.n_d > 0) {
    bundle.diag_threshold = bundle.diag_threshold_for(a.n_d);
    bundle.n_d = a.n_d;
  }
  std::vector<fs::path> files;
  bool batch = a.inputs.size() > 1;
  for (const auto& in : a.inputs) {
    if (fs::is_directory(in)) {
      batch = true;
      const auto found = list_pngs(in);
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.emplace_back(in);
    }
  }
  if (files.empty()) fail(ErrorCode::IoError, "no input images");

  struct Row {
    std::string file;
    double s;
    bool alarmed;
  };
  std::vector<Row> rows;
  for (const auto& f : files) {
    const GreyImage img = read_png(f);
    if (img.rows() != bundle.image_rows || img.cols() != bundle.image_cols) {
      spdlog::warn("{} is {}x{}; Phase I images were {}x{}", f.string(), img.rows(), img.cols(), bundle.image_rows,
                   bundle.image_cols);
    }
    const MonitorReport rep = monitor_image(img, bundle, a.diag_always);
    const std::string stem = f.stem().string();
    std::string diag_name;
    if (rep.diagnostic) {
      diag_name = stem + ".diag.png";
      const auto black = rep.diagnostic->full_size(img.rows(), img.cols());
      write_file_atomic(g.out(diag_name), encode_png_binary(img.rows(), img.cols(), black));
    }
    if (a.export_sms) {
      write_file_atomic(g.out(stem + ".sms.json"), sms_header_json(rep.sms) + "\n");
      write_file_atomic(g.out(stem + ".sms.f64"), sms_grid_bytes(rep.sms));
    }
    json j = json::parse(report_json(rep, bundle, diag_name));
    j["file"] = f.filename().string();
    j["n_d"] = bundle.n_d;
    j["diag_threshold"] = bundle.diag_threshold;
    write_json(g.out(stem + ".report.json"), j);
    if (!batch) std::cout << j.dump(2) << "\n";
    spdlog::info("{}: S={:.6g} {}", f.filename().string(), rep.s, rep.alarmed ? "ALARM" : "ok");
    rows.push_back({f.filename().string(), rep.s, rep.alarmed});
  }
  if (batch) {
    std::string csv = "file,S,alarmed\n";
    for (const auto& r : rows) csv += fmt::format("{},{:.17g},{}\n", r.file, r.s, r.alarmed ? 1 : 0);
    write_file_atomic(g.out(a.summary), csv);
    const auto alarms = std::count_if(rows.begin(), rows.end(), [](const Row& r) { return r.alarmed; });
    std::cout << fmt::format("{} images, {} alarms -> {}\n", rows.size(), alarms, g.out(a.summary).string());
  }
  return kOk;
}

// ---- simulate ----

struct SimulateArgs {
  std::size_t count = 1;
  SarParams sar;
  std::string defect = "none";
  std::string defect_size = "5x5";
  std::vector<std::size_t> defect_at;
  std::string prefix = "sim";
  int bit_depth = 8;
};

int run_simulate(const Globals& g, SimulateArgs a) {
  a.sar.validate();
  if (a.bit_depth != 8 && a.bit_depth != 16) fail(ErrorCode::InvalidArgument, "--bit-depth must be 8 or 16");
  std::optional<DefectSpec> defect;
  if (a.defect != "none") {
    DefectSpec d;
    d.kind = parse_defect_kind(a.defect);
    std::tie(d.size_rows, d.size_cols) = parse_size(a.defect_size);
    if (!a.defect_at.empty()) {
      if (a.defect_at.size() != 2) fail(ErrorCode::InvalidArgument, "--defect-at takes ROW COL");
      d.top_left = std::array<std::size_t, 2>{a.defect_at[0], a.defect_at[1]};
    }
    defect = d;
  }
  const int digits = std::max<int>(4, static_cast<int>(std::to_string(a.count).size()));
  std::vector<json> entries(a.count);
  parallel_for(a.count, [&](std::size_t i) {
    SarParams p = a.sar;
    p.seed = derive_seed(g.seed, {i});
    GreyImage field = generate_sar(p);
    const std::string name = fmt::format("{}_{:0{}}.png", a.prefix, i, digits);
    json entry{{"file", name}, {"seed", p.seed}};
    if (defect) {
      DefectSpec d = *defect;
      d.seed = derive_seed(g.seed, {i, 1});
      InjectedDefect inj = inject_defect(field, d, p);
      field = std::move(inj.field);
      entry["defect"] = {{"kind", to_string(d.kind)},
                         {"size", {d.size_rows, d.size_cols}},
                         {"top_left", {inj.top, inj.left}},
                         {"seed", d.seed},
                         {"mask_rle", mask_rle(inj.mask, field.rows(), field.cols())}};
    }
    const GreyImage grey = to_greyscale(field);
    write_file_atomic(g.out(name), a.bit_depth == 8 ? encode_png_grey8(grey) : encode_png_grey16(grey));
    entries[i] = std::move(entry);
  });
  json manifest{{"schema_version", kSchemaVersion},
                {"command", "simulate"},
                {"globals", g.to_json()},
                {"sar",
                 {{"phi1", a.sar.phi1},
                  {"phi2", a.sar.phi2},
                  {"sigma", a.sar.sigma},
                  {"rows", a.sar.rows},
                  {"cols", a.sar.cols},
                  {"burn_in", kSarBurnIn}}},
                {"bit_depth", a.bit_depth},
                {"mask_rle_layout", "[row, start_col, length]"},
                {"images", entries}};
  write_json(g.out(a.prefix + "_manifest.json"), manifest);
  spdlog::info("wrote {} images to {}", a.count, g.out_dir);
  return kOk;
}

// ---- benchmark ----

struct BenchmarkArgs {
  bool desk_scale = false;
  int replicates = 10;
  std::size_t phase1 = 1000;
  std::size_t phase2 = 100;
  double alpha = 0.003;
  int n_d = 10;
  std::string stats = "ad:5,ad:15,ad:25,bp:5,bp:15,bp:25,epwma:5,epwma:15,epwma:25,epwmv:5,epwmv:15,epwmv:25";
  std::string defects = "5x5,5x21,9x21,15x21";
  std::string defect_kind = "white_noise_ellipse";
  bool in_control = false;
  bool epwmv_square = false;
  std::string l_candidates = "1..5";
  int fixed_l = 0;
  SarParams sar;
  std::string out = "power.csv";
};

int run_benchmark(const Globals& g, BenchmarkArgs a) {
  if (a.desk_scale) {
    a.replicates = 3;
    a.phase1 = 300;
    a.phase2 = 50;
  }
  PowerExperimentConfig cfg;
  cfg.process = a.sar;
  cfg.replicates = a.replicates;
  cfg.phase1_count = a.phase1;
  cfg.phase2_count = a.phase2;
  cfg.alpha = a.alpha;
  cfg.n_d = a.n_d;
  cfg.statistics = parse_stats(a.stats, !a.epwmv_square);
  cfg.fit.l_candidates = parse_l_candidates(a.l_candidates);
  cfg.fixed_l = a.fixed_l;
  cfg.seed = g.seed;
  const DefectKind kind = parse_defect_kind(a.defect_kind);
  if (a.in_control) cfg.defects.push_back(DefectSpec{.size_rows = 0, .size_cols = 0});
  std::size_t pos = 0;
  while (!a.defects.empty() && pos <= a.defects.size()) {
    const std::size_t end = std::min(a.defects.find(',', pos), a.defects.size());
    DefectSpec d;
    d.kind = kind;
    std::tie(d.size_rows, d.size_cols) = parse_size(a.defects.substr(pos, end - pos));
    cfg.defects.push_back(d);
    pos = end + 1;
  }
  cfg.validate();

  const PowerTable table = run_power_experiment(cfg);
  json cells = json::array();
  for (const auto& c : table.cells) {
    cells.push_back({{"defect", c.defect},
                     {"statistic", to_string(c.statistic.kind)},
                     {"w", c.statistic.w},
                     {"power", c.power},
                     {"mc_se", c.mc_se},
                     {"alarms_per_replicate", c.alarms}});
  }
  json manifest{{"schema_version", kSchemaVersion},
                {"command", "benchmark"},
                {"globals", g.to_json()},
                {"desk_scale", a.desk_scale},
                {"replicates", cfg.replicates},
                {"phase1_count", cfg.phase1_count},
                {"phase2_count", cfg.phase2_count},
                {"alpha", cfg.alpha},
                {"n_d", cfg.n_d},
                {"sar", {{"phi1", a.sar.phi1}, {"phi2", a.sar.phi2}, {"sigma", a.sar.sigma},
                         {"rows", a.sar.rows}, {"cols", a.sar.cols}}},
                {"training_size", {cfg.training_rows, cfg.training_cols}},
                {"defect_kind", a.defect_kind},
                {"fixed_l", cfg.fixed_l},
                {"fit", fit_json(cfg.fit)},
                {"chosen_l", table.chosen_l},
                {"cells", cells}};
  const std::string csv = power_csv(table);
  write_file_atomic(g.out(a.out), csv);
  write_json(g.out(a.out + ".json"), manifest);
  std::cout << csv;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Statistical process control for stochastic textured surface images"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file (explicit flags take precedence)");
  Globals g;
  app.add_option("--seed", g.seed, "Master random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--out-dir", g.out_dir, "Directory for outputs")->capture_default_str();
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}))
      ->capture_default_str();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Fit the texture model to an in-control image");
  t->add_option("image", train.image, "Training PNG")->required();
  t->add_option("--l-candidates", train.l_candidates, "Neighborhood sizes to cross-validate (LO..HI or list)")
      ->capture_default_str();
  t->add_option("--fixed-l", train.fixed_l, "Skip cross-validation and use this l")->check(CLI::NonNegativeNumber);
  t->add_option("--min-leaf", train.fit.min_leaf_size)->capture_default_str();
  t->add_option("--max-depth", train.fit.max_depth)->capture_default_str();
  t->add_option("--min-improvement", train.fit.min_split_improvement, "Absolute SSE gain (negative = auto)");
  t->add_option("--folds", train.fit.cv_folds)->capture_default_str();
  t->add_option("--cv-tolerance", train.fit.cv_tolerance)->capture_default_str();
  t->add_option("-o,--out", train.out, "Model file")->capture_default_str();

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "Phase I: control limit and diagnostic threshold");
  c->add_option("--model", cal.model, "Model file")->required();
  c->add_option("--phase1", cal.phase1, "Directory of in-control PNGs")->required();
  c->add_option("--stat", cal.stat, "ad|bp|epwma|epwmv")->capture_default_str();
  c->add_option("-w,--window", cal.w, "Moving window size (odd)")->capture_default_str();
  c->add_option("--alpha", cal.opt.alpha)->capture_default_str();
  c->add_option("--nd", cal.opt.n_d, "Target noise pixels per in-control diagnostic image")->capture_default_str();
  c->add_option("--exceedances", cal.exceedances, "Place the limit so exactly k Phase I values exceed it");
  c->add_option("--reference-dir", cal.reference_dir, "In-control PNGs for the A-D reference cdf");
  c->add_option("--tail-q", cal.tail_q, "Tail fraction for the exponential fit");
  c->add_option("--patch-p", cal.patch_p, "Patch probability p");
  c->add_flag("--epwmv-square", cal.epwmv_square, "EPWMV mean over the w x w square instead of the disk");
  c->add_option("-o,--out", cal.out, "Bundle file")->capture_default_str();

  MonitorArgs mon;
  auto* m = app.add_subcommand("monitor", "Phase II: score images, write reports and diagnostics");
  m->add_option("--bundle", mon.bundle, "Bundle file")->required();
  m->add_option("inputs", mon.inputs, "PNG files or directories")->required();
  m->add_flag("--diag-always", mon.diag_always, "Write diagnostic images even without an alarm");
  m->add_option("--nd", mon.n_d, "Override n_D for the diagnostic threshold")->check(CLI::PositiveNumber);
  m->add_flag("--export-sms", mon.export_sms, "Also write the SMS grid (.sms.f64 + .sms.json)");
  m->add_option("--summary", mon.summary, "Batch CSV name")->capture_default_str();

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Generate SAR texture images, optionally with a defect");
  s->add_option("-n,--count", sim.count)->capture_default_str();
  s->add_option("--rows", sim.sar.rows)->capture_default_str();
  s->add_option("--cols", sim.sar.cols)->capture_default_str();
  s->add_option("--phi1", sim.sar.phi1)->capture_default_str();
  s->add_option("--phi2", sim.sar.phi2)->capture_default_str();
  s->add_option("--sigma", sim.sar.sigma)->capture_default_str();
  s->add_option("--defect", sim.defect,
                "none|white_noise_ellipse|milder_ar_ellipse|black_square|white_noise_square")
      ->capture_default_str();
  s->add_option("--defect-size", sim.defect_size, "ROWSxCOLS")->capture_default_str();
  s->add_option("--defect-at", sim.defect_at, "Top-left ROW COL (random if omitted)")->expected(2);
  s->add_option("--prefix", sim.prefix)->capture_default_str();
  s->add_option("--bit-depth", sim.bit_depth, "8 or 16")->capture_default_str();

  BenchmarkArgs bench;
  auto* b = app.add_subcommand("benchmark", "Monte Carlo power study on simulated textures");
  b->add_flag("--desk-scale", bench.desk_scale, "3 replicates, 300 Phase I, 50 Phase II per defect");
  b->add_option("--replicates", bench.replicates)->capture_default_str();
  b->add_option("--phase1", bench.phase1)->capture_default_str();
  b->add_option("--phase2", bench.phase2, "Phase II images per defect size")->capture_default_str();
  b->add_option("--alpha", bench.alpha)->capture_default_str();
  b->add_option("--nd", bench.n_d)->capture_default_str();
  b->add_option("--stats", bench.stats, "KIND:W list")->capture_default_str();
  b->add_option("--defects", bench.defects, "Defect sizes ROWSxCOLS, comma separated")->capture_default_str();
  b->add_option("--defect-kind", bench.defect_kind)->capture_default_str();
  b->add_flag("--in-control", bench.in_control, "Also score defect-free Phase II images");
  b->add_flag("--epwmv-square", bench.epwmv_square);
  b->add_option("--l-candidates", bench.l_candidates)->capture_default_str();
  b->add_option("--fixed-l", bench.fixed_l)->capture_default_str();
  b->add_option("--rows", bench.sar.rows)->capture_default_str();
  b->add_option("--cols", bench.sar.cols)->capture_default_str();
  b->add_option("--phi1", bench.sar.phi1)->capture_default_str();
  b->add_option("--phi2", bench.sar.phi2)->capture_default_str();
  b->add_option("-o,--out", bench.out, "Power table CSV")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "error: code=Usage message=%s\nRun with --help for more information.\n", e.what());
    return kUsage;
  }

  auto logger = spdlog::stderr_color_mt("stsmon");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(g.log_level));
  set_thread_count(g.threads);

  try {
    std::error_code ec;
    fs::create_directories(g.out_dir, ec);
    if (ec) fail(ErrorCode::IoError, "cannot create output directory " + g.out_dir + ": " + ec.message());
    if (*t) return run_train(g, train);
    if (*c) return run_calibrate(g, cal);
    if (*m) return run_monitor(g, mon);
    if (*s) return run_simulate(g, sim);
    if (*b) return run_benchmark(g, bench);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: code=%s message=%s\n", std::string(to_string(e.code())).c_str(), e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: code=Internal message=%s\n", e.what());
    return 1;
  }
  return kUsage;
}
