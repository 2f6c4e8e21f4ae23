#include "commands.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace qamoe::cli {

namespace {

namespace fs = std::filesystem;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

struct Loaded {
  Dataset dataset;
  ReferenceStats stats;
};

Loaded load_for_eval(const fs::path& dataset_path) {
  Dataset d = load_dataset(dataset_path);
  ReferenceStats stats = compute_reference_stats(d.train());
  return {std::move(d), stats};
}

void check_compatible(const Checkpoint& ck, const Dataset& d) {
  for (Modality m : kAllModalities) {
    if (ck.config.input_dim(m) != d.spec().shape(m).feature_dim) {
      throw InvalidInput("checkpoint expects " + std::to_string(ck.config.input_dim(m)) + " " +
                         std::string(modality_name(m)) + " features but the dataset has " +
                         std::to_string(d.spec().shape(m).feature_dim));
    }
  }
}

}  // namespace

std::string grid_file_name(GridMetric metric) {
  return "grid_" + std::string(grid_metric_name(metric)) + ".csv";
}

void write_text_validated(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    if (!out.flush()) throw IoError("write failed for " + path.string());
  }
  if (read_text(path) != content) throw OutputError(path.string() + " did not read back as written");
}

std::string hex_fingerprint(std::uint64_t fp) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fp));
  return buf;
}

GenSummary cmd_gen(const RunConfig& cfg, const fs::path& out_dir) {
  ensure_dir(out_dir);
  const Dataset d = generate(cfg.dataset);
  GenSummary s{out_dir / kDatasetFile, d.fingerprint()};
  save(d, s.dataset);
  const Dataset back = load_dataset(s.dataset);
  if (back.fingerprint() != d.fingerprint() || !(back == d)) {
    throw OutputError(s.dataset.string() + " did not read back as written");
  }
  write_text_validated(out_dir / kFingerprintFile, hex_fingerprint(d.fingerprint()) + "\n");
  return s;
}

TrainSummary cmd_train(const RunConfig& cfg, const fs::path& out_dir,
                       const fs::path& dataset_path, const TrainHooks& hooks) {
  const Dataset d = load_dataset(dataset_path);
  ModelConfig mc = cfg.model;
  mc.input_dims = ModelConfig::for_dataset(d.spec()).input_dims;
  const TrainResult r = train(d, mc, cfg.train, hooks);

  ensure_dir(out_dir);
  TrainSummary s{out_dir / kCheckpointFile, r.best_epoch, r.report};
  save(r.best, s.checkpoint);
  const Checkpoint back = load_checkpoint(s.checkpoint);
  if (fingerprint(back) != fingerprint(r.best)) {
    throw OutputError(s.checkpoint.string() + " did not read back as written");
  }
  write_text_validated(out_dir / kLossFile, loss_report_csv(r.report));
  return s;
}

EvalSummary cmd_eval(const RunConfig& cfg, const fs::path& out_dir, const fs::path& dataset_path,
                     const fs::path& checkpoint_path) {
  const Loaded data = load_for_eval(dataset_path);
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  check_compatible(ck, data.dataset);
  const DegradationSpec spec = cfg.eval.to_spec();
  const Predictions p = predict_split(ck, data.dataset.test(), spec, data.stats, true);

  EvalSummary s{cfg.eval.condition(), compute_metrics(p.y_hat, p.labels)};
  write_text_validated(out_dir / kMetricsFile,
                       metrics_csv_header() + metrics_csv_row(s.condition, s.metrics));
  write_text_validated(out_dir / kGatesFile, gates_csv(p.gates, ck.config.n_experts));
  return s;
}

GridResult cmd_grid(const RunConfig& cfg, const fs::path& out_dir, const fs::path& dataset_path,
                    const fs::path& checkpoint_path, unsigned jobs) {
  const Loaded data = load_for_eval(dataset_path);
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  check_compatible(ck, data.dataset);
  GridResult g = grid_sweep(ck, data.dataset.test(), data.stats, cfg.grid, jobs);
  for (GridMetric m : {GridMetric::kAcc7, GridMetric::kAcc2, GridMetric::kF1, GridMetric::kMae,
                       GridMetric::kCorr}) {
    write_text_validated(out_dir / grid_file_name(m), grid_csv(g, m));
  }
  return g;
}

std::vector<AblationResult> cmd_ablate(const RunConfig& cfg, const fs::path& out_dir,
                                       const fs::path& dataset_path,
                                       const std::vector<Variant>& variants) {
  const Dataset d = load_dataset(dataset_path);
  ModelConfig mc = cfg.model;
  mc.input_dims = ModelConfig::for_dataset(d.spec()).input_dims;
  TrainConfig tc = cfg.train;
  tc.mode = TrainingMode::kSpectrum;

  std::vector<AblationResult> results;
  std::string csv = metrics_csv_header();
  for (Variant v : variants) {
    results.push_back(ablate(v, d, mc, tc, cfg.eval.seed));
    csv += metrics_csv_row(std::string(variant_name(v)), results.back().metrics);
  }
  write_text_validated(out_dir / kAblationFile, csv);
  return results;
}

GradCheckSummary cmd_gradcheck(const GradCheckOptions& options) {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_experts = 4;
  cfg.top_k = 2;
  cfg.glu_hidden = 16;
  GradCheckSettings settings;
  settings.draws = options.draws;
  settings.seed = options.seed;

  GradCheckSummary s;
  s.passed = true;
  for (Variant v : {Variant::kFull, Variant::kNoQualityGating, Variant::kNoVariance,
                    Variant::kNoPrior}) {
    cfg.variant = v;
    GradCheckReport r = gradient_check(cfg, settings);
    s.passed = s.passed && r.max_rel_error <= options.tolerance;
    s.reports.emplace_back(v, std::move(r));
  }
  return s;
}

}  // namespace qamoe::cli
