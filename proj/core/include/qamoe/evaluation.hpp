#pragma once

// Regression/sentiment metrics, protocol evaluation of a checkpoint, the
// (eta, lambda) reliability grid and model-variant ablations.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qamoe/degradation.hpp"
#include "qamoe/model.hpp"
#include "qamoe/synthdata.hpp"
#include "qamoe/training.hpp"

namespace qamoe {

struct MetricsRecord {
  double acc7 = 0.0;
  double acc2 = 0.0;
  double f1 = 0.0;
  double mae = 0.0;
  double corr = 0.0;
  std::uint64_t n = 0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

// Round half away from zero, clamp to [-3, 3].
int acc7_bin(double score);

struct BinaryMetrics {
  double acc2 = 0.0;
  double f1 = 0.0;
};

// Zero labels are excluded; the positive class is value > 0.
BinaryMetrics binary_metrics(std::span<const double> preds, std::span<const double> labels);
double mae(std::span<const double> preds, std::span<const double> labels);
double pearson_corr(std::span<const double> preds, std::span<const double> labels);
MetricsRecord compute_metrics(std::span<const double> preds, std::span<const double> labels);

struct GateRecord {
  std::uint64_t sample_id = 0;
  Modality modality = Modality::kText;
  double r = 0.0;
  Vector gate;  // dense gate over all experts
};

struct Predictions {
  std::vector<double> y_hat;
  std::vector<double> s_final;
  std::vector<double> labels;
  // Mean r per modality over the split.
  std::array<double, kNumModalities> mean_r{};
  std::vector<GateRecord> gates;  // filled only when requested
};

// Degrades each sample of the split per spec (sample i uses the substream
// seed(spec.seed).split(i)) and runs eval-mode forward passes. Under
// StochasticMixture with a non-degenerate range each sample draws its own
// (lambda, eta).
Predictions predict_split(const Checkpoint& checkpoint, std::span<const Sample> split,
                          const DegradationSpec& spec, const ReferenceStats& stats,
                          bool record_gates = false);

MetricsRecord evaluate(const Checkpoint& checkpoint, std::span<const Sample> split,
                       const DegradationSpec& spec, const ReferenceStats& stats);

struct GridSpec {
  std::vector<double> lambda_values = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  std::vector<double> eta_values = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  std::uint64_t seed = 1111;

  void validate() const;
};

struct GridResult {
  std::vector<double> lambda_values;
  std::vector<double> eta_values;
  std::vector<std::vector<MetricsRecord>> cells;  // [eta][lambda]
  std::uint64_t checkpoint_fingerprint = 0;

  const MetricsRecord& at(std::size_t eta_index, std::size_t lambda_index) const {
    return cells.at(eta_index).at(lambda_index);
  }
};

// Seed for cell (eta_index, lambda_index): grid.seed + eta_index * n_lambda + lambda_index.
std::uint64_t cell_seed(const GridSpec& grid, std::size_t eta_index, std::size_t lambda_index);

// One evaluate() per cell with uniform lambda across modalities. jobs > 1
// evaluates cells on a worker pool; results do not depend on jobs.
GridResult grid_sweep(const Checkpoint& checkpoint, std::span<const Sample> split,
                      const ReferenceStats& stats, const GridSpec& grid, unsigned jobs = 1);

enum class GridMetric { kAcc7, kAcc2, kF1, kMae, kCorr };
std::string_view grid_metric_name(GridMetric m) noexcept;

// Header "eta\lambda,0.0,...", one row per eta ("0%", "10%", ...). Accuracy
// metrics are percentages with 2 decimals; MAE and Corr use 4 decimals.
std::string grid_csv(const GridResult& grid, GridMetric metric);

std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& label, const MetricsRecord& m);

// sample_id,modality,r,g_1..g_N
std::string gates_csv(std::span<const GateRecord> gates, std::size_t n_experts);

struct AblationResult {
  Variant variant = Variant::kFull;
  MetricsRecord metrics;
  TrainResult training;
};

// Trains the variant in spectrum mode and evaluates it on the test split
// under Protocol III (the train config's spectrum ranges, eval_seed).
AblationResult ablate(Variant variant, const Dataset& dataset, ModelConfig model_cfg,
                      TrainConfig train_cfg, std::uint64_t eval_seed);

// Protocol III evaluation spec with the given coefficient ranges.
DegradationSpec mixture_spec(const StochasticMixture& ranges, std::uint64_t seed);

}  // namespace qamoe
