#include "qamoe/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <string>
#include <thread>

#include "qamoe/errors.hpp"

namespace qamoe {

namespace {

void require_same_length(std::span<const double> a, std::span<const double> b,
                         const char* what) {
  if (a.size() != b.size()) {
    throw InvalidInput(std::string(what) + ": prediction and label counts differ");
  }
}

std::string fixed(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

// Fewest decimals (at least min_decimals, at most 6) that print v exactly
// enough to read back the same value at 1e-9.
std::string axis_label(double v, int min_decimals) {
  for (int p = min_decimals; p < 6; ++p) {
    const std::string s = fixed(v, p);
    if (std::abs(std::stod(s) - v) < 1e-9) return s;
  }
  return fixed(v, 6);
}

bool degenerate(const Range& r) { return r.lo == r.hi; }

std::string cell_label(double eta, double lambda) {
  return "grid cell (eta=" + fixed(eta, 2) + ", lambda=" + fixed(lambda, 2) + ")";
}

}  // namespace

int acc7_bin(double score) {
  const double rounded = std::round(score);  // half away from zero
  return static_cast<int>(std::clamp(rounded, kLabelMin, kLabelMax));
}

BinaryMetrics binary_metrics(std::span<const double> preds, std::span<const double> labels) {
  require_same_length(preds, labels, "binary_metrics");
  std::size_t n = 0;
  std::size_t correct = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 0.0) continue;
    ++n;
    const bool truth = labels[i] > 0.0;
    const bool guess = preds[i] > 0.0;
    if (truth == guess) ++correct;
    if (truth && guess) ++tp;
    if (!truth && guess) ++fp;
    if (truth && !guess) ++fn;
  }
  if (n == 0) throw UndefinedMetric("binary_metrics: no nonzero labels");
  BinaryMetrics out;
  out.acc2 = static_cast<double>(correct) / static_cast<double>(n);
  const std::size_t denom = 2 * tp + fp + fn;
  out.f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  return out;
}

double mae(std::span<const double> preds, std::span<const double> labels) {
  require_same_length(preds, labels, "mae");
  if (labels.empty()) throw UndefinedMetric("mae: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) total += std::abs(preds[i] - labels[i]);
  return total / static_cast<double>(labels.size());
}

double pearson_corr(std::span<const double> preds, std::span<const double> labels) {
  require_same_length(preds, labels, "pearson_corr");
  if (labels.size() < 2) throw UndefinedMetric("pearson_corr: need at least two samples");
  const auto n = static_cast<double>(labels.size());
  double mp = 0.0;
  double ml = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    mp += preds[i];
    ml += labels[i];
  }
  mp /= n;
  ml /= n;
  double cov = 0.0;
  double vp = 0.0;
  double vl = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double a = preds[i] - mp;
    const double b = labels[i] - ml;
    cov += a * b;
    vp += a * a;
    vl += b * b;
  }
  if (vp == 0.0 || vl == 0.0) throw UndefinedMetric("pearson_corr: zero-variance input");
  return std::clamp(cov / std::sqrt(vp * vl), -1.0, 1.0);
}

MetricsRecord compute_metrics(std::span<const double> preds, std::span<const double> labels) {
  require_same_length(preds, labels, "compute_metrics");
  MetricsRecord rec;
  rec.n = labels.size();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (acc7_bin(preds[i]) == acc7_bin(labels[i])) ++hits;
  }
  rec.acc7 = labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(rec.n);
  const auto bin = binary_metrics(preds, labels);
  rec.acc2 = bin.acc2;
  rec.f1 = bin.f1;
  rec.mae = mae(preds, labels);
  rec.corr = pearson_corr(preds, labels);
  return rec;
}

Predictions predict_split(const Checkpoint& checkpoint, std::span<const Sample> split,
                          const DegradationSpec& spec, const ReferenceStats& stats,
                          bool record_gates) {
  spec.validate();
  const auto* mixture = std::get_if<StochasticMixture>(&spec.protocol);
  const bool per_sample_coeffs =
      mixture != nullptr && !(degenerate(mixture->lambda) && degenerate(mixture->eta));
  const SeededRng root(spec.seed);

  Predictions out;
  out.y_hat.reserve(split.size());
  out.s_final.reserve(split.size());
  out.labels.reserve(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) {
    SeededRng rng = root.split(static_cast<std::uint64_t>(i));
    DegradationSpec local = spec;
    if (per_sample_coeffs) {
      const BatchCoeffs c = sample_batch_coeffs(spec.protocol, rng);
      local.lambda = {c.lambda, c.lambda, c.lambda};
      local.eta = c.eta;
    }
    const Sample input = degrade_sample(split[i], local, stats, rng).first;
    const ForwardTrace trace = forward(input, checkpoint.params, checkpoint.config);
    out.y_hat.push_back(trace.y_hat);
    out.s_final.push_back(trace.s_final);
    out.labels.push_back(split[i].label);
    for (Modality m : kAllModalities) {
      const auto& mt = trace.at(m);
      out.mean_r[index_of(m)] += mt.raw_quality;
      if (record_gates) {
        out.gates.push_back({static_cast<std::uint64_t>(i), m, mt.raw_quality,
                             mt.routing.dense});
      }
    }
  }
  if (!split.empty()) {
    for (double& r : out.mean_r) r /= static_cast<double>(split.size());
  }
  return out;
}

MetricsRecord evaluate(const Checkpoint& checkpoint, std::span<const Sample> split,
                       const DegradationSpec& spec, const ReferenceStats& stats) {
  const Predictions p = predict_split(checkpoint, split, spec, stats);
  return compute_metrics(p.y_hat, p.labels);
}

void GridSpec::validate() const {
  auto check = [](const std::vector<double>& values, const char* name) {
    if (values.empty()) throw InvalidInput(std::string("grid ") + name + " list is empty");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i] < 0.0 || values[i] > 1.0) {
        throw InvalidInput(std::string("grid ") + name + " values must lie in [0, 1]");
      }
      if (i > 0 && values[i] <= values[i - 1]) {
        throw InvalidInput(std::string("grid ") + name + " values must be strictly increasing");
      }
    }
  };
  check(lambda_values, "lambda");
  check(eta_values, "eta");
}

std::uint64_t cell_seed(const GridSpec& grid, std::size_t eta_index, std::size_t lambda_index) {
  return grid.seed + eta_index * grid.lambda_values.size() + lambda_index;
}

GridResult grid_sweep(const Checkpoint& checkpoint, std::span<const Sample> split,
                      const ReferenceStats& stats, const GridSpec& grid, unsigned jobs) {
  grid.validate();
  const std::size_t n_eta = grid.eta_values.size();
  const std::size_t n_lambda = grid.lambda_values.size();
  const std::size_t total = n_eta * n_lambda;

  GridResult result;
  result.lambda_values = grid.lambda_values;
  result.eta_values = grid.eta_values;
  result.cells.assign(n_eta, std::vector<MetricsRecord>(n_lambda));
  result.checkpoint_fingerprint = fingerprint(checkpoint);

  std::vector<std::exception_ptr> errors(total);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next.fetch_add(1); c < total; c = next.fetch_add(1)) {
      const std::size_t ei = c / n_lambda;
      const std::size_t li = c % n_lambda;
      try {
        const auto spec = DegradationSpec::cell(grid.lambda_values[li], grid.eta_values[ei],
                                                cell_seed(grid, ei, li));
        result.cells[ei][li] = evaluate(checkpoint, split, spec, stats);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  const unsigned n_workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(total)));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t c = 0; c < total; ++c) {
    if (!errors[c]) continue;
    const std::string where =
        cell_label(grid.eta_values[c / n_lambda], grid.lambda_values[c % n_lambda]);
    try {
      std::rethrow_exception(errors[c]);
    } catch (const UndefinedMetric& e) {
      throw UndefinedMetric(where + ": " + e.what());
    } catch (const std::exception& e) {
      throw Error(where + ": " + e.what());
    }
  }
  return result;
}

std::string_view grid_metric_name(GridMetric m) noexcept {
  switch (m) {
    case GridMetric::kAcc7:
      return "acc7";
    case GridMetric::kAcc2:
      return "acc2";
    case GridMetric::kF1:
      return "f1";
    case GridMetric::kMae:
      return "mae";
    case GridMetric::kCorr:
      return "corr";
  }
  return "?";
}

std::string grid_csv(const GridResult& grid, GridMetric metric) {
  std::string out = "eta\\lambda";
  for (double l : grid.lambda_values) out += "," + axis_label(l, 1);
  out += '\n';
  for (std::size_t ei = 0; ei < grid.eta_values.size(); ++ei) {
    out += axis_label(grid.eta_values[ei] * 100.0, 0) + "%";
    for (std::size_t li = 0; li < grid.lambda_values.size(); ++li) {
      const auto& c = grid.at(ei, li);
      out += ',';
      switch (metric) {
        case GridMetric::kAcc7:
          out += fixed(c.acc7 * 100.0, 2);
          break;
        case GridMetric::kAcc2:
          out += fixed(c.acc2 * 100.0, 2);
          break;
        case GridMetric::kF1:
          out += fixed(c.f1 * 100.0, 2);
          break;
        case GridMetric::kMae:
          out += fixed(c.mae, 4);
          break;
        case GridMetric::kCorr:
          out += fixed(c.corr, 4);
          break;
      }
    }
    out += '\n';
  }
  return out;
}

std::string metrics_csv_header() { return "condition,n,acc7,acc2,f1,mae,corr\n"; }

std::string metrics_csv_row(const std::string& label, const MetricsRecord& m) {
  return label + "," + std::to_string(m.n) + "," + fixed(m.acc7 * 100.0, 2) + "," +
         fixed(m.acc2 * 100.0, 2) + "," + fixed(m.f1 * 100.0, 2) + "," + fixed(m.mae, 4) +
         "," + fixed(m.corr, 4) + "\n";
}

std::string gates_csv(std::span<const GateRecord> gates, std::size_t n_experts) {
  std::string out = "sample_id,modality,r";
  for (std::size_t i = 1; i <= n_experts; ++i) out += ",g_" + std::to_string(i);
  out += '\n';
  for (const auto& g : gates) {
    out += std::to_string(g.sample_id) + "," + std::string(modality_name(g.modality)) + "," +
           fixed(g.r, 6);
    for (double v : g.gate) out += "," + fixed(v, 6);
    out += '\n';
  }
  return out;
}

DegradationSpec mixture_spec(const StochasticMixture& ranges, std::uint64_t seed) {
  DegradationSpec spec;
  spec.lambda = {ranges.lambda.lo, ranges.lambda.lo, ranges.lambda.lo};
  spec.eta = ranges.eta.lo;
  spec.protocol = ranges;
  spec.seed = seed;
  return spec;
}

AblationResult ablate(Variant variant, const Dataset& dataset, ModelConfig model_cfg,
                      TrainConfig train_cfg, std::uint64_t eval_seed) {
  model_cfg.variant = variant;
  train_cfg.mode = TrainingMode::kSpectrum;
  AblationResult out;
  out.variant = variant;
  out.training = train(dataset, model_cfg, train_cfg);
  const ReferenceStats stats = compute_reference_stats(dataset.train());
  out.metrics = evaluate(out.training.best, dataset.test(),
                         mixture_spec(train_cfg.spectrum, eval_seed), stats);
  return out;
}

}  // namespace qamoe
