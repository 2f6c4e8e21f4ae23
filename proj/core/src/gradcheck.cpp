#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "qamoe/errors.hpp"
#include "qamoe/training.hpp"

namespace qamoe {

namespace {

// Smallest gap between the k-th and (k+1)-th router logit over all modalities.
double route_gap(const ForwardTrace& trace, const ModelParams& params, std::size_t k) {
  double gap = std::numeric_limits<double>::infinity();
  for (const auto& mt : trace.modality) {
    if (k >= params.w_gate.rows()) continue;
    Vector logits = affine(params.w_gate, Vector(params.w_gate.rows(), 0.0), mt.latent.mu);
    std::sort(logits.begin(), logits.end(), std::greater<>());
    gap = std::min(gap, logits[k - 1] - logits[k]);
  }
  return gap;
}

Sample random_sample(const ModelConfig& cfg, std::uint32_t rows, SeededRng& rng) {
  Sample s;
  for (Modality m : kAllModalities) {
    s.feature(m) = Matrix(rows, cfg.input_dim(m));
    for (double& v : s.feature(m).values()) v = rng.normal();
  }
  s.label = rng.uniform(kLabelMin, kLabelMax);
  return s;
}

}  // namespace

GradCheckReport gradient_check(const ModelConfig& cfg, const GradCheckSettings& settings) {
  cfg.validate();
  if (settings.draws == 0 || settings.seq_len == 0) {
    throw InvalidInput("gradient_check: draws and seq_len must be positive");
  }
  GradCheckReport report;
  const SeededRng root(settings.seed);
  std::uint64_t attempt = 0;
  while (report.draws < settings.draws) {
    SeededRng rng = root.split(attempt++);
    if (attempt > 100ull * settings.draws) {
      throw OracleFailure("gradient_check: could not draw routing away from ties");
    }
    ModelParams params = init_params(cfg, rng.split("init"));
    // Move every entry off its structured initial value so all paths carry
    // signal (zero biases and prior would hide their gradients).
    SeededRng jitter = rng.split("jitter");
    for (auto& t : tensors(params)) {
      for (double& v : t.data) v += 0.3 * jitter.normal();
    }
    SeededRng data_rng = rng.split("sample");
    const Sample sample = random_sample(cfg, settings.seq_len, data_rng);
    const SeededRng mask_seed = rng.split("dropout");

    auto loss_at = [&](const ModelParams& p, ForwardTrace* out) {
      SeededRng masks = mask_seed;
      ForwardTrace t = forward(sample, p, cfg, {settings.dropout > 0.0, settings.dropout, &masks});
      const double l = nll_loss(t.y_hat, t.s_final, sample.label);
      if (out != nullptr) *out = std::move(t);
      return l;
    };

    ForwardTrace trace;
    loss_at(params, &trace);
    if (route_gap(trace, params, cfg.top_k) < settings.min_route_gap ||
        std::abs(trace.s_final) > kLogVarClamp - 1.0) {
      ++report.redrawn;
      continue;
    }
    const Gradients analytic = backward(trace, params, cfg, sample.label);
    const auto analytic_tensors = tensors(analytic);
    auto param_tensors = tensors(params);
    for (std::size_t ti = 0; ti < param_tensors.size(); ++ti) {
      auto& pt = param_tensors[ti];
      const Vector original(pt.data.begin(), pt.data.end());
      const auto f = [&](std::span<const double> x) {
        std::copy(x.begin(), x.end(), pt.data.begin());
        return loss_at(params, nullptr);
      };
      const Vector numeric = finite_diff_grad(f, original, settings.step);
      std::copy(original.begin(), original.end(), pt.data.begin());
      const auto& at = analytic_tensors[ti];
      for (std::size_t i = 0; i < numeric.size(); ++i) {
        const double a = at.data[i];
        const double n = numeric[i];
        const double denom = std::max({std::abs(a), std::abs(n), settings.abs_floor});
        const double rel = a == n ? 0.0 : std::abs(a - n) / denom;
        ++report.entries;
        if (!(rel <= report.max_rel_error)) {
          report.max_rel_error = rel;
          report.worst_tensor = pt.name;
          report.worst_analytic = a;
          report.worst_numeric = n;
        }
      }
    }
    ++report.draws;
  }
  return report;
}

}  // namespace qamoe
