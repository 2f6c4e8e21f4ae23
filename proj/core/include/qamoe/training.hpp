#pragma once

// Heteroscedastic NLL, analytic backpropagation through a ForwardTrace, Adam
// with global-norm clipping and decoupled weight decay, and the training loop
// (clean or with per-batch stochastic degradation).

#include <atomic>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qamoe/degradation.hpp"
#include "qamoe/model.hpp"
#include "qamoe/numerics.hpp"
#include "qamoe/synthdata.hpp"

namespace qamoe {

// s is clamped to [-kLogVarClamp, kLogVarClamp] inside the exponential.
inline constexpr double kLogVarClamp = 10.0;

// 0.5 * exp(-s) * (y - y_hat)^2 + 0.5 * s
double nll_loss(double y_hat, double s, double y);
double nll_loss(std::span<const double> y_hat, std::span<const double> s,
                std::span<const double> y);
double loss_grad_s(double y_hat, double s, double y);
double loss_grad_y_hat(double y_hat, double s, double y);

// Gradient of nll_loss(trace.y_hat, trace.s_final, y) with respect to every
// parameter. Unselected experts and gate entries get exactly zero.
Gradients backward(const ForwardTrace& trace, const ModelParams& params,
                   const ModelConfig& cfg, double y);

enum class TrainingMode : std::uint8_t { kClean, kSpectrum };
std::string_view training_mode_name(TrainingMode m) noexcept;
TrainingMode parse_training_mode(std::string_view name);

struct AdamSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
  double grad_clip = 1.0;
};

struct TrainConfig {
  std::uint32_t epochs = 30;
  std::uint32_t batch_size = 16;
  AdamSettings adam;
  double dropout = 0.1;
  std::uint64_t seed = 1111;
  TrainingMode mode = TrainingMode::kSpectrum;
  // Per-batch coefficient ranges in spectrum mode.
  StochasticMixture spectrum{};

  void validate() const;
};

struct OptimizerState {
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;
};

OptimizerState make_optimizer_state(const ModelConfig& cfg);

double global_norm(const Gradients& grads);
// Scales grads so the global L2 norm is at most max_norm. Returns the norm
// before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

// One Adam update of a single tensor; step is the 1-based step index.
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, std::uint64_t step, const AdamSettings& s, bool decays);

// Clips grads in place, then applies decoupled weight decay and a
// bias-corrected Adam step. Throws DivergenceError on non-finite gradients.
void adam_step(ModelParams& params, Gradients& grads, OptimizerState& state,
               const AdamSettings& settings);

// Cosine annealing from base_lr to zero over total_epochs.
double cosine_lr(double base_lr, std::uint32_t epoch, std::uint32_t total_epochs);

struct EpochReport {
  std::uint32_t epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  std::array<double, kNumModalities> mean_r{};
  double lambda_mean = 0.0;
  double eta_mean = 0.0;
};

struct TrainHooks {
  // Incremented once per degrade_sample call made by the loop.
  std::atomic<std::uint64_t>* degrade_calls = nullptr;
};

struct TrainResult {
  Checkpoint best;             // lowest validation MAE
  std::uint32_t best_epoch = 0;
  std::vector<EpochReport> report;
};

TrainResult train(const Dataset& dataset, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const TrainHooks& hooks = {});

struct GradCheckSettings {
  std::uint32_t draws = 20;
  double step = 1e-5;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
  double abs_floor = 1e-5;
  // Draws whose top-k cut has a logit gap below this are redrawn, since a
  // finite-difference step could swap the selected experts.
  double min_route_gap = 1e-3;
  std::uint64_t seed = 1111;
  // Sequence length of the random samples.
  std::uint32_t seq_len = 3;
  // Training-mode forward with fixed dropout masks.
  double dropout = 0.1;
};

struct GradCheckReport {
  std::uint32_t draws = 0;
  std::uint32_t redrawn = 0;
  std::uint64_t entries = 0;
  double max_rel_error = 0.0;
  std::string worst_tensor;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares backward() with central finite differences of nll_loss over every
// parameter entry, for random parameters and samples.
GradCheckReport gradient_check(const ModelConfig& cfg, const GradCheckSettings& settings = {});

// epoch,train_loss,val_mae,mean_r_text,mean_r_audio,mean_r_vision,lambda_mean,eta_mean
std::string loss_report_csv(std::span<const EpochReport> report);

}  // namespace qamoe
