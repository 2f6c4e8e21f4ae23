#include "qamoe/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "qamoe/errors.hpp"

namespace qamoe {

namespace {

double clamp_log_var(double s) { return std::clamp(s, -kLogVarClamp, kLogVarClamp); }

bool gated(const ModelConfig& cfg) {
  return cfg.variant == Variant::kFull || cfg.variant == Variant::kNoPrior;
}

void add_scaled(std::span<double> into, double alpha, std::span<const double> x) {
  axpy(alpha, x, into);
}

void check_trace(const ForwardTrace& trace, const ModelParams& params, const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  bool ok = trace.fused.size() == d && trace.h.size() == d && params.b_fuse.size() == d &&
            params.experts.size() == cfg.n_experts;
  for (const auto& mt : trace.modality) {
    ok = ok && mt.output.size() == d && mt.latent.mu.size() == d &&
         mt.routing.dense.size() == cfg.n_experts && mt.experts.size() == cfg.top_k;
  }
  if (!ok) throw InvalidInput("backward: trace does not match parameter shapes");
}

// Accumulates scale * dL/dparams into grads.
void accumulate_backward(const ForwardTrace& trace, const ModelParams& params,
                         const ModelConfig& cfg, double y, double scale, Gradients& grads) {
  check_trace(trace, params, cfg);
  const std::size_t d = cfg.d_model;
  const double g_yhat = scale * loss_grad_y_hat(trace.y_hat, trace.s_final, y);
  const double g_s = scale * loss_grad_s(trace.y_hat, trace.s_final, y);

  add_outer(grads.w_y, std::span<const double>(&g_yhat, 1), trace.h);
  grads.b_y[0] += g_yhat;
  add_outer(grads.w_s, std::span<const double>(&g_s, 1), trace.h);
  grads.b_s[0] += g_s;

  Vector dh(d, 0.0);
  add_scaled(dh, g_yhat, params.w_y.row(0));
  add_scaled(dh, g_s, params.w_s.row(0));
  if (!trace.h_mask.empty()) {
    for (std::size_t j = 0; j < d; ++j) dh[j] *= trace.h_mask[j];
  }

  Vector concat;
  concat.reserve(kNumModalities * d);
  for (const auto& mt : trace.modality) {
    concat.insert(concat.end(), mt.output.begin(), mt.output.end());
  }
  add_outer(grads.w_fuse, dh, concat);
  add_scaled(grads.b_fuse, 1.0, dh);
  const Vector d_concat = matvec_transposed(params.w_fuse, dh);

  for (Modality m : kAllModalities) {
    const auto& mt = trace.at(m);
    const auto& head = params.modality[index_of(m)];
    auto& ghead = grads.modality[index_of(m)];
    const std::span<const double> dy(d_concat.data() + index_of(m) * d, d);
    const double r = mt.quality;

    if (cfg.variant != Variant::kNoPrior) {
      add_scaled(grads.y_prior.row(cfg.prior_per_modality ? index_of(m) : 0), 1.0 - r, dy);
    }

    Vector d_mu(d, 0.0);
    const auto& gate_dense = mt.routing.dense;
    const auto& gate_sparse = mt.routing.sparse;
    Vector d_sparse(cfg.n_experts, 0.0);
    for (const auto& et : mt.experts) {
      const std::size_t i = et.index;
      // y_m depends on expert i through r * sparse_i * E_i.
      d_sparse[i] = r * dot(dy, et.output);
      Vector d_out(dy.begin(), dy.end());
      for (double& v : d_out) v *= r * gate_sparse[i];

      const auto& e = params.experts[i];
      auto& ge = grads.experts[i];
      add_outer(ge.w_o, d_out, et.hidden);
      add_scaled(ge.b_o, 1.0, d_out);
      const Vector d_hidden = matvec_transposed(e.w_o, d_out);
      Vector d_lin(d_hidden.size());
      Vector d_gate_pre(d_hidden.size());
      for (std::size_t j = 0; j < d_hidden.size(); ++j) {
        d_lin[j] = d_hidden[j] * et.gate[j];
        d_gate_pre[j] = d_hidden[j] * et.linear[j] * et.gate[j] * (1.0 - et.gate[j]);
      }
      add_outer(ge.w_a, d_lin, mt.latent.mu);
      add_scaled(ge.b_a, 1.0, d_lin);
      add_outer(ge.w_b, d_gate_pre, mt.latent.mu);
      add_scaled(ge.b_b, 1.0, d_gate_pre);
      add_scaled(d_mu, 1.0, matvec_transposed(e.w_a, d_lin));
      add_scaled(d_mu, 1.0, matvec_transposed(e.w_b, d_gate_pre));
    }

    // Renormalization over survivors: sparse_i = dense_i / Z.
    double z = 0.0;
    double weighted = 0.0;
    for (std::size_t i : mt.routing.selected) {
      z += gate_dense[i];
      weighted += gate_sparse[i] * d_sparse[i];
    }
    Vector d_dense(cfg.n_experts, 0.0);
    for (std::size_t i : mt.routing.selected) d_dense[i] = (d_sparse[i] - weighted) / z;
    const double centre = dot(gate_dense, d_dense);
    Vector d_logits(cfg.n_experts);
    for (std::size_t i = 0; i < cfg.n_experts; ++i) {
      d_logits[i] = gate_dense[i] * (d_dense[i] - centre);
    }
    add_outer(grads.w_gate, d_logits, mt.latent.mu);
    add_scaled(d_mu, 1.0, matvec_transposed(params.w_gate, d_logits));

    add_outer(ghead.w_mu, d_mu, mt.input);
    add_scaled(ghead.b_mu, 1.0, d_mu);
    Vector d_x = matvec_transposed(head.w_mu, d_mu);

    if (gated(cfg)) {
      Vector diff(d);
      for (std::size_t j = 0; j < d; ++j) diff[j] = mt.mixture[j] - mt.prior[j];
      const double d_r = dot(dy, diff);
      // r = 1 / (1 + mean(var))  =>  dr/dvar_k = -r^2 / d
      const double d_var = -d_r * r * r / static_cast<double>(d);
      Vector d_logit_var(d);
      for (std::size_t j = 0; j < d; ++j) d_logit_var[j] = d_var * sigmoid(mt.var_logits[j]);
      add_outer(ghead.w_sigma, d_logit_var, mt.input);
      add_scaled(ghead.b_sigma, 1.0, d_logit_var);
      add_scaled(d_x, 1.0, matvec_transposed(head.w_sigma, d_logit_var));
    }

    if (!mt.input_mask.empty()) {
      for (std::size_t j = 0; j < d; ++j) d_x[j] *= mt.input_mask[j];
    }
    add_outer(ghead.w_in, d_x, mt.pooled);
    add_scaled(ghead.b_in, 1.0, d_x);
  }
}

std::string format_double(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

}  // namespace

double nll_loss(double y_hat, double s, double y) {
  const double residual = y - y_hat;
  return 0.5 * std::exp(-clamp_log_var(s)) * residual * residual + 0.5 * s;
}

double nll_loss(std::span<const double> y_hat, std::span<const double> s,
                std::span<const double> y) {
  if (y_hat.size() != s.size() || y_hat.size() != y.size() || y.empty()) {
    throw InvalidInput("nll_loss: batch vectors must be nonempty and equally long");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) total += nll_loss(y_hat[i], s[i], y[i]);
  return total / static_cast<double>(y.size());
}

double loss_grad_s(double y_hat, double s, double y) {
  const double residual = y - y_hat;
  const bool inside = s >= -kLogVarClamp && s <= kLogVarClamp;
  const double exp_term = inside ? 0.5 * std::exp(-s) * residual * residual : 0.0;
  return 0.5 - exp_term;
}

double loss_grad_y_hat(double y_hat, double s, double y) {
  return -std::exp(-clamp_log_var(s)) * (y - y_hat);
}

Gradients backward(const ForwardTrace& trace, const ModelParams& params,
                   const ModelConfig& cfg, double y) {
  check_shapes(params, cfg);
  Gradients grads = zeros_like(cfg);
  accumulate_backward(trace, params, cfg, y, 1.0, grads);
  return grads;
}

std::string_view training_mode_name(TrainingMode m) noexcept {
  return m == TrainingMode::kClean ? "clean" : "spectrum";
}

TrainingMode parse_training_mode(std::string_view name) {
  if (name == "clean") return TrainingMode::kClean;
  if (name == "spectrum") return TrainingMode::kSpectrum;
  throw InvalidInput("unknown training mode '" + std::string(name) +
                     "' (expected clean or spectrum)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw InvalidInput("train epochs must be positive");
  if (batch_size == 0) throw InvalidInput("train batch_size must be positive");
  if (!(adam.lr > 0.0)) throw InvalidInput("train lr must be positive");
  if (!(adam.grad_clip > 0.0)) throw InvalidInput("train grad_clip must be positive");
  if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0) {
    throw InvalidInput("train adam betas must lie in [0, 1)");
  }
  if (adam.weight_decay < 0.0) throw InvalidInput("train weight_decay must be nonnegative");
  if (dropout < 0.0 || dropout >= 1.0) throw InvalidInput("train dropout must lie in [0, 1)");
  DegradationSpec probe;
  probe.protocol = spectrum;
  probe.validate();
}

OptimizerState make_optimizer_state(const ModelConfig& cfg) {
  return {zeros_like(cfg), zeros_like(cfg), 0};
}

double global_norm(const Gradients& grads) {
  double sq = 0.0;
  for (const auto& t : tensors(grads)) {
    for (double v : t.data) sq += v * v;
  }
  return std::sqrt(sq);
}

double clip_global_norm(Gradients& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw InvalidInput("clip_global_norm: max_norm must be positive");
  const double norm = global_norm(grads);
  if (std::isfinite(norm) && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& t : tensors(grads)) {
      for (double& v : t.data) v *= factor;
    }
  }
  return norm;
}

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, std::uint64_t step, const AdamSettings& s, bool decays) {
  if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size()) {
    throw InvalidInput("adam_update: tensor sizes differ");
  }
  if (step == 0) throw InvalidInput("adam_update: step index is 1-based");
  const double t = static_cast<double>(step);
  const double bias1 = 1.0 - std::pow(s.beta1, t);
  const double bias2 = 1.0 - std::pow(s.beta2, t);
  const double shrink = decays ? 1.0 - s.lr * s.weight_decay : 1.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * grad[i];
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / bias1;
    const double v_hat = v[i] / bias2;
    param[i] = param[i] * shrink - s.lr * m_hat / (std::sqrt(v_hat) + s.eps);
  }
}

void adam_step(ModelParams& params, Gradients& grads, OptimizerState& state,
               const AdamSettings& settings) {
  const double norm = clip_global_norm(grads, settings.grad_clip);
  if (!std::isfinite(norm)) {
    throw DivergenceError("non-finite gradient norm at optimizer step " +
                          std::to_string(state.step + 1));
  }
  ++state.step;
  auto p = tensors(params);
  const auto g = tensors(grads);
  auto m = tensors(state.m);
  auto v = tensors(state.v);
  for (std::size_t i = 0; i < p.size(); ++i) {
    adam_update(p[i].data, g[i].data, m[i].data, v[i].data, state.step, settings,
                p[i].decays);
  }
}

double cosine_lr(double base_lr, std::uint32_t epoch, std::uint32_t total_epochs) {
  if (total_epochs == 0) return base_lr;
  const double progress = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainResult train(const Dataset& dataset, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const TrainHooks& hooks) {
  model_cfg.validate();
  train_cfg.validate();
  for (Modality m : kAllModalities) {
    if (model_cfg.input_dim(m) != dataset.spec().shape(m).feature_dim) {
      throw InvalidInput("train: model input dim for " + std::string(modality_name(m)) +
                         " does not match the dataset");
    }
  }
  const auto train_split = dataset.train();
  const auto val_split = dataset.val();
  const bool spectrum = train_cfg.mode == TrainingMode::kSpectrum;

  const SeededRng root(train_cfg.seed);
  ModelParams params = init_params(model_cfg, root.split("init"));
  OptimizerState opt = make_optimizer_state(model_cfg);
  SeededRng shuffle_rng = root.split("shuffle");
  SeededRng degrade_rng = root.split("degradation");
  SeededRng dropout_rng = root.split("dropout");

  ReferenceStats stats;
  if (spectrum) stats = compute_reference_stats(train_split);

  auto degrade = [&](const Sample& s, const BatchCoeffs& c, SeededRng& rng) {
    if (hooks.degrade_calls != nullptr) hooks.degrade_calls->fetch_add(1);
    DegradationSpec spec = DegradationSpec::cell(c.lambda, c.eta, 0);
    return degrade_sample(s, spec, stats, rng).first;
  };

  // The validation split is degraded once under the training distribution so
  // epochs are compared on identical inputs.
  std::vector<Sample> val_inputs(val_split.begin(), val_split.end());
  if (spectrum) {
    SeededRng val_rng = root.split("validation");
    BatchCoeffs coeffs;
    for (std::size_t i = 0; i < val_inputs.size(); ++i) {
      if (i % train_cfg.batch_size == 0) coeffs = sample_batch_coeffs(train_cfg.spectrum, val_rng);
      val_inputs[i] = degrade(val_inputs[i], coeffs, val_rng);
    }
  }

  std::vector<std::size_t> order(train_split.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  double best_mae = std::numeric_limits<double>::infinity();
  Gradients grads = zeros_like(model_cfg);
  ForwardOptions fwd{true, train_cfg.dropout, &dropout_rng};

  for (std::uint32_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    AdamSettings adam = train_cfg.adam;
    adam.lr = cosine_lr(train_cfg.adam.lr, epoch, train_cfg.epochs);
    shuffle_rng.shuffle(order);

    EpochReport rep;
    rep.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += train_cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + train_cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      BatchCoeffs coeffs;
      if (spectrum) coeffs = sample_batch_coeffs(train_cfg.spectrum, degrade_rng);
      rep.lambda_mean += coeffs.lambda;
      rep.eta_mean += coeffs.eta;
      ++batches;

      for (auto& t : tensors(grads)) std::fill(t.data.begin(), t.data.end(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        const Sample& clean = train_split[order[b]];
        const Sample input = spectrum ? degrade(clean, coeffs, degrade_rng) : clean;
        const ForwardTrace trace = forward(input, params, model_cfg, fwd);
        loss_sum += nll_loss(trace.y_hat, trace.s_final, clean.label);
        for (Modality m : kAllModalities) rep.mean_r[index_of(m)] += trace.at(m).raw_quality;
        accumulate_backward(trace, params, model_cfg, clean.label, scale, grads);
      }
      try {
        adam_step(params, grads, opt, adam);
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ")");
      }
    }
    const auto n = static_cast<double>(order.size());
    rep.train_loss = loss_sum / n;
    for (double& r : rep.mean_r) r /= n;
    rep.lambda_mean /= static_cast<double>(batches);
    rep.eta_mean /= static_cast<double>(batches);

    double abs_err = 0.0;
    for (std::size_t i = 0; i < val_inputs.size(); ++i) {
      const ForwardTrace trace = forward(val_inputs[i], params, model_cfg);
      abs_err += std::abs(trace.y_hat - val_split[i].label);
    }
    rep.val_mae = abs_err / static_cast<double>(val_inputs.size());
    if (!std::isfinite(rep.train_loss) || !std::isfinite(rep.val_mae)) {
      throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch));
    }
    if (rep.val_mae < best_mae) {
      best_mae = rep.val_mae;
      result.best = Checkpoint{model_cfg, params};
      result.best_epoch = epoch;
    }
    result.report.push_back(rep);
  }
  return result;
}

std::string loss_report_csv(std::span<const EpochReport> report) {
  std::string out =
      "epoch,train_loss,val_mae,mean_r_text,mean_r_audio,mean_r_vision,lambda_mean,eta_mean\n";
  for (const auto& r : report) {
    out += std::to_string(r.epoch);
    for (double v : {r.train_loss, r.val_mae, r.mean_r[0], r.mean_r[1], r.mean_r[2],
                     r.lambda_mean, r.eta_mean}) {
      out += ',';
      out += format_double(v, 6);
    }
    out += '\n';
  }
  return out;
}

}  // namespace qamoe
