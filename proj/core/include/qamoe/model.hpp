#pragma once

// Quality-aware mixture of experts, forward direction.
//
// Per modality m:
//   x_m   = dropout(W_in (mean of rows of u_m) + b_in)
//   mu_m  = W_mu x_m + b_mu
//   var_m = softplus(W_sigma x_m + b_sigma)
//   r_m   = 1 / (1 + mean(var_m))
//   g     = top_k(softmax(W_g mu_m)), renormalized over the survivors
//   y_m   = r_m * sum_i g_i E_i(mu_m) + (1 - r_m) * y_prior
// then h = dropout(W_f [y_t; y_a; y_v] + b_f), y_hat = W_y h + b_y and the
// log-variance s = W_s h + b_s. Experts are GLUs shared by all modalities.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qamoe/numerics.hpp"
#include "qamoe/synthdata.hpp"

namespace qamoe {

enum class Variant : std::uint8_t {
  kFull = 0,
  kNoQualityGating = 1,  // r_m forced to 1 in aggregation
  kNoVariance = 2,       // sigma head removed, r_m forced to 1
  kNoPrior = 3,          // y_prior fixed at zero
};

std::string_view variant_name(Variant v) noexcept;
Variant parse_variant(std::string_view name);

struct ModelConfig {
  std::uint32_t d_model = 32;
  std::uint32_t n_experts = 8;
  std::uint32_t top_k = 3;
  std::uint32_t glu_hidden = 64;
  std::array<std::uint32_t, kNumModalities> input_dims = {32, 16, 16};
  bool prior_per_modality = false;
  Variant variant = Variant::kFull;

  static ModelConfig for_dataset(const DatasetSpec& spec);
  void validate() const;
  std::uint32_t input_dim(Modality m) const { return input_dims[index_of(m)]; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ModalityParams {
  Matrix w_in;  // d_model x d_m
  Vector b_in;
  Matrix w_mu;  // d_model x d_model
  Vector b_mu;
  Matrix w_sigma;  // d_model x d_model
  Vector b_sigma;
  friend bool operator==(const ModalityParams&, const ModalityParams&) = default;
};

struct ExpertParams {
  Matrix w_a;  // glu_hidden x d_model, linear branch
  Vector b_a;
  Matrix w_b;  // glu_hidden x d_model, gate branch
  Vector b_b;
  Matrix w_o;  // d_model x glu_hidden
  Vector b_o;
  friend bool operator==(const ExpertParams&, const ExpertParams&) = default;
};

struct ModelParams {
  std::array<ModalityParams, kNumModalities> modality;
  Matrix w_gate;  // n_experts x d_model, shared router
  std::vector<ExpertParams> experts;
  Matrix y_prior;  // 1 x d_model, or 3 x d_model when per-modality
  Matrix w_fuse;   // d_model x 3 d_model
  Vector b_fuse;
  Matrix w_y;  // 1 x d_model
  Vector b_y;
  Matrix w_s;  // 1 x d_model
  Vector b_s;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Gradients share the parameter layout.
using Gradients = ModelParams;

template <typename T>
struct BasicTensorRef {
  std::string name;
  std::size_t rows;
  std::size_t cols;
  std::span<T> data;
  bool decays;  // weight matrices decay; biases and y_prior do not
};
using TensorRef = BasicTensorRef<double>;
using ConstTensorRef = BasicTensorRef<const double>;

// All tensors in declaration order: per modality (w_in, b_in, w_mu, b_mu,
// w_sigma, b_sigma), router, experts (w_a, b_a, w_b, b_b, w_o, b_o), y_prior,
// fusion, value head, log-variance head.
std::vector<TensorRef> tensors(ModelParams& params);
std::vector<ConstTensorRef> tensors(const ModelParams& params);

ModelParams zeros_like(const ModelConfig& cfg);
// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases and prior,
// b_sigma = softplus^-1(0.1).
ModelParams init_params(const ModelConfig& cfg, const SeededRng& rng);
// Throws InvalidInput if any tensor shape disagrees with cfg.
void check_shapes(const ModelParams& params, const ModelConfig& cfg);

inline constexpr double kInitialVariance = 0.1;

struct GaussianLatent {
  Vector mu;
  Vector var;
};

// Temporal mean over rows followed by the input projection.
Vector pool(const FeatureMatrix& u, const Matrix& w_in, std::span<const double> b_in);

GaussianLatent encode_probabilistic(std::span<const double> x, const ModalityParams& head);

// 1 / (1 + mean(var)).
double quality_score(std::span<const double> var);
inline double quality_score(const GaussianLatent& latent) { return quality_score(latent.var); }

struct Routing {
  Vector dense;
  Vector sparse;
  std::vector<std::size_t> selected;  // ascending expert indices
};

// Ties in the top-k cut are broken toward the lowest expert index.
Routing route(std::span<const double> mu, const Matrix& w_gate, std::size_t k);

// r * sum_i gate_i expert_outs[i] + (1 - r) * y_prior. Entries of expert_outs
// whose gate is zero are ignored and may be empty.
Vector aggregate(double r, std::span<const double> sparse_gate,
                 std::span<const Vector> expert_outs, std::span<const double> y_prior);

// W_f [y_0; y_1; ...] + b_f
Vector fuse(std::span<const Vector> per_modality, const Matrix& w_fuse,
            std::span<const double> b_fuse);

struct Prediction {
  double y_hat = 0.0;
  double s_final = 0.0;
};

Prediction predict(std::span<const double> h, const Matrix& w_y, std::span<const double> b_y,
                   const Matrix& w_s, std::span<const double> b_s);

struct ExpertTrace {
  std::size_t index = 0;
  Vector linear;  // W_a mu + b_a
  Vector gate;    // sigmoid(W_b mu + b_b)
  Vector hidden;  // linear * gate
  Vector output;  // W_o hidden + b_o
};

struct ModalityTrace {
  Vector pooled;        // mean of rows (raw feature space)
  Vector projected;     // W_in pooled + b_in
  Vector input_mask;    // inverted-dropout scale per unit; empty in eval mode
  Vector input;         // projected after dropout
  GaussianLatent latent;
  Vector var_logits;    // W_sigma x + b_sigma; empty for NoVariance
  double raw_quality = 1.0;  // r computed from var
  double quality = 1.0;      // r used in aggregation
  Routing routing;
  std::vector<ExpertTrace> experts;  // selected experts only
  Vector mixture;
  Vector prior;
  Vector output;  // y_m
};

struct ForwardTrace {
  std::array<ModalityTrace, kNumModalities> modality;
  Vector fused;   // W_f concat + b_f
  Vector h_mask;  // empty in eval mode
  Vector h;       // fused after dropout
  double y_hat = 0.0;
  double s_final = 0.0;

  const ModalityTrace& at(Modality m) const { return modality[index_of(m)]; }
};

struct ForwardOptions {
  bool training = false;
  double dropout = 0.1;
  SeededRng* rng = nullptr;  // required when training with dropout > 0
};

ForwardTrace forward(const Sample& sample, const ModelParams& params, const ModelConfig& cfg,
                     const ForwardOptions& options = {});

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

inline constexpr std::uint16_t kCheckpointFormatVersion = 1;

std::vector<unsigned char> serialize(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::span<const unsigned char> bytes);
std::uint64_t fingerprint(const Checkpoint& checkpoint);

void save(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace qamoe
