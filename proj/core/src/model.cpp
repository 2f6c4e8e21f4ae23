#include "qamoe/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <type_traits>

#include "binary_io.hpp"
#include "qamoe/errors.hpp"

namespace qamoe {

namespace {

constexpr std::string_view kMagic = "QMCK";

template <typename P>
auto collect(P& p) {
  using Elem = std::conditional_t<std::is_const_v<P>, const double, double>;
  std::vector<BasicTensorRef<Elem>> out;
  auto mat = [&](std::string name, auto& m, bool decays) {
    out.push_back({std::move(name), m.rows(), m.cols(), m.values(), decays});
  };
  auto vec = [&](std::string name, auto& v, bool decays) {
    out.push_back({std::move(name), v.size(), 1, std::span<Elem>(v), decays});
  };
  for (Modality m : kAllModalities) {
    auto& head = p.modality[index_of(m)];
    const std::string prefix(modality_name(m));
    mat(prefix + ".w_in", head.w_in, true);
    vec(prefix + ".b_in", head.b_in, false);
    mat(prefix + ".w_mu", head.w_mu, true);
    vec(prefix + ".b_mu", head.b_mu, false);
    mat(prefix + ".w_sigma", head.w_sigma, true);
    vec(prefix + ".b_sigma", head.b_sigma, false);
  }
  mat("router.w_gate", p.w_gate, true);
  for (std::size_t i = 0; i < p.experts.size(); ++i) {
    auto& e = p.experts[i];
    const std::string prefix = "expert" + std::to_string(i);
    mat(prefix + ".w_a", e.w_a, true);
    vec(prefix + ".b_a", e.b_a, false);
    mat(prefix + ".w_b", e.w_b, true);
    vec(prefix + ".b_b", e.b_b, false);
    mat(prefix + ".w_o", e.w_o, true);
    vec(prefix + ".b_o", e.b_o, false);
  }
  mat("y_prior", p.y_prior, false);
  mat("fusion.w_fuse", p.w_fuse, true);
  vec("fusion.b_fuse", p.b_fuse, false);
  mat("head.w_y", p.w_y, true);
  vec("head.b_y", p.b_y, false);
  mat("head.w_s", p.w_s, true);
  vec("head.b_s", p.b_s, false);
  return out;
}

Vector dropout_mask(std::size_t n, double rate, SeededRng& rng) {
  Vector mask(n, 1.0);
  if (rate <= 0.0) return mask;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& v : mask) v = rng.uniform() < rate ? 0.0 : keep_scale;
  return mask;
}

void apply_mask(Vector& v, std::span<const double> mask) {
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= mask[i];
}

std::size_t prior_row(const ModelConfig& cfg, Modality m) {
  return cfg.prior_per_modality ? index_of(m) : 0;
}

}  // namespace

std::string_view variant_name(Variant v) noexcept {
  switch (v) {
    case Variant::kFull:
      return "full";
    case Variant::kNoQualityGating:
      return "no-quality-gating";
    case Variant::kNoVariance:
      return "no-variance";
    case Variant::kNoPrior:
      return "no-prior";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : {Variant::kFull, Variant::kNoQualityGating, Variant::kNoVariance,
                    Variant::kNoPrior}) {
    if (name == variant_name(v)) return v;
  }
  throw InvalidInput("unknown model variant '" + std::string(name) +
                     "' (expected full, no-quality-gating, no-variance or no-prior)");
}

ModelConfig ModelConfig::for_dataset(const DatasetSpec& spec) {
  ModelConfig cfg;
  for (Modality m : kAllModalities) cfg.input_dims[index_of(m)] = spec.shape(m).feature_dim;
  return cfg;
}

void ModelConfig::validate() const {
  if (d_model == 0) throw InvalidInput("model d_model must be positive");
  if (n_experts == 0) throw InvalidInput("model n_experts must be positive");
  if (top_k < 1 || top_k > n_experts) {
    throw InvalidInput("model top_k must satisfy 1 <= top_k <= n_experts");
  }
  if (glu_hidden == 0) throw InvalidInput("model glu_hidden must be positive");
  for (auto d : input_dims) {
    if (d == 0) throw InvalidInput("model input dims must be positive");
  }
  if (static_cast<unsigned>(variant) > static_cast<unsigned>(Variant::kNoPrior)) {
    throw InvalidInput("model variant out of range");
  }
}

std::vector<TensorRef> tensors(ModelParams& params) { return collect(params); }
std::vector<ConstTensorRef> tensors(const ModelParams& params) { return collect(params); }

ModelParams zeros_like(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  const std::size_t h = cfg.glu_hidden;
  ModelParams p;
  for (Modality m : kAllModalities) {
    auto& head = p.modality[index_of(m)];
    head.w_in = Matrix(d, cfg.input_dim(m));
    head.b_in = Vector(d, 0.0);
    head.w_mu = Matrix(d, d);
    head.b_mu = Vector(d, 0.0);
    head.w_sigma = Matrix(d, d);
    head.b_sigma = Vector(d, 0.0);
  }
  p.w_gate = Matrix(cfg.n_experts, d);
  p.experts.resize(cfg.n_experts);
  for (auto& e : p.experts) {
    e.w_a = Matrix(h, d);
    e.b_a = Vector(h, 0.0);
    e.w_b = Matrix(h, d);
    e.b_b = Vector(h, 0.0);
    e.w_o = Matrix(d, h);
    e.b_o = Vector(d, 0.0);
  }
  p.y_prior = Matrix(cfg.prior_per_modality ? kNumModalities : 1, d);
  p.w_fuse = Matrix(d, kNumModalities * d);
  p.b_fuse = Vector(d, 0.0);
  p.w_y = Matrix(1, d);
  p.b_y = Vector(1, 0.0);
  p.w_s = Matrix(1, d);
  p.b_s = Vector(1, 0.0);
  return p;
}

ModelParams init_params(const ModelConfig& cfg, const SeededRng& rng) {
  ModelParams p = zeros_like(cfg);
  for (auto& t : tensors(p)) {
    if (!t.decays) continue;
    SeededRng local = rng.split(t.name);
    const double bound = 1.0 / std::sqrt(static_cast<double>(t.cols));
    for (double& v : t.data) v = local.uniform(-bound, bound);
  }
  if (cfg.variant != Variant::kNoVariance) {
    const double b = softplus_inverse(kInitialVariance);
    for (auto& head : p.modality) std::fill(head.b_sigma.begin(), head.b_sigma.end(), b);
  }
  return p;
}

void check_shapes(const ModelParams& params, const ModelConfig& cfg) {
  const auto expected = tensors(zeros_like(cfg));
  const auto actual = tensors(params);
  if (expected.size() != actual.size()) {
    throw InvalidInput("parameter set has " + std::to_string(actual.size()) +
                       " tensors, config expects " + std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected[i].rows != actual[i].rows || expected[i].cols != actual[i].cols) {
      throw InvalidInput("tensor " + expected[i].name + " has shape " +
                         std::to_string(actual[i].rows) + "x" +
                         std::to_string(actual[i].cols) + ", config expects " +
                         std::to_string(expected[i].rows) + "x" +
                         std::to_string(expected[i].cols));
    }
  }
}

Vector pool(const FeatureMatrix& u, const Matrix& w_in, std::span<const double> b_in) {
  if (u.rows() == 0 || u.cols() == 0) throw InvalidInput("pool: empty feature matrix");
  Vector mean(u.cols(), 0.0);
  for (std::size_t t = 0; t < u.rows(); ++t) axpy(1.0, u.row(t), mean);
  const double inv = 1.0 / static_cast<double>(u.rows());
  for (double& v : mean) v *= inv;
  return affine(w_in, b_in, mean);
}

GaussianLatent encode_probabilistic(std::span<const double> x, const ModalityParams& head) {
  GaussianLatent latent;
  latent.mu = affine(head.w_mu, head.b_mu, x);
  latent.var = softplus(affine(head.w_sigma, head.b_sigma, x));
  return latent;
}

double quality_score(std::span<const double> var) {
  if (var.empty()) throw InvalidInput("quality_score: empty variance vector");
  const double mean = std::accumulate(var.begin(), var.end(), 0.0) /
                      static_cast<double>(var.size());
  return 1.0 / (1.0 + mean);
}

Routing route(std::span<const double> mu, const Matrix& w_gate, std::size_t k) {
  const std::size_t n = w_gate.rows();
  if (k < 1 || k > n) throw InvalidInput("route: k must satisfy 1 <= k <= n_experts");
  Routing r;
  r.dense = softmax(affine(w_gate, Vector(n, 0.0), mu));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return r.dense[a] > r.dense[b]; });
  r.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(r.selected.begin(), r.selected.end());
  double total = 0.0;
  for (std::size_t i : r.selected) total += r.dense[i];
  r.sparse.assign(n, 0.0);
  for (std::size_t i : r.selected) r.sparse[i] = r.dense[i] / total;
  return r;
}

Vector aggregate(double r, std::span<const double> sparse_gate,
                 std::span<const Vector> expert_outs, std::span<const double> y_prior) {
  if (r < 0.0 || r > 1.0) throw InvalidInput("aggregate: r must lie in [0, 1]");
  if (sparse_gate.size() != expert_outs.size()) {
    throw InvalidInput("aggregate: gate and expert counts differ");
  }
  Vector mixture(y_prior.size(), 0.0);
  for (std::size_t i = 0; i < sparse_gate.size(); ++i) {
    if (sparse_gate[i] == 0.0) continue;
    axpy(sparse_gate[i], expert_outs[i], mixture);
  }
  Vector out(y_prior.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = r * mixture[j] + (1.0 - r) * y_prior[j];
  }
  return out;
}

Vector fuse(std::span<const Vector> per_modality, const Matrix& w_fuse,
            std::span<const double> b_fuse) {
  if (per_modality.size() != kNumModalities) {
    throw InvalidInput("fuse: expected " + std::to_string(kNumModalities) +
                       " modality outputs, got " + std::to_string(per_modality.size()));
  }
  Vector concat;
  for (const auto& y : per_modality) concat.insert(concat.end(), y.begin(), y.end());
  return affine(w_fuse, b_fuse, concat);
}

Prediction predict(std::span<const double> h, const Matrix& w_y, std::span<const double> b_y,
                   const Matrix& w_s, std::span<const double> b_s) {
  return {affine(w_y, b_y, h).front(), affine(w_s, b_s, h).front()};
}

ForwardTrace forward(const Sample& sample, const ModelParams& params, const ModelConfig& cfg,
                     const ForwardOptions& options) {
  const bool drop = options.training && options.dropout > 0.0;
  if (drop && options.rng == nullptr) {
    throw InvalidInput("forward: training with dropout requires an rng");
  }
  if (options.dropout < 0.0 || options.dropout >= 1.0) {
    throw InvalidInput("forward: dropout rate must lie in [0, 1)");
  }
  ForwardTrace trace;
  std::array<Vector, kNumModalities> outputs;
  for (Modality m : kAllModalities) {
    const auto& u = sample.feature(m);
    if (u.cols() != cfg.input_dim(m)) {
      throw InvalidInput("forward: " + std::string(modality_name(m)) + " features have " +
                         std::to_string(u.cols()) + " columns, model expects " +
                         std::to_string(cfg.input_dim(m)));
    }
    const auto& head = params.modality[index_of(m)];
    auto& mt = trace.modality[index_of(m)];

    mt.pooled = Vector(u.cols(), 0.0);
    if (u.rows() == 0) throw InvalidInput("forward: empty feature matrix");
    for (std::size_t t = 0; t < u.rows(); ++t) axpy(1.0, u.row(t), mt.pooled);
    for (double& v : mt.pooled) v /= static_cast<double>(u.rows());
    mt.projected = affine(head.w_in, head.b_in, mt.pooled);
    mt.input = mt.projected;
    if (drop) {
      mt.input_mask = dropout_mask(mt.input.size(), options.dropout, *options.rng);
      apply_mask(mt.input, mt.input_mask);
    }

    mt.latent.mu = affine(head.w_mu, head.b_mu, mt.input);
    if (cfg.variant != Variant::kNoVariance) {
      mt.var_logits = affine(head.w_sigma, head.b_sigma, mt.input);
      mt.latent.var = softplus(mt.var_logits);
      mt.raw_quality = quality_score(mt.latent.var);
    }
    const bool gated = cfg.variant == Variant::kFull || cfg.variant == Variant::kNoPrior;
    mt.quality = gated ? mt.raw_quality : 1.0;

    mt.routing = route(mt.latent.mu, params.w_gate, cfg.top_k);
    std::vector<Vector> expert_outs(cfg.n_experts);
    for (std::size_t i : mt.routing.selected) {
      const auto& e = params.experts[i];
      ExpertTrace et;
      et.index = i;
      et.linear = affine(e.w_a, e.b_a, mt.latent.mu);
      et.gate = affine(e.w_b, e.b_b, mt.latent.mu);
      for (double& g : et.gate) g = sigmoid(g);
      et.hidden.resize(et.linear.size());
      for (std::size_t j = 0; j < et.hidden.size(); ++j) et.hidden[j] = et.linear[j] * et.gate[j];
      et.output = affine(e.w_o, e.b_o, et.hidden);
      expert_outs[i] = et.output;
      mt.experts.push_back(std::move(et));
    }
    mt.mixture = aggregate(1.0, mt.routing.sparse, expert_outs, Vector(cfg.d_model, 0.0));
    if (cfg.variant == Variant::kNoPrior) {
      mt.prior = Vector(cfg.d_model, 0.0);
    } else {
      const auto row = params.y_prior.row(prior_row(cfg, m));
      mt.prior.assign(row.begin(), row.end());
    }
    mt.output = aggregate(mt.quality, mt.routing.sparse, expert_outs, mt.prior);
    outputs[index_of(m)] = mt.output;
  }

  trace.fused = fuse(outputs, params.w_fuse, params.b_fuse);
  trace.h = trace.fused;
  if (drop) {
    trace.h_mask = dropout_mask(trace.h.size(), options.dropout, *options.rng);
    apply_mask(trace.h, trace.h_mask);
  }
  const Prediction pred = predict(trace.h, params.w_y, params.b_y, params.w_s, params.b_s);
  trace.y_hat = pred.y_hat;
  trace.s_final = pred.s_final;
  return trace;
}

// Layout (little-endian):
//   "QMCK" | u16 version
//   | u32 d_model, n_experts, top_k, glu_hidden | 3 x u32 input dim
//   | u8 prior_per_modality | u8 variant | u32 tensor count
//   | per tensor in declaration order: u32 rows, u32 cols, rows*cols f64
std::vector<unsigned char> serialize(const Checkpoint& checkpoint) {
  const auto& cfg = checkpoint.config;
  detail::ByteWriter w;
  w.magic(kMagic);
  w.put<std::uint16_t>(kCheckpointFormatVersion);
  w.put<std::uint32_t>(cfg.d_model);
  w.put<std::uint32_t>(cfg.n_experts);
  w.put<std::uint32_t>(cfg.top_k);
  w.put<std::uint32_t>(cfg.glu_hidden);
  for (auto d : cfg.input_dims) w.put<std::uint32_t>(d);
  w.put<std::uint8_t>(cfg.prior_per_modality ? 1 : 0);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(cfg.variant));
  const auto ts = tensors(checkpoint.params);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ts.size()));
  for (const auto& t : ts) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rows));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.cols));
    w.put_doubles(t.data);
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(std::span<const unsigned char> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic(kMagic, "QMCK checkpoint");
  const auto version = r.get<std::uint16_t>("format version");
  if (version != kCheckpointFormatVersion) {
    throw VersionError("QMCK checkpoint", version, kCheckpointFormatVersion);
  }
  const std::uint64_t config_offset = r.offset();
  Checkpoint ck;
  auto& cfg = ck.config;
  cfg.d_model = r.get<std::uint32_t>("d_model");
  cfg.n_experts = r.get<std::uint32_t>("n_experts");
  cfg.top_k = r.get<std::uint32_t>("top_k");
  cfg.glu_hidden = r.get<std::uint32_t>("glu_hidden");
  for (auto& d : cfg.input_dims) d = r.get<std::uint32_t>("input dim");
  const auto prior_flag = r.get<std::uint8_t>("prior_per_modality");
  if (prior_flag > 1) r.fail("prior_per_modality flag must be 0 or 1");
  cfg.prior_per_modality = prior_flag == 1;
  const auto variant = r.get<std::uint8_t>("variant");
  if (variant > static_cast<std::uint8_t>(Variant::kNoPrior)) r.fail("unknown model variant");
  cfg.variant = static_cast<Variant>(variant);
  try {
    cfg.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("invalid config block: ") + e.what(), config_offset);
  }
  ck.params = zeros_like(cfg);
  auto ts = tensors(ck.params);
  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != ts.size()) {
    r.fail("tensor count " + std::to_string(count) + " does not match config (" +
           std::to_string(ts.size()) + ")");
  }
  for (auto& t : ts) {
    const auto rows = r.get<std::uint32_t>("tensor rows");
    const auto cols = r.get<std::uint32_t>("tensor cols");
    if (rows != t.rows || cols != t.cols) {
      r.fail("tensor " + t.name + " shape header " + std::to_string(rows) + "x" +
             std::to_string(cols) + " does not match config");
    }
    r.get_doubles(t.data, "tensor data");
  }
  r.expect_end();
  return ck;
}

std::uint64_t fingerprint(const Checkpoint& checkpoint) {
  return fnv1a64(serialize(checkpoint));
}

void save(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  detail::write_file(path, serialize(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(detail::read_file(path));
}

}  // namespace qamoe
