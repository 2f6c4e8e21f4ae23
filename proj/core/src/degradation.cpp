#include "qamoe/degradation.hpp"

#include <cmath>
#include <string>

#include "qamoe/errors.hpp"

namespace qamoe {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

void check_unit(double v, const std::string& name) {
  if (!in_unit(v)) {
    throw InvalidInput(name + " must lie in [0, 1], got " + std::to_string(v));
  }
}

void check_range(const Range& r, const std::string& name) {
  check_unit(r.lo, name + ".lo");
  check_unit(r.hi, name + ".hi");
  if (r.lo > r.hi) throw InvalidInput(name + " range is empty (lo > hi)");
}

void zero_out(FeatureMatrix& u) { u.fill(0.0); }

}  // namespace

ModalitySet ModalitySet::of(std::initializer_list<Modality> ms) {
  ModalitySet s;
  for (Modality m : ms) s.present[index_of(m)] = true;
  return s;
}

ModalitySet ModalitySet::parse(std::string_view list) {
  ModalitySet s;
  while (!list.empty()) {
    const auto comma = list.find(',');
    std::string_view token = list.substr(0, comma);
    while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
    while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
    if (!token.empty()) s.present[index_of(parse_modality(token))] = true;
    if (comma == std::string_view::npos) break;
    list.remove_prefix(comma + 1);
  }
  return s;
}

bool ModalitySet::empty() const {
  for (bool p : present) {
    if (p) return false;
  }
  return true;
}

std::string ModalitySet::to_string() const {
  std::string out;
  for (Modality m : kAllModalities) {
    if (!contains(m)) continue;
    if (!out.empty()) out += ',';
    out += modality_name(m).front();
  }
  return out;
}

std::string protocol_name(const ProtocolKind& p) {
  return std::visit(overloaded{
                        [](const FixedMissing& f) {
                          return "fixed_missing{" + f.available.to_string() + "}";
                        },
                        [](const RandomMissing&) { return std::string("random_missing"); },
                        [](const NoiseOnly&) { return std::string("noise_only"); },
                        [](const StochasticMixture&) {
                          return std::string("stochastic_mixture");
                        },
                    },
                    p);
}

DegradationSpec DegradationSpec::clean(std::uint64_t seed) {
  DegradationSpec spec;
  spec.seed = seed;
  return spec;
}

DegradationSpec DegradationSpec::cell(double lambda, double eta, std::uint64_t seed) {
  DegradationSpec spec;
  spec.lambda = {lambda, lambda, lambda};
  spec.eta = eta;
  spec.protocol = StochasticMixture{Range{lambda, lambda}, Range{eta, eta}};
  spec.seed = seed;
  return spec;
}

void DegradationSpec::validate() const {
  for (Modality m : kAllModalities) {
    check_unit(lambda[index_of(m)], "lambda." + std::string(modality_name(m)));
  }
  check_unit(eta, "eta");
  if (const auto* fixed = std::get_if<FixedMissing>(&protocol)) {
    if (fixed->available.empty()) {
      throw InvalidInput("fixed-missing protocol needs at least one available modality");
    }
  }
  if (const auto* mix = std::get_if<StochasticMixture>(&protocol)) {
    check_range(mix->lambda, "lambda_range");
    check_range(mix->eta, "eta_range");
  }
}

ReferenceStats compute_reference_stats(std::span<const Sample> train_split) {
  if (train_split.empty()) throw InvalidInput("compute_reference_stats: empty split");
  ReferenceStats stats;
  for (Modality m : kAllModalities) {
    // Two passes for numerical stability.
    double sum = 0.0;
    std::size_t count = 0;
    for (const Sample& s : train_split) {
      for (double v : s.feature(m).values()) sum += v;
      count += s.feature(m).size();
    }
    if (count == 0) throw InvalidInput("compute_reference_stats: modality has no entries");
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (const Sample& s : train_split) {
      for (double v : s.feature(m).values()) sq += (v - mean) * (v - mean);
    }
    stats.sigma_ref[index_of(m)] = std::sqrt(sq / static_cast<double>(count));
  }
  return stats;
}

FeatureMatrix apply_awgn(const FeatureMatrix& u, double lambda, double sigma_ref,
                         SeededRng& rng) {
  check_unit(lambda, "lambda");
  if (sigma_ref < 0.0) throw InvalidInput("apply_awgn: sigma_ref must be nonnegative");
  FeatureMatrix out = u;
  const double scale = lambda * sigma_ref;
  if (scale == 0.0) return out;
  for (double& v : out.values()) v += scale * rng.normal();
  return out;
}

FeatureMatrix apply_token_dropout(const FeatureMatrix& u_text, double lambda,
                                  SeededRng& rng) {
  check_unit(lambda, "lambda");
  FeatureMatrix out = u_text;
  for (std::size_t t = 0; t < out.rows(); ++t) {
    if (rng.uniform() < lambda) {
      for (double& v : out.row(t)) v = 0.0;
    }
  }
  return out;
}

std::pair<Sample, MissMask> apply_missingness(const Sample& sample, double eta,
                                              SeededRng& rng) {
  check_unit(eta, "eta");
  Sample out = sample;
  MissMask mask;
  for (Modality m : kAllModalities) {
    if (rng.uniform() < eta) {
      mask.missing[index_of(m)] = true;
      zero_out(out.feature(m));
    }
  }
  return {std::move(out), mask};
}

BatchCoeffs sample_batch_coeffs(const ProtocolKind& protocol, SeededRng& rng) {
  const auto* mix = std::get_if<StochasticMixture>(&protocol);
  if (mix == nullptr) {
    throw InvalidInput("sample_batch_coeffs: protocol " + protocol_name(protocol) +
                       " has fixed coefficients and does not sample");
  }
  check_range(mix->lambda, "lambda_range");
  check_range(mix->eta, "eta_range");
  BatchCoeffs c;
  c.lambda = rng.uniform(mix->lambda.lo, mix->lambda.hi);
  c.eta = rng.uniform(mix->eta.lo, mix->eta.hi);
  return c;
}

std::pair<Sample, MissMask> degrade_sample(const Sample& sample, const DegradationSpec& spec,
                                           const ReferenceStats& stats, SeededRng& rng) {
  spec.validate();
  // Per-modality substreams keyed off one draw from the caller's stream, so
  // consecutive calls differ and modalities do not share noise.
  const SeededRng base = rng.split(rng.next_u64());

  const bool noisy = !std::holds_alternative<RandomMissing>(spec.protocol);
  Sample out = sample;
  if (noisy) {
    for (Modality m : kAllModalities) {
      SeededRng local = base.split(modality_name(m));
      const double lambda = spec.lambda[index_of(m)];
      FeatureMatrix& u = out.feature(m);
      if (m == Modality::kText) {
        u = apply_token_dropout(u, lambda, local);
      } else {
        u = apply_awgn(u, lambda, stats.sigma(m), local);
      }
    }
  }

  MissMask mask;
  if (const auto* fixed = std::get_if<FixedMissing>(&spec.protocol)) {
    for (Modality m : kAllModalities) {
      if (!fixed->available.contains(m)) {
        mask.missing[index_of(m)] = true;
        zero_out(out.feature(m));
      }
    }
  } else if (!std::holds_alternative<NoiseOnly>(spec.protocol)) {
    SeededRng local = base.split("missing");
    auto [masked, drawn] = apply_missingness(out, spec.eta, local);
    out = std::move(masked);
    mask = drawn;
  }
  return {std::move(out), mask};
}

}  // namespace qamoe
