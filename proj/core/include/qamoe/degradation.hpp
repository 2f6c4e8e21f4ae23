#pragma once

// Stochastic degradation of clean samples: token dropout for text, additive
// Gaussian noise scaled by a training-set reference std for audio and vision,
// then whole-modality missingness. A modality is observed as
//   (1 - miss_m) * (u_m + eps_m),   miss_m ~ Bernoulli(eta).

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <variant>

#include "qamoe/numerics.hpp"
#include "qamoe/synthdata.hpp"

namespace qamoe {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Range&, const Range&) = default;
};

struct ModalitySet {
  std::array<bool, kNumModalities> present{};

  static ModalitySet all() { return {{true, true, true}}; }
  static ModalitySet of(std::initializer_list<Modality> ms);
  // "t,a" style lists.
  static ModalitySet parse(std::string_view list);

  bool contains(Modality m) const { return present[index_of(m)]; }
  bool empty() const;
  std::string to_string() const;
  friend bool operator==(const ModalitySet&, const ModalitySet&) = default;
};

// Protocol I with a fixed subset of available modalities; the complement is
// zeroed deterministically.
struct FixedMissing {
  ModalitySet available;
  friend bool operator==(const FixedMissing&, const FixedMissing&) = default;
};
// Protocol I: each modality missing with probability eta, no noise.
struct RandomMissing {
  friend bool operator==(const RandomMissing&, const RandomMissing&) = default;
};
// Protocol II: noise at lambda, nothing missing.
struct NoiseOnly {
  friend bool operator==(const NoiseOnly&, const NoiseOnly&) = default;
};
// Protocol III: (lambda, eta) drawn from ranges; degrade_sample applies the
// realized values stored in the DegradationSpec.
struct StochasticMixture {
  Range lambda{0.0, 1.0};
  Range eta{0.0, 1.0};
  friend bool operator==(const StochasticMixture&, const StochasticMixture&) = default;
};

using ProtocolKind = std::variant<FixedMissing, RandomMissing, NoiseOnly, StochasticMixture>;

std::string protocol_name(const ProtocolKind& p);

struct DegradationSpec {
  std::array<double, kNumModalities> lambda{};
  double eta = 0.0;
  ProtocolKind protocol = StochasticMixture{Range{0.0, 0.0}, Range{0.0, 0.0}};
  std::uint64_t seed = 1111;

  // No degradation at all.
  static DegradationSpec clean(std::uint64_t seed = 1111);
  // Uniform lambda on every modality with random missingness at eta.
  static DegradationSpec cell(double lambda, double eta, std::uint64_t seed);

  void validate() const;
  friend bool operator==(const DegradationSpec&, const DegradationSpec&) = default;
};

struct ReferenceStats {
  std::array<double, kNumModalities> sigma_ref{};
  double sigma(Modality m) const { return sigma_ref[index_of(m)]; }
};

struct MissMask {
  std::array<bool, kNumModalities> missing{};
  bool is_missing(Modality m) const { return missing[index_of(m)]; }
  friend bool operator==(const MissMask&, const MissMask&) = default;
};

// Population std of every scalar entry of each modality over the split.
ReferenceStats compute_reference_stats(std::span<const Sample> train_split);

FeatureMatrix apply_awgn(const FeatureMatrix& u, double lambda, double sigma_ref,
                         SeededRng& rng);

// Each row is zeroed independently with probability lambda. One uniform draw
// is consumed per row regardless of lambda.
FeatureMatrix apply_token_dropout(const FeatureMatrix& u_text, double lambda,
                                  SeededRng& rng);

// Each modality is replaced by zeros with probability eta. One uniform draw is
// consumed per modality regardless of eta.
std::pair<Sample, MissMask> apply_missingness(const Sample& sample, double eta,
                                              SeededRng& rng);

struct BatchCoeffs {
  double lambda = 0.0;
  double eta = 0.0;
};

// Draws one (lambda, eta) pair from a StochasticMixture protocol's ranges.
// Fixed protocols do not sample and are rejected.
BatchCoeffs sample_batch_coeffs(const ProtocolKind& protocol, SeededRng& rng);

std::pair<Sample, MissMask> degrade_sample(const Sample& sample, const DegradationSpec& spec,
                                           const ReferenceStats& stats, SeededRng& rng);

}  // namespace qamoe
