#pragma once

// Synthetic tri-modal regression data with a known latent sentiment score,
// plus the QMDS binary dataset format.
//
// Each sample draws y ~ U(-3, 3) and the basis phi(y) = [y, y^2, sin y, tanh y, 1].
// Every row t of modality m is M_m phi(y) + rho_m xi_t, where M_m is a fixed
// standard-normal mixing matrix per (dataset seed, modality) and rho_m is
// chosen so that the per-entry signal-to-noise ratio equals snr_m.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "qamoe/numerics.hpp"

namespace qamoe {

enum class Modality : std::uint8_t { kText = 0, kAudio = 1, kVision = 2 };

inline constexpr std::size_t kNumModalities = 3;
inline constexpr std::array<Modality, kNumModalities> kAllModalities = {
    Modality::kText, Modality::kAudio, Modality::kVision};

constexpr std::size_t index_of(Modality m) noexcept { return static_cast<std::size_t>(m); }
std::string_view modality_name(Modality m) noexcept;
// Accepts "t"/"text", "a"/"audio", "v"/"vision".
Modality parse_modality(std::string_view name);

// One modality's feature sequence: rows are time steps, columns features.
using FeatureMatrix = Matrix;

inline constexpr double kLabelMin = -3.0;
inline constexpr double kLabelMax = 3.0;

struct ModalityShape {
  std::uint32_t seq_len = 8;
  std::uint32_t feature_dim = 16;
  double snr = 1.0;  // +infinity means noiseless

  friend bool operator==(const ModalityShape&, const ModalityShape&) = default;
};

struct DatasetSpec {
  std::uint64_t n_train = 2000;
  std::uint64_t n_val = 400;
  std::uint64_t n_test = 2000;
  std::array<ModalityShape, kNumModalities> modalities = {
      ModalityShape{8, 32, 4.0}, ModalityShape{8, 16, 0.25}, ModalityShape{8, 16, 0.25}};
  std::uint64_t seed = 1111;

  const ModalityShape& shape(Modality m) const { return modalities[index_of(m)]; }
  // Throws InvalidInput on zero sizes, zero dims or non-positive SNR.
  void validate() const;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct Sample {
  std::array<FeatureMatrix, kNumModalities> features;
  double label = 0.0;

  FeatureMatrix& feature(Modality m) { return features[index_of(m)]; }
  const FeatureMatrix& feature(Modality m) const { return features[index_of(m)]; }

  friend bool operator==(const Sample&, const Sample&) = default;
};

enum class Split : std::uint8_t { kTrain = 0, kVal = 1, kTest = 2 };

class Dataset {
 public:
  Dataset(DatasetSpec spec, std::vector<Sample> train, std::vector<Sample> val,
          std::vector<Sample> test);

  const DatasetSpec& spec() const noexcept { return spec_; }
  std::span<const Sample> train() const noexcept { return train_; }
  std::span<const Sample> val() const noexcept { return val_; }
  std::span<const Sample> test() const noexcept { return test_; }
  std::span<const Sample> split(Split s) const noexcept;

  // Stable hash of the spec block and generator version.
  std::uint64_t fingerprint() const noexcept { return fingerprint_; }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  DatasetSpec spec_;
  std::vector<Sample> train_;
  std::vector<Sample> val_;
  std::vector<Sample> test_;
  std::uint64_t fingerprint_;
};

// The fixed nonlinear basis of the latent score.
std::array<double, 5> latent_basis(double y) noexcept;

// The mixing matrix M_m (feature_dim x 5) used for modality m.
Matrix mixing_matrix(const DatasetSpec& spec, Modality m);

// Per-row noise scale rho_m for the given mixing matrix and SNR.
double noise_scale(const Matrix& mixing, double snr);

std::uint64_t spec_fingerprint(const DatasetSpec& spec);

Dataset generate(const DatasetSpec& spec);

inline constexpr std::uint16_t kDatasetFormatVersion = 1;

std::vector<unsigned char> serialize(const Dataset& dataset);
Dataset deserialize(std::span<const unsigned char> bytes);

void save(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace qamoe
