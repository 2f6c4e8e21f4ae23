#pragma once

// INI run configuration shared by every qamoe subcommand.
//
//   [dataset]     n_train n_val n_test seed
//                 {text,audio,vision}_{seq_len,dim,snr}
//   [model]       d_model n_experts top_k glu_hidden prior_per_modality variant
//   [train]       epochs batch_size lr beta1 beta2 eps weight_decay grad_clip
//                 dropout seed mode lambda_min lambda_max eta_min eta_max
//   [degradation] protocol available lambda eta lambda_min lambda_max
//                 eta_min eta_max seed
//   [grid]        lambda_values eta_values seed jobs
//   [output]      dir
//
// Blank lines and lines starting with '#' or ';' are ignored. Unknown
// sections or keys, duplicates and out-of-range values are errors that carry
// "source:line".

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "qamoe/degradation.hpp"
#include "qamoe/errors.hpp"
#include "qamoe/evaluation.hpp"
#include "qamoe/model.hpp"
#include "qamoe/synthdata.hpp"
#include "qamoe/training.hpp"

namespace qamoe::cli {

class ConfigError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

enum class Protocol { kMissing, kNoise, kMixture };  // I, II, III

// Accepts I/II/III and missing/noise/mixture.
Protocol parse_protocol(std::string_view name);
std::string_view protocol_label(Protocol p) noexcept;

struct EvalSettings {
  Protocol protocol = Protocol::kMixture;
  // Protocol I: a fixed subset when set, otherwise random missingness at eta.
  std::optional<ModalitySet> available;
  std::array<double, kNumModalities> lambda{};
  double eta = 0.0;
  StochasticMixture mixture{};
  std::uint64_t seed = 1111;

  DegradationSpec to_spec() const;
  // Row label used in metrics.csv, e.g. "I:t,a" or "II:lambda=0.3".
  std::string condition() const;
};

struct RunConfig {
  DatasetSpec dataset;
  ModelConfig model;  // input dims follow the dataset section
  TrainConfig train;
  EvalSettings eval;
  GridSpec grid;
  unsigned jobs = 1;
  std::filesystem::path output_dir = "out";

  // Replaces every seed (dataset, training, evaluation, grid).
  void override_seed(std::uint64_t seed);
};

RunConfig parse_run_config(std::string_view text, const std::string& source);
RunConfig load_run_config(const std::filesystem::path& path);

// QAMOE_OUT, when set and nonempty, wins over [output] dir.
std::filesystem::path resolve_output_dir(const RunConfig& cfg, const char* env_value);

}  // namespace qamoe::cli
