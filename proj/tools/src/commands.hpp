#pragma once

// The qamoe subcommands as library functions. Each writes its outputs under
// the given directory, reads every file back to validate it, and throws a
// qamoe::Error subclass on failure.

#include <filesystem>
#include <string>
#include <vector>

#include "qamoe/evaluation.hpp"
#include "qamoe/training.hpp"
#include "run_config.hpp"

namespace qamoe::cli {

// A written file did not read back as written.
class OutputError : public Error {
 public:
  using Error::Error;
};

inline constexpr const char* kDatasetFile = "dataset.qmds";
inline constexpr const char* kFingerprintFile = "dataset.qmds.fingerprint";
inline constexpr const char* kCheckpointFile = "checkpoint.qmck";
inline constexpr const char* kLossFile = "loss.csv";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kGatesFile = "gates.csv";
inline constexpr const char* kAblationFile = "ablation.csv";

// "grid_acc7.csv" etc.
std::string grid_file_name(GridMetric metric);

// Writes content (creating parent directories) and checks it reads back equal.
void write_text_validated(const std::filesystem::path& path, const std::string& content);

std::string hex_fingerprint(std::uint64_t fp);

struct GenSummary {
  std::filesystem::path dataset;
  std::uint64_t fingerprint = 0;
};
GenSummary cmd_gen(const RunConfig& cfg, const std::filesystem::path& out_dir);

struct TrainSummary {
  std::filesystem::path checkpoint;
  std::uint32_t best_epoch = 0;
  std::vector<EpochReport> report;
};
TrainSummary cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir,
                       const std::filesystem::path& dataset_path, const TrainHooks& hooks = {});

struct EvalSummary {
  std::string condition;
  MetricsRecord metrics;
};
EvalSummary cmd_eval(const RunConfig& cfg, const std::filesystem::path& out_dir,
                     const std::filesystem::path& dataset_path,
                     const std::filesystem::path& checkpoint_path);

GridResult cmd_grid(const RunConfig& cfg, const std::filesystem::path& out_dir,
                    const std::filesystem::path& dataset_path,
                    const std::filesystem::path& checkpoint_path, unsigned jobs);

std::vector<AblationResult> cmd_ablate(const RunConfig& cfg, const std::filesystem::path& out_dir,
                                       const std::filesystem::path& dataset_path,
                                       const std::vector<Variant>& variants);

struct GradCheckOptions {
  std::uint32_t draws = 20;
  double tolerance = 1e-4;
  std::uint64_t seed = 1111;
};
struct GradCheckSummary {
  std::vector<std::pair<Variant, GradCheckReport>> reports;
  bool passed = false;
};
// d_model = 8, N = 4, k = 2 for every model variant.
GradCheckSummary cmd_gradcheck(const GradCheckOptions& options);

}  // namespace qamoe::cli
