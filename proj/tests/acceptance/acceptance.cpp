// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails. Pass criterion numbers as arguments to run a
// subset, e.g. `qamoe_acceptance 1 2 3`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "commands.hpp"
#include "qamoe/degradation.hpp"
#include "qamoe/evaluation.hpp"
#include "qamoe/model.hpp"
#include "qamoe/training.hpp"

using namespace qamoe;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const std::vector<std::uint64_t> kSeeds = {1111, 2222, 3333};

// Default synthetic data and spectrum-trained checkpoints, built lazily and
// shared by criteria 5 to 8.
struct SeedRun {
  std::uint64_t seed = 0;
  Dataset data;
  ReferenceStats stats;
  Checkpoint full;
  std::optional<Checkpoint> no_gating;
};

class Runs {
 public:
  SeedRun& get(std::size_t i, bool need_ablation) {
    if (runs_.size() <= i) runs_.resize(i + 1);
    auto& slot = runs_[i];
    if (!slot) {
      const auto t0 = Clock::now();
      DatasetSpec spec;
      spec.seed = kSeeds[i];
      Dataset data = generate(spec);
      ReferenceStats stats = compute_reference_stats(data.train());
      TrainConfig tc;
      tc.seed = kSeeds[i];
      Checkpoint full = train(data, ModelConfig::for_dataset(spec), tc).best;
      slot = SeedRun{kSeeds[i], std::move(data), stats, std::move(full), std::nullopt};
      train_seconds_ += seconds_since(t0);
    }
    if (need_ablation && !slot->no_gating) {
      const auto t0 = Clock::now();
      TrainConfig tc;
      tc.seed = slot->seed;
      ModelConfig mc = ModelConfig::for_dataset(slot->data.spec());
      mc.variant = Variant::kNoQualityGating;
      slot->no_gating = train(slot->data, mc, tc).best;
      train_seconds_ += seconds_since(t0);
    }
    return *slot;
  }
  double train_seconds() const { return train_seconds_; }

 private:
  std::vector<std::optional<SeedRun>> runs_;
  double train_seconds_ = 0.0;
};

Runs runs;

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_experts = 4;
  cfg.top_k = 2;
  cfg.glu_hidden = 16;
  GradCheckSettings settings;
  settings.draws = 20;
  settings.step = 1e-5;
  double worst = 0.0;
  std::string where;
  std::uint64_t entries = 0;
  for (Variant v : {Variant::kFull, Variant::kNoQualityGating, Variant::kNoVariance,
                    Variant::kNoPrior}) {
    cfg.variant = v;
    const GradCheckReport r = gradient_check(cfg, settings);
    entries += r.entries;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = std::string(variant_name(v)) + "/" + r.worst_tensor;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 60.0,
          "max relative error " + fmt("%.2e", worst) + " (" + where + ") over " +
              std::to_string(entries) + " entries, 20 draws x 4 variants, " + fmt("%.1f", secs) +
              " s (limit 1e-4, 60 s)"};
}

Outcome aggregation_identities() {
  SeededRng rng(2);
  bool ok = true;
  double worst_mix = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(7), d = 1 + rng.below(16);
    Vector logits(n);
    for (double& x : logits) x = rng.normal();
    const Vector gate = softmax(logits);
    std::vector<Vector> outs(n, Vector(d));
    for (auto& o : outs) {
      for (double& x : o) x = 5.0 * rng.normal();
    }
    Vector prior(d);
    for (double& x : prior) x = 5.0 * rng.normal();
    ok = ok && aggregate(0.0, gate, outs, prior) == prior;
    const Vector mixed = aggregate(1.0, gate, outs, prior);
    for (std::size_t j = 0; j < d; ++j) {
      double expect = 0.0, scale = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        expect += gate[i] * outs[i][j];
        scale += std::abs(gate[i] * outs[i][j]);
      }
      // Summation-order rounding only.
      const double err = std::abs(mixed[j] - expect) / std::max(scale, 1e-300);
      worst_mix = std::max(worst_mix, err);
    }
  }
  const double eps = std::numeric_limits<double>::epsilon();
  ok = ok && worst_mix <= 8 * eps;
  const double tiny = std::numeric_limits<double>::denorm_min();
  const double r_small = quality_score(Vector{tiny, tiny, tiny});
  const double r_half = quality_score(Vector{0.5, 1.5, 1.0, 1.0});
  ok = ok && r_small == 1.0 && r_half == 0.5;
  return {ok, "r=0 returns y_prior exactly, r=1 mixture error " + fmt("%.1e", worst_mix) +
                  " (relative), r(var->0+) = " + fmt("%.17g", r_small) +
                  ", r(mean var 1) = " + fmt("%.17g", r_half)};
}

Outcome loss_stationarity() {
  double worst = 0.0;
  for (double residual : {0.1, 1.0, 2.0, 5.0}) {
    for (double y_hat : {-1.3, 0.0, 2.0}) {
      const double y = y_hat + residual;
      worst = std::max(worst, std::abs(loss_grad_s(y_hat, std::log(residual * residual), y)));
    }
  }
  const double at_zero = nll_loss(0.7, 0.0, 0.7);
  return {worst <= 1e-10 && at_zero == 0.0,
          "max |dL/ds| at s = ln(res^2) is " + fmt("%.2e", worst) + " (limit 1e-10); L(y=y_hat, s=0) = " +
              fmt("%g", at_zero)};
}

Outcome degradation_calibration() {
  const auto t0 = Clock::now();
  const int trials = 100000;
  const double eta = 0.4, lambda = 0.3;
  ReferenceStats stats;
  stats.sigma_ref = {0.0, 2.0, 0.5};

  Sample s;
  s.features = {Matrix(1, 1), Matrix(1, 1), Matrix(1, 1)};
  s.features[0].fill(1.0);
  SeededRng rng(20);
  std::array<std::size_t, kNumModalities> missing{};
  for (int i = 0; i < trials; ++i) {
    const auto [out, mask] = degrade_sample(s, DegradationSpec::cell(0.0, eta, 0), stats, rng);
    for (Modality m : kAllModalities) missing[index_of(m)] += mask.is_missing(m) ? 1 : 0;
  }
  double miss_err = 0.0;
  for (std::size_t c : missing) miss_err = std::max(miss_err, std::abs(static_cast<double>(c) / trials - eta));

  DegradationSpec noise;
  noise.protocol = NoiseOnly{};
  noise.lambda = {lambda, lambda, lambda};
  std::array<double, 2> sum{}, sq{};
  std::size_t dropped = 0;
  for (int i = 0; i < trials; ++i) {
    const auto [out, mask] = degrade_sample(s, noise, stats, rng);
    dropped += out.features[0](0, 0) == 0.0 ? 1 : 0;
    for (std::size_t k = 0; k < 2; ++k) {
      const double e = out.features[k + 1](0, 0);
      sum[k] += e;
      sq[k] += e * e;
    }
  }
  double std_err = 0.0;
  for (std::size_t k = 0; k < 2; ++k) {
    const double mean = sum[k] / trials;
    const double sd = std::sqrt(sq[k] / trials - mean * mean);
    std_err = std::max(std_err, std::abs(sd / (lambda * stats.sigma_ref[k + 1]) - 1.0));
  }
  const double drop_err = std::abs(static_cast<double>(dropped) / trials - lambda);
  const double secs = seconds_since(t0);
  return {miss_err <= 0.005 && std_err <= 0.01 && drop_err <= 0.005 && secs < 30.0,
          "missing-rate error " + fmt("%.4f", miss_err) + " (limit 0.005), noise-std relative error " +
              fmt("%.4f", std_err) + " (limit 0.01), token-drop error " + fmt("%.4f", drop_err) +
              " (limit 0.005), " + fmt("%.1f", secs) + " s"};
}

double mean_r(const Predictions& p) {
  return (p.mean_r[0] + p.mean_r[1] + p.mean_r[2]) / 3.0;
}

Outcome quality_separation() {
  const auto t0 = Clock::now();
  std::vector<double> gaps;
  std::string per_seed;
  for (std::size_t i = 0; i < kSeeds.size(); ++i) {
    SeedRun& run = runs.get(i, false);
    const auto test = run.data.test();
    const Predictions clean = predict_split(run.full, test, DegradationSpec::clean(run.seed), run.stats);
    const Predictions noisy =
        predict_split(run.full, test, DegradationSpec::cell(0.7, 0.0, run.seed), run.stats);
    gaps.push_back(mean_r(clean) - mean_r(noisy));
    per_seed += " " + fmt("%.3f", mean_r(clean)) + "->" + fmt("%.3f", mean_r(noisy)) + " (t " +
                fmt("%.2f", clean.mean_r[0]) + "->" + fmt("%.2f", noisy.mean_r[0]) + ", a " +
                fmt("%.2f", clean.mean_r[1]) + "->" + fmt("%.2f", noisy.mean_r[1]) + ", v " +
                fmt("%.2f", clean.mean_r[2]) + "->" + fmt("%.2f", noisy.mean_r[2]) + ");";
  }
  const double secs = seconds_since(t0);
  const double med = median(gaps);
  return {med > 0.1 && secs < 600.0,
          "median r(clean) - r(lambda=0.7) = " + fmt("%.4f", med) + " (needs > 0.1); per seed" +
              per_seed + " " + fmt("%.0f", secs) + " s"};
}

Outcome ablation_direction() {
  std::vector<double> full, gated;
  for (std::size_t i = 0; i < kSeeds.size(); ++i) {
    SeedRun& run = runs.get(i, true);
    const DegradationSpec p3 = mixture_spec(StochasticMixture{}, run.seed);
    full.push_back(evaluate(run.full, run.data.test(), p3, run.stats).mae);
    gated.push_back(evaluate(*run.no_gating, run.data.test(), p3, run.stats).mae);
  }
  const double f = median(full), g = median(gated);
  const double reduction = 1.0 - f / g;
  return {reduction >= 0.05,
          "Protocol III median MAE full " + fmt("%.4f", f) + " vs no-quality-gating " + fmt("%.4f", g) +
              ": " + fmt("%.2f", 100.0 * reduction) + "% lower (needs >= 5%)"};
}

Outcome grid_trend() {
  SeedRun& run = runs.get(0, false);
  const auto t0 = Clock::now();
  const GridSpec grid;
  const GridResult g = grid_sweep(run.full, run.data.test(), run.stats, grid, 1);
  const double secs = seconds_since(t0);
  std::vector<double> diag;
  for (std::size_t i = 0; i < 8; ++i) diag.push_back(100.0 * g.at(i, i).acc7);
  int inversions = 0;
  double worst_rise = 0.0;
  for (std::size_t i = 0; i + 1 < diag.size(); ++i) {
    if (diag[i + 1] > diag[i]) {
      ++inversions;
      worst_rise = std::max(worst_rise, diag[i + 1] - diag[i]);
    }
  }
  const bool monotone = inversions == 0 || (inversions == 1 && worst_rise <= 1.0);
  const bool ends = g.at(0, 0).acc7 > g.at(7, 7).acc7;
  std::string d;
  for (double v : diag) d += " " + fmt("%.2f", v);
  return {secs < 300.0 && monotone && ends,
          "64 cells in " + fmt("%.1f", secs) + " s; ACC7 diagonal" + d + " (" +
              std::to_string(inversions) + " inversions)"};
}

Outcome fixed_missing_order() {
  const std::vector<std::string> conds = {"t", "a", "v", "t,a,v"};
  std::map<std::string, std::vector<double>> acc;
  for (std::size_t i = 0; i < kSeeds.size(); ++i) {
    SeedRun& run = runs.get(i, false);
    for (const auto& c : conds) {
      DegradationSpec spec;
      spec.protocol = FixedMissing{ModalitySet::parse(c)};
      spec.seed = run.seed;
      acc[c].push_back(evaluate(run.full, run.data.test(), spec, run.stats).acc2);
    }
  }
  const double t = median(acc["t"]), a = median(acc["a"]), v = median(acc["v"]),
               all = median(acc["t,a,v"]);
  return {t > a && t > v && all >= t && all >= a && all >= v,
          "median ACC2 {t} " + fmt("%.4f", t) + ", {a} " + fmt("%.4f", a) + ", {v} " + fmt("%.4f", v) +
              ", {t,a,v} " + fmt("%.4f", all)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome reproducibility() {
  const auto base = std::filesystem::temp_directory_path() / ("qamoe-acceptance-" + std::to_string(::getpid()));
  std::filesystem::remove_all(base);
  std::vector<std::filesystem::path> dirs = {base / "a", base / "b"};
  std::ostringstream sink;
  for (const auto& dir : dirs) {
    const std::string d = dir.string();
    cli::Environment env;
    env.out_dir = d.c_str();
    for (std::vector<const char*> args : {std::vector<const char*>{"qamoe", "--seed", "1111", "gen"},
                                          std::vector<const char*>{"qamoe", "--seed", "1111", "train"},
                                          std::vector<const char*>{"qamoe", "--seed", "1111", "grid"}}) {
      const int code = cli::run(static_cast<int>(args.size()), args.data(), sink, sink, env);
      if (code != 0) {
        std::filesystem::remove_all(base);
        return {false, std::string("command '") + args.back() + "' exited with " + std::to_string(code)};
      }
    }
  }
  std::vector<std::string> files = {cli::kDatasetFile, cli::kCheckpointFile};
  for (GridMetric m : {GridMetric::kAcc7, GridMetric::kAcc2, GridMetric::kF1, GridMetric::kMae,
                       GridMetric::kCorr}) {
    files.push_back(cli::grid_file_name(m));
  }
  std::string differing;
  for (const auto& f : files) {
    const std::string a = slurp(dirs[0] / f);
    if (a.empty() || a != slurp(dirs[1] / f)) differing += " " + f;
  }
  std::filesystem::remove_all(base);
  return {differing.empty(), differing.empty()
                                 ? "dataset, checkpoint and 5 grid CSVs byte-identical across two runs"
                                 : "differing files:" + differing};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient oracle", gradient_oracle},
      {"aggregation identities", aggregation_identities},
      {"loss stationarity", loss_stationarity},
      {"degradation calibration", degradation_calibration},
      {"quality separation", quality_separation},
      {"ablation direction", ablation_direction},
      {"degradation grid trend", grid_trend},
      {"fixed-missing ordering", fixed_missing_order},
      {"reproducibility", reproducibility},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.contains(number)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", number, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  if (runs.train_seconds() > 0.0) {
    std::printf("training time for criteria 5-8: %.0f s\n", runs.train_seconds());
  }
  return failures == 0 ? 0 : 1;
}
