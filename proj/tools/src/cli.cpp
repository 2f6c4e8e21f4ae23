#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <optional>
#include <ostream>

#include "commands.hpp"

namespace qamoe::cli {

namespace {

namespace fs = std::filesystem;

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

void print_metrics(std::ostream& out, const std::string& label, const MetricsRecord& m) {
  out << label << ": acc7 " << format("%.4f", m.acc7) << " acc2 " << format("%.4f", m.acc2)
      << " f1 " << format("%.4f", m.f1) << " mae " << format("%.4f", m.mae) << " corr "
      << format("%.4f", m.corr) << " (n=" << m.n << ")\n";
}

std::vector<double> parse_lambda(const std::string& text) {
  std::vector<double> out;
  for (const std::string& part : CLI::detail::split(text, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != part.size() || part.empty()) throw InvalidInput("--lambda: cannot parse '" + part + "'");
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidInput("--lambda: values must be in [0, 1]");
    out.push_back(v);
  }
  if (out.size() != 1 && out.size() != kNumModalities) {
    throw InvalidInput("--lambda: expected one value or one per modality (text,audio,vision)");
  }
  return out;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
        const Environment& env) {
  CLI::App app{"Quality-aware mixture of experts on synthetic tri-modal data", "qamoe"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  app.add_option("-c,--config", config_path, "INI run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Override every seed in the configuration");

  std::string dataset_opt, checkpoint_opt;
  auto add_dataset = [&](CLI::App* sub) {
    sub->add_option("--dataset", dataset_opt, "Dataset file (default <out>/dataset.qmds)");
  };
  auto add_checkpoint = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", checkpoint_opt,
                    "Checkpoint file (default <out>/checkpoint.qmck)");
  };

  CLI::App* gen = app.add_subcommand("gen", "Generate the synthetic dataset");

  CLI::App* train_cmd = app.add_subcommand("train", "Train a checkpoint");
  std::optional<std::string> mode;
  std::optional<double> lr;
  train_cmd->add_option("--mode", mode, "clean or spectrum")
      ->check(CLI::IsMember({"clean", "spectrum"}));
  train_cmd->add_option("--lr", lr, "Base learning rate")->check(CLI::PositiveNumber);
  add_dataset(train_cmd);

  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint under one protocol");
  std::optional<std::string> protocol, available, lambda_text;
  std::optional<double> eta;
  eval_cmd->add_option("--protocol", protocol, "I (missing), II (noise) or III (mixture)")
      ->check(CLI::IsMember({"I", "II", "III", "missing", "noise", "mixture"}));
  eval_cmd->add_option("--available", available, "Protocol I fixed subset, e.g. t,a");
  eval_cmd->add_option("--eta", eta, "Protocol I random missing rate")->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_option("--lambda", lambda_text, "Protocol II level, one value or t,a,v");
  add_dataset(eval_cmd);
  add_checkpoint(eval_cmd);

  CLI::App* grid_cmd = app.add_subcommand("grid", "Evaluate one checkpoint over the (eta, lambda) grid");
  std::optional<unsigned> jobs;
  grid_cmd->add_option("-j,--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  add_dataset(grid_cmd);
  add_checkpoint(grid_cmd);

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "Train and score model variants under Protocol III");
  std::string variant_name_opt = "all";
  ablate_cmd->add_option("--variant", variant_name_opt,
                         "full, no-quality-gating, no-variance, no-prior or all");
  add_dataset(ablate_cmd);

  CLI::App* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient oracle");
  GradCheckOptions gc;
  gradcheck_cmd->add_option("--draws", gc.draws, "Random draws per variant")->check(CLI::PositiveNumber);
  gradcheck_cmd->add_option("--tolerance", gc.tolerance, "Maximum relative error")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    RunConfig cfg = config_path.empty() ? parse_run_config("", "<defaults>")
                                        : load_run_config(config_path);
    if (seed) cfg.override_seed(*seed);
    const fs::path out_dir = resolve_output_dir(cfg, env.out_dir);
    const fs::path dataset_path = dataset_opt.empty() ? out_dir / kDatasetFile : fs::path(dataset_opt);
    const fs::path checkpoint_path =
        checkpoint_opt.empty() ? out_dir / kCheckpointFile : fs::path(checkpoint_opt);

    if (*gen) {
      const GenSummary s = cmd_gen(cfg, out_dir);
      out << "wrote " << s.dataset.string() << " (fingerprint " << hex_fingerprint(s.fingerprint)
          << ")\n";
    } else if (*train_cmd) {
      if (mode) cfg.train.mode = parse_training_mode(*mode);
      if (lr) cfg.train.adam.lr = *lr;
      const TrainSummary s = cmd_train(cfg, out_dir, dataset_path, env.hooks);
      for (const EpochReport& r : s.report) {
        out << "epoch " << r.epoch << " loss " << format("%.5f", r.train_loss) << " val_mae "
            << format("%.5f", r.val_mae) << '\n';
      }
      out << "wrote " << s.checkpoint.string() << " (best epoch " << s.best_epoch << ", "
          << training_mode_name(cfg.train.mode) << " mode)\n";
    } else if (*eval_cmd) {
      if (protocol) cfg.eval.protocol = parse_protocol(*protocol);
      if (available) {
        const ModalitySet set = ModalitySet::parse(*available);
        if (set.empty()) throw InvalidInput("--available needs at least one modality");
        cfg.eval.available = set;
      }
      if (eta) {
        cfg.eval.eta = *eta;
        if (!available) cfg.eval.available.reset();
      }
      if (lambda_text) {
        const std::vector<double> l = parse_lambda(*lambda_text);
        cfg.eval.lambda = l.size() == 1 ? std::array{l[0], l[0], l[0]} : std::array{l[0], l[1], l[2]};
      }
      const EvalSummary s = cmd_eval(cfg, out_dir, dataset_path, checkpoint_path);
      print_metrics(out, s.condition, s.metrics);
      out << "wrote " << (out_dir / kMetricsFile).string() << " and "
          << (out_dir / kGatesFile).string() << '\n';
    } else if (*grid_cmd) {
      const GridResult g = cmd_grid(cfg, out_dir, dataset_path, checkpoint_path, jobs.value_or(cfg.jobs));
      out << grid_csv(g, GridMetric::kAcc7);
      out << "wrote " << g.eta_values.size() * g.lambda_values.size() << " cells to "
          << out_dir.string() << "/grid_*.csv\n";
    } else if (*ablate_cmd) {
      std::vector<Variant> variants;
      if (variant_name_opt == "all") {
        variants = {Variant::kFull, Variant::kNoQualityGating, Variant::kNoVariance,
                    Variant::kNoPrior};
      } else {
        variants = {parse_variant(variant_name_opt)};
      }
      for (const AblationResult& r : cmd_ablate(cfg, out_dir, dataset_path, variants)) {
        print_metrics(out, std::string(variant_name(r.variant)), r.metrics);
      }
      out << "wrote " << (out_dir / kAblationFile).string() << '\n';
    } else if (*gradcheck_cmd) {
      if (seed) gc.seed = *seed;
      const GradCheckSummary s = cmd_gradcheck(gc);
      for (const auto& [v, r] : s.reports) {
        out << variant_name(v) << ": " << r.draws << " draws, " << r.entries
            << " entries, max relative error " << format("%.3e", r.max_rel_error) << " ("
            << r.worst_tensor << ")\n";
      }
      out << (s.passed ? "PASS" : "FAIL") << " at tolerance " << format("%.1e", gc.tolerance) << '\n';
      return s.passed ? kOk : kCheckFailed;
    }
    return kOk;
  } catch (const IoError& e) {
    err << "qamoe " << command << ": " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    err << "qamoe " << command << ": " << e.what() << '\n';
    return kFormat;
  } catch (const VersionError& e) {
    err << "qamoe " << command << ": " << e.what() << '\n';
    return kFormat;
  } catch (const DivergenceError& e) {
    err << "qamoe " << command << ": training diverged: " << e.what() << '\n';
    return kDivergence;
  } catch (const UndefinedMetric& e) {
    err << "qamoe " << command << ": " << e.what() << '\n';
    return kMetric;
  } catch (const OracleFailure& e) {
    err << "qamoe " << command << ": " << e.what() << '\n';
    return kCheckFailed;
  } catch (const OutputError& e) {
    err << "qamoe " << command << ": " << e.what() << '\n';
    return kOutput;
  } catch (const InvalidInput& e) {
    err << "qamoe " << command << ": " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "qamoe " << command << ": internal error: " << e.what() << '\n';
    return kInternal;
  }
}

}  // namespace qamoe::cli
