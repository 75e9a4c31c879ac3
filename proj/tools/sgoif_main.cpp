// sgoif: streaming influence estimation with stability-gated confidence.
//
// Subcommands:
//   run          single experiment from a config file
//   ablate       full variant matrix with shared seeds
//   oracle-check dense lemma-bound verification suites
//   metrics      recompute detection metrics from a score dump
//
// Exit codes: 0 success, 2 config error, 3 oracle-check failure.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "sgoif/harness.hpp"
#include "sgoif/io_util.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitOracleFailure = 3;

sgoif::ExperimentConfig load_config(const std::string& config_path,
                                    bool has_seed, std::uint64_t seed,
                                    int threads) {
  sgoif::ExperimentConfig config;
  if (!config_path.empty())
    config = sgoif::parse_config_file(config_path);
  if (has_seed) config.seed = seed;
  if (threads > 0) config.threads = threads;
  config.validate();
  return config;
}

void print_summary(const std::string& label,
                   const sgoif::MetricsReport& report) {
  auto fmt = [](const std::optional<double>& v) {
    return v.has_value() ? sgoif::format_double(*v) : std::string("null");
  };
  std::cout << label << ": aupr=" << fmt(report.aupr)
            << " auroc=" << fmt(report.auroc) << " p@1%="
            << fmt(report.p_at_k.count("1") ? report.p_at_k.at("1")
                                            : std::nullopt)
            << " tau=" << fmt(report.kendall_tau_adjacent)
            << " hvp/step=" << sgoif::format_double(report.hvp_count_per_step)
            << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stability-gated online influence estimation"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;

  auto add_common = [&](CLI::App* cmd, bool needs_out) {
    cmd->add_option("--config", config_path, "Experiment config file");
    auto* seed_opt = cmd->add_option("--seed", seed, "Override config seed");
    seed_opt->each([&](const std::string&) { seed_set = true; });
    cmd->add_option("--threads", threads, "Worker threads (default: config)");
    auto* out = cmd->add_option("--out", out_dir, "Output directory");
    if (needs_out) out->required();
  };

  CLI::App* run_cmd = app.add_subcommand("run", "Run a single experiment");
  add_common(run_cmd, false);

  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "Run the ablation variant matrix");
  add_common(ablate_cmd, false);

  CLI::App* oracle_cmd =
      app.add_subcommand("oracle-check", "Dense lemma-bound suites");
  std::uint64_t oracle_seed = 20250810;
  oracle_cmd->add_option("--seed", oracle_seed, "Suite seed");
  std::string oracle_out;
  oracle_cmd->add_option("--out", oracle_out, "Write JSON report here");

  CLI::App* metrics_cmd = app.add_subcommand(
      "metrics", "Recompute metrics from a scores_epoch_<k>.csv dump");
  std::string scores_path;
  metrics_cmd->add_option("--scores", scores_path, "Score dump CSV")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      auto config = load_config(config_path, seed_set, seed, threads);
      sgoif::RunResult result = sgoif::run_sgoif(config, out_dir);
      print_summary("run", result.report);
      if (out_dir.empty())
        std::cout << sgoif::metrics_report_to_json(result.report, config);
      return kExitOk;
    }

    if (ablate_cmd->parsed()) {
      auto config = load_config(config_path, seed_set, seed, threads);
      auto rows = sgoif::run_ablation_suite(config, out_dir);
      for (const auto& row : rows) print_summary(row.variant, row.report);
      return kExitOk;
    }

    if (oracle_cmd->parsed()) {
      sgoif::OracleCheckReport report = sgoif::oracle_check(oracle_seed);
      for (const auto& e : report.entries) {
        std::cout << (e.failures == 0 ? "[PASS] " : "[FAIL] ") << e.suite
                  << ": " << (e.total - e.failures) << '/' << e.total
                  << " checks, worst slack "
                  << sgoif::format_double(e.worst_slack) << '\n';
      }
      if (!oracle_out.empty()) {
        std::ofstream out(oracle_out, std::ios::binary);
        if (!out) throw sgoif::IoError("cannot write " + oracle_out);
        out << sgoif::oracle_report_to_json(report);
      }
      return report.all_passed() ? kExitOk : kExitOracleFailure;
    }

    if (metrics_cmd->parsed()) {
      std::ifstream in(scores_path, std::ios::binary);
      if (!in) throw sgoif::IoError("cannot open " + scores_path);
      sgoif::MetricsReport report = sgoif::metrics_from_scores_csv(in);
      print_summary("metrics", report);
      return kExitOk;
    }
  } catch (const sgoif::ConfigInvalid& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitOk;
}
