#ifndef SGOIF_HARNESS_HPP
#define SGOIF_HARNESS_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sgoif/config.hpp"
#include "sgoif/metrics.hpp"
#include "sgoif/scoring.hpp"

namespace sgoif {

struct CheckpointMetrics {
  long step = 0;
  std::optional<double> p_at_1;
  std::optional<double> p_at_5;
  std::optional<double> aupr;
  std::optional<double> auroc;
  std::optional<double> kendall_tau_adjacent;  // vs previous checkpoint
};

struct MetricsReport {
  std::map<std::string, std::optional<double>> p_at_k;  // "1", "5" percent
  std::optional<double> aupr;
  std::optional<double> auroc;
  std::optional<double> kendall_tau_adjacent;  // mean over adjacent pairs
  double hvp_count_per_step = 0.0;
  long hvp_count_per_step_max = 0;
  std::optional<double> wall_overhead_ratio;  // only when measured
  std::vector<double> residual_trace;    // per-step median over anchors
  std::vector<double> confidence_trace;  // per-step mean over anchors
  std::vector<CheckpointMetrics> checkpoints;
  double final_train_loss = 0.0;
  long replacement_count = 0;
  long coverage_trigger_count = 0;
  // Final-checkpoint top-1% certification (Lemma-margin check).
  std::optional<double> top1pct_gamma;
  std::optional<bool> top1pct_certified;
  std::optional<double> sup_error_bound;
  double score_probability_mean = 0.0;  // temperature-mapped summary
  double temperature_applied = 1.0;
  bool no_confidence_epochs = false;
};

struct RunResult {
  MetricsReport report;
  std::vector<InfluenceRecord> final_records;
  std::vector<char> noisy_truth;  // 1 per train example
  Dataset train_data;             // post-noise training set
};

/// Execute the full step loop (model update, surrogate build, subspace
/// refresh, per-anchor solves, gating, scoring, replacement/refinement)
/// and compute metrics at every eval checkpoint. Deterministic for a
/// fixed (config, seed) at any thread count. When `out_dir` is non-empty
/// the run writes metrics.json, scores_epoch_<k>.csv, controller_trace.csv
/// and solver_trace.csv there.
RunResult run_sgoif(const ExperimentConfig& config,
                    const std::string& out_dir = "");

/// Ablation variant matrix of Table-5 shape.
struct AblationRow {
  std::string variant;
  MetricsReport report;
};
extern const std::vector<std::string> kAblationVariants;
ExperimentConfig apply_ablation_variant(const ExperimentConfig& base,
                                        const std::string& variant);
std::vector<AblationRow> run_ablation_suite(const ExperimentConfig& base,
                                            const std::string& out_dir = "");

/// Dense lemma-bound verification suites with measured slack per entry.
struct OracleCheckEntry {
  std::string suite;
  int total = 0;
  int failures = 0;
  double worst_slack = 0.0;  // min of (bound - measured); >= 0 when passing
};
struct OracleCheckReport {
  std::vector<OracleCheckEntry> entries;
  bool all_passed() const;
};
OracleCheckReport oracle_check(std::uint64_t seed = 20250810);

std::string metrics_report_to_json(const MetricsReport& report,
                                   const ExperimentConfig& config);
std::string oracle_report_to_json(const OracleCheckReport& report);

/// Recompute detection metrics from a score-dump CSV (the `metrics` CLI
/// subcommand).
MetricsReport metrics_from_scores_csv(std::istream& in);

}  // namespace sgoif

#endif
