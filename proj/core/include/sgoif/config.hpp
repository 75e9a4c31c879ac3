#ifndef SGOIF_CONFIG_HPP
#define SGOIF_CONFIG_HPP

#include <cstdint>
#include <iosfwd>
#include <string>

#include "sgoif/curvature.hpp"
#include "sgoif/models.hpp"

namespace sgoif {

enum class Task { kQuadratic, kLogisticNoise, kMlpNoise };
enum class GateMode { kStability, kMa, kNone };

Task task_from_string(const std::string& name);
const char* task_name(Task t);
GateMode gate_from_string(const std::string& name);
const char* gate_name(GateMode g);

/// Full experiment description. Every field has a default and every
/// resolved value is echoed into the emitted report for provenance.
struct ExperimentConfig {
  Task task = Task::kLogisticNoise;
  int n = 1000;
  int d = 30;        // parameter dimension (consistency-checked per task)
  int classes = 2;
  int mlp_hidden = 8;
  double cluster_radius = 2.0;

  double noise_rate = 0.2;
  NoiseMode noise_mode = NoiseMode::kSymmetric;
  double sparsity = 0.0;

  std::uint64_t seed = 1;
  long steps = 3000;
  int batch_size = 32;

  int k_anchors = 8;
  int rank_r = 8;
  long subspace_period = 50;   // T_r
  long anchor_period = 200;    // T_a
  int validation_pool = 64;

  double kappa = 50.0;
  double gamma1 = 1.0;
  double gamma2 = 1.0;
  double alpha_damping = 1e-3;
  Backend backend = Backend::kDiagonal;
  GateMode gate = GateMode::kStability;

  // Ablation switches.
  bool precond = true;
  bool calibration = true;
  bool trigger = true;
  bool lowrank = true;
  bool temperature_enabled = true;
  double temperature = 1.0;

  long eval_every = 250;

  // Training.
  double eta0 = 0.2;
  double eta_decay_t0 = 0.0;  // 0 = constant schedule
  double lambda_w = 1e-3;

  // Solver schedule.
  std::string rho_rule = "robbins-monro";  // or "constant"
  double rho0 = 0.1;
  double rho_t0 = 100.0;
  int max_neumann_k = 10;
  int cg_max_iters = 20;

  // Refinement trigger.
  double magnitude_quantile = 0.99;
  double confidence_floor = 0.3;

  int ma_window = 20;
  int bernstein_window = 16;
  double bernstein_alpha = 0.05;
  double delta_threshold = 0.1;

  bool freeze_anchor_gradients = false;  // oracle mode: fixed targets
  bool signed_score = false;  // rank by signed score, not |score|
  bool measure_overhead = false;
  int threads = 1;

  int feature_dim() const;
  void validate() const;  // throws ConfigInvalid
};

/// Flat key = value text format; '#' starts a comment. Unknown keys are
/// rejected so typos cannot silently fall back to defaults.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig parse_config_file(const std::string& path);

/// Apply one key = value override (CLI pass-through).
void apply_config_override(ExperimentConfig& config, const std::string& key,
                           const std::string& value);

/// Serialize with every resolved value, parseable by parse_config.
std::string config_to_text(const ExperimentConfig& config);

}  // namespace sgoif

#endif
