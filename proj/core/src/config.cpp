#include "sgoif/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "sgoif/io_util.hpp"

namespace sgoif {
namespace {

std::string trim(const std::string& s) {
  const auto from = s.find_first_not_of(" \t\r\n");
  if (from == std::string::npos) return "";
  const auto to = s.find_last_not_of(" \t\r\n");
  return s.substr(from, to - from + 1);
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigInvalid("expected boolean, got: " + v);
}

NoiseMode noise_mode_from_string(const std::string& v) {
  if (v == "symmetric") return NoiseMode::kSymmetric;
  if (v == "asymmetric") return NoiseMode::kAsymmetric;
  throw ConfigInvalid("unknown noise_mode: " + v);
}

const char* noise_mode_name(NoiseMode m) {
  return m == NoiseMode::kSymmetric ? "symmetric" : "asymmetric";
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"task", [](auto& c, const auto& v) { c.task = task_from_string(v); }},
      {"n", [](auto& c, const auto& v) { c.n = static_cast<int>(parse_long(v)); }},
      {"d", [](auto& c, const auto& v) { c.d = static_cast<int>(parse_long(v)); }},
      {"classes",
       [](auto& c, const auto& v) { c.classes = static_cast<int>(parse_long(v)); }},
      {"mlp_hidden",
       [](auto& c, const auto& v) { c.mlp_hidden = static_cast<int>(parse_long(v)); }},
      {"cluster_radius",
       [](auto& c, const auto& v) { c.cluster_radius = parse_double(v); }},
      {"noise_rate",
       [](auto& c, const auto& v) { c.noise_rate = parse_double(v); }},
      {"noise_mode",
       [](auto& c, const auto& v) { c.noise_mode = noise_mode_from_string(v); }},
      {"sparsity", [](auto& c, const auto& v) { c.sparsity = parse_double(v); }},
      {"seed",
       [](auto& c, const auto& v) {
         c.seed = static_cast<std::uint64_t>(parse_long(v));
       }},
      {"steps", [](auto& c, const auto& v) { c.steps = parse_long(v); }},
      {"batch_size",
       [](auto& c, const auto& v) { c.batch_size = static_cast<int>(parse_long(v)); }},
      {"k_anchors",
       [](auto& c, const auto& v) { c.k_anchors = static_cast<int>(parse_long(v)); }},
      {"rank_r",
       [](auto& c, const auto& v) { c.rank_r = static_cast<int>(parse_long(v)); }},
      {"subspace_period",
       [](auto& c, const auto& v) { c.subspace_period = parse_long(v); }},
      {"anchor_period",
       [](auto& c, const auto& v) { c.anchor_period = parse_long(v); }},
      {"validation_pool",
       [](auto& c, const auto& v) {
         c.validation_pool = static_cast<int>(parse_long(v));
       }},
      {"kappa", [](auto& c, const auto& v) { c.kappa = parse_double(v); }},
      {"gamma1", [](auto& c, const auto& v) { c.gamma1 = parse_double(v); }},
      {"gamma2", [](auto& c, const auto& v) { c.gamma2 = parse_double(v); }},
      {"alpha_damping",
       [](auto& c, const auto& v) { c.alpha_damping = parse_double(v); }},
      {"backend",
       [](auto& c, const auto& v) { c.backend = backend_from_string(v); }},
      {"gate", [](auto& c, const auto& v) { c.gate = gate_from_string(v); }},
      {"precond", [](auto& c, const auto& v) { c.precond = parse_bool(v); }},
      {"calibration",
       [](auto& c, const auto& v) { c.calibration = parse_bool(v); }},
      {"trigger", [](auto& c, const auto& v) { c.trigger = parse_bool(v); }},
      {"lowrank", [](auto& c, const auto& v) { c.lowrank = parse_bool(v); }},
      {"temperature_enabled",
       [](auto& c, const auto& v) { c.temperature_enabled = parse_bool(v); }},
      {"temperature",
       [](auto& c, const auto& v) { c.temperature = parse_double(v); }},
      {"eval_every",
       [](auto& c, const auto& v) { c.eval_every = parse_long(v); }},
      {"eta0", [](auto& c, const auto& v) { c.eta0 = parse_double(v); }},
      {"eta_decay_t0",
       [](auto& c, const auto& v) { c.eta_decay_t0 = parse_double(v); }},
      {"lambda_w", [](auto& c, const auto& v) { c.lambda_w = parse_double(v); }},
      {"rho_rule", [](auto& c, const auto& v) { c.rho_rule = v; }},
      {"rho0", [](auto& c, const auto& v) { c.rho0 = parse_double(v); }},
      {"rho_t0", [](auto& c, const auto& v) { c.rho_t0 = parse_double(v); }},
      {"max_neumann_k",
       [](auto& c, const auto& v) {
         c.max_neumann_k = static_cast<int>(parse_long(v));
       }},
      {"cg_max_iters",
       [](auto& c, const auto& v) {
         c.cg_max_iters = static_cast<int>(parse_long(v));
       }},
      {"magnitude_quantile",
       [](auto& c, const auto& v) { c.magnitude_quantile = parse_double(v); }},
      {"confidence_floor",
       [](auto& c, const auto& v) { c.confidence_floor = parse_double(v); }},
      {"ma_window",
       [](auto& c, const auto& v) { c.ma_window = static_cast<int>(parse_long(v)); }},
      {"bernstein_window",
       [](auto& c, const auto& v) {
         c.bernstein_window = static_cast<int>(parse_long(v));
       }},
      {"bernstein_alpha",
       [](auto& c, const auto& v) { c.bernstein_alpha = parse_double(v); }},
      {"delta_threshold",
       [](auto& c, const auto& v) { c.delta_threshold = parse_double(v); }},
      {"freeze_anchor_gradients",
       [](auto& c, const auto& v) { c.freeze_anchor_gradients = parse_bool(v); }},
      {"signed_score",
       [](auto& c, const auto& v) { c.signed_score = parse_bool(v); }},
      {"measure_overhead",
       [](auto& c, const auto& v) { c.measure_overhead = parse_bool(v); }},
      {"threads",
       [](auto& c, const auto& v) { c.threads = static_cast<int>(parse_long(v)); }},
  };
  return table;
}

}  // namespace

Task task_from_string(const std::string& name) {
  if (name == "quadratic") return Task::kQuadratic;
  if (name == "logistic-noise") return Task::kLogisticNoise;
  if (name == "mlp-noise") return Task::kMlpNoise;
  throw ConfigInvalid("unknown task: " + name);
}

const char* task_name(Task t) {
  switch (t) {
    case Task::kQuadratic: return "quadratic";
    case Task::kLogisticNoise: return "logistic-noise";
    case Task::kMlpNoise: return "mlp-noise";
  }
  return "?";
}

GateMode gate_from_string(const std::string& name) {
  if (name == "stability") return GateMode::kStability;
  if (name == "ma") return GateMode::kMa;
  if (name == "none") return GateMode::kNone;
  throw ConfigInvalid("unknown gate: " + name);
}

const char* gate_name(GateMode g) {
  switch (g) {
    case GateMode::kStability: return "stability";
    case GateMode::kMa: return "ma";
    case GateMode::kNone: return "none";
  }
  return "?";
}

int ExperimentConfig::feature_dim() const {
  switch (task) {
    case Task::kQuadratic:
      return d;
    case Task::kLogisticNoise:
      if (d % classes != 0)
        throw ConfigInvalid("logistic task needs d divisible by classes");
      return d / classes;
    case Task::kMlpNoise: {
      // d = h p + h + c h + c  =>  p = (d - h - c h - c) / h
      const long numer = static_cast<long>(d) - mlp_hidden -
                         static_cast<long>(classes) * mlp_hidden - classes;
      if (numer <= 0 || numer % mlp_hidden != 0)
        throw ConfigInvalid(
            "mlp task: d inconsistent with mlp_hidden/classes");
      return static_cast<int>(numer / mlp_hidden);
    }
  }
  return d;
}

void ExperimentConfig::validate() const {
  if (n < 1) throw ConfigInvalid("n must be >= 1");
  if (d < 1) throw ConfigInvalid("d must be >= 1");
  if (classes < 1) throw ConfigInvalid("classes must be >= 1");
  if (noise_rate < 0.0 || noise_rate > 1.0)
    throw ConfigInvalid("noise_rate outside [0,1]");
  if (sparsity < 0.0 || sparsity > 1.0)
    throw ConfigInvalid("sparsity outside [0,1]");
  if (steps < 1) throw ConfigInvalid("steps must be >= 1");
  if (batch_size < 1) throw ConfigInvalid("batch_size must be >= 1");
  if (k_anchors < 1) throw ConfigInvalid("k_anchors must be >= 1");
  if (rank_r < 0) throw ConfigInvalid("rank_r must be >= 0");
  if (subspace_period < 1) throw ConfigInvalid("subspace_period must be >= 1");
  if (anchor_period < 1) throw ConfigInvalid("anchor_period must be >= 1");
  if (eval_every < 1) throw ConfigInvalid("eval_every must be >= 1");
  if (validation_pool < k_anchors)
    throw ConfigInvalid("validation_pool must cover k_anchors");
  if (kappa < 0.0) throw ConfigInvalid("kappa must be >= 0");
  if (alpha_damping <= 0.0) throw ConfigInvalid("alpha_damping must be > 0");
  if (eta0 <= 0.0) throw ConfigInvalid("eta0 must be > 0");
  if (lambda_w < 0.0) throw ConfigInvalid("lambda_w must be >= 0");
  if (rho_rule != "constant" && rho_rule != "robbins-monro")
    throw ConfigInvalid("rho_rule must be constant or robbins-monro");
  if (rho0 <= 0.0) throw ConfigInvalid("rho0 must be > 0");
  if (rho_t0 <= 0.0) throw ConfigInvalid("rho_t0 must be > 0");
  if (magnitude_quantile <= 0.0 || magnitude_quantile >= 1.0)
    throw ConfigInvalid("magnitude_quantile outside (0,1)");
  if (confidence_floor < 0.0 || confidence_floor > 1.0)
    throw ConfigInvalid("confidence_floor outside [0,1]");
  if (ma_window < 1) throw ConfigInvalid("ma_window must be >= 1");
  if (bernstein_window < 1) throw ConfigInvalid("bernstein_window must be >= 1");
  if (bernstein_alpha <= 0.0 || bernstein_alpha >= 1.0)
    throw ConfigInvalid("bernstein_alpha outside (0,1)");
  if (threads < 1) throw ConfigInvalid("threads must be >= 1");
  if (temperature <= 0.0) throw ConfigInvalid("temperature must be > 0");
  if (task != Task::kQuadratic && classes < 2)
    throw ConfigInvalid("classification tasks need classes >= 2");
  (void)feature_dim();  // task/shape consistency
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig config;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigInvalid("config line " + std::to_string(lineno) +
                          ": expected key = value");
    apply_config_override(config, trim(line.substr(0, eq)),
                          trim(line.substr(eq + 1)));
  }
  return config;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot open config file: " + path);
  return parse_config(in);
}

void apply_config_override(ExperimentConfig& config, const std::string& key,
                           const std::string& value) {
  const auto& table = setters();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigInvalid("unknown config key: " + key);
  it->second(config, value);
}

std::string config_to_text(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "task = " << task_name(c.task) << '\n';
  out << "n = " << c.n << '\n';
  out << "d = " << c.d << '\n';
  out << "classes = " << c.classes << '\n';
  out << "mlp_hidden = " << c.mlp_hidden << '\n';
  out << "cluster_radius = " << format_double(c.cluster_radius) << '\n';
  out << "noise_rate = " << format_double(c.noise_rate) << '\n';
  out << "noise_mode = " << noise_mode_name(c.noise_mode) << '\n';
  out << "sparsity = " << format_double(c.sparsity) << '\n';
  out << "seed = " << c.seed << '\n';
  out << "steps = " << c.steps << '\n';
  out << "batch_size = " << c.batch_size << '\n';
  out << "k_anchors = " << c.k_anchors << '\n';
  out << "rank_r = " << c.rank_r << '\n';
  out << "subspace_period = " << c.subspace_period << '\n';
  out << "anchor_period = " << c.anchor_period << '\n';
  out << "validation_pool = " << c.validation_pool << '\n';
  out << "kappa = " << format_double(c.kappa) << '\n';
  out << "gamma1 = " << format_double(c.gamma1) << '\n';
  out << "gamma2 = " << format_double(c.gamma2) << '\n';
  out << "alpha_damping = " << format_double(c.alpha_damping) << '\n';
  out << "backend = " << backend_name(c.backend) << '\n';
  out << "gate = " << gate_name(c.gate) << '\n';
  out << "precond = " << (c.precond ? "true" : "false") << '\n';
  out << "calibration = " << (c.calibration ? "true" : "false") << '\n';
  out << "trigger = " << (c.trigger ? "true" : "false") << '\n';
  out << "lowrank = " << (c.lowrank ? "true" : "false") << '\n';
  out << "temperature_enabled = " << (c.temperature_enabled ? "true" : "false")
      << '\n';
  out << "temperature = " << format_double(c.temperature) << '\n';
  out << "eval_every = " << c.eval_every << '\n';
  out << "eta0 = " << format_double(c.eta0) << '\n';
  out << "eta_decay_t0 = " << format_double(c.eta_decay_t0) << '\n';
  out << "lambda_w = " << format_double(c.lambda_w) << '\n';
  out << "rho_rule = " << c.rho_rule << '\n';
  out << "rho0 = " << format_double(c.rho0) << '\n';
  out << "rho_t0 = " << format_double(c.rho_t0) << '\n';
  out << "max_neumann_k = " << c.max_neumann_k << '\n';
  out << "cg_max_iters = " << c.cg_max_iters << '\n';
  out << "magnitude_quantile = " << format_double(c.magnitude_quantile) << '\n';
  out << "confidence_floor = " << format_double(c.confidence_floor) << '\n';
  out << "ma_window = " << c.ma_window << '\n';
  out << "bernstein_window = " << c.bernstein_window << '\n';
  out << "bernstein_alpha = " << format_double(c.bernstein_alpha) << '\n';
  out << "delta_threshold = " << format_double(c.delta_threshold) << '\n';
  out << "freeze_anchor_gradients = "
      << (c.freeze_anchor_gradients ? "true" : "false") << '\n';
  out << "signed_score = " << (c.signed_score ? "true" : "false") << '\n';
  out << "measure_overhead = " << (c.measure_overhead ? "true" : "false")
      << '\n';
  out << "threads = " << c.threads << '\n';
  return out.str();
}

}  // namespace sgoif
