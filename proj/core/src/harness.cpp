#include "sgoif/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sgoif/hvp_counter.hpp"
#include "sgoif/io_util.hpp"
#include "sgoif/parallel.hpp"
#include "sgoif/stability.hpp"

namespace sgoif {
namespace {

using json = nlohmann::ordered_json;

json opt_to_json(const std::optional<double>& v) {
  if (!v.has_value()) return nullptr;
  return *v;
}

struct TaskSetup {
  Model model;
  Dataset train;
  Dataset pool;  // clean held-out examples: anchors + replacement candidates
};

TaskSetup build_task(const ExperimentConfig& config, Rng& data_rng) {
  const int p = config.feature_dim();
  const int total = config.n + config.validation_pool;
  switch (config.task) {
    case Task::kQuadratic: {
      Matrix a = random_spd(config.d, 10.0, data_rng);
      Dataset all = make_gaussian_clusters(total, p, 1, 0.0, data_rng);
      Dataset train{
          {all.examples.begin(), all.examples.begin() + config.n}, p, 1};
      Dataset pool{{all.examples.begin() + config.n, all.examples.end()}, p, 1};
      return {Model::quadratic(std::move(a)), std::move(train),
              std::move(pool)};
    }
    case Task::kLogisticNoise:
    case Task::kMlpNoise: {
      Dataset all = make_gaussian_clusters(total, p, config.classes,
                                           config.cluster_radius, data_rng);
      Dataset train{
          {all.examples.begin(), all.examples.begin() + config.n},
          p,
          config.classes};
      Dataset pool{{all.examples.begin() + config.n, all.examples.end()},
                   p,
                   config.classes};
      if (config.noise_rate > 0.0)
        train = inject_label_noise(train, config.noise_rate,
                                   config.noise_mode, config.sparsity,
                                   data_rng);
      Model model = config.task == Task::kLogisticNoise
                        ? Model::logistic(p, config.classes)
                        : Model::mlp(p, config.mlp_hidden, config.classes);
      return {std::move(model), std::move(train), std::move(pool)};
    }
  }
  throw ConfigInvalid("unknown task");
}

CurvatureSurrogate build_surrogate(const ExperimentConfig& config,
                                   const Model& model) {
  switch (config.backend) {
    case Backend::kDiagonal:
      return CurvatureSurrogate::diagonal(model.dim(), config.alpha_damping);
    case Backend::kEmpiricalFisher:
      return CurvatureSurrogate::empirical_fisher(model.dim(),
                                                  config.alpha_damping);
    case Backend::kKfacBlocks:
      if (model.kind() != ModelKind::kMlp1Hidden)
        // KFAC needs layer structure; other models take the diagonal path.
        return CurvatureSurrogate::diagonal(model.dim(), config.alpha_damping);
      return CurvatureSurrogate::kfac(
          KfacLayout{model.feature_dim(), model.hidden(), model.classes()},
          config.alpha_damping);
    case Backend::kLowrankPlusDiag:
      return CurvatureSurrogate::lowrank_plus_diag(model.dim(),
                                                   config.alpha_damping);
  }
  throw ConfigInvalid("unknown backend");
}

double median_of(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const auto mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid),
                   values.end());
  return values[mid];
}

/// Sigmoid probability mapping of standardized magnitudes, with the
/// temperature scalar applied when enabled. Rankings are unaffected; the
/// mapping is surfaced in reports so the temperature ablation is
/// observable.
double probability_summary(const std::vector<double>& scores,
                           bool temperature_enabled, double temperature) {
  if (scores.empty()) return 0.0;
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(scores.size());
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  var /= static_cast<double>(scores.size());
  const double sd = std::sqrt(std::max(var, 1e-300));
  const double t = temperature_enabled ? temperature : 1.0;
  double out = 0.0;
  for (double s : scores) {
    const double z = (s - mean) / sd / t;
    out += 1.0 / (1.0 + std::exp(-z));
  }
  return out / static_cast<double>(scores.size());
}

struct TraceWriters {
  std::ofstream controller;
  std::ofstream solver;
  bool open = false;
};

}  // namespace

const std::vector<std::string> kAblationVariants = {
    "full",     "no-gate",  "ma-gate",        "no-precond",
    "no-calib", "no-temperature", "no-lowrank", "no-trigger"};

ExperimentConfig apply_ablation_variant(const ExperimentConfig& base,
                                        const std::string& variant) {
  ExperimentConfig c = base;
  if (variant == "full") return c;
  if (variant == "no-gate") {
    c.gate = GateMode::kNone;
    return c;
  }
  if (variant == "ma-gate") {
    c.gate = GateMode::kMa;
    return c;
  }
  if (variant == "no-precond") {
    c.precond = false;
    return c;
  }
  if (variant == "no-calib") {
    c.calibration = false;
    return c;
  }
  if (variant == "no-temperature") {
    c.temperature_enabled = false;
    return c;
  }
  if (variant == "no-lowrank") {
    c.lowrank = false;
    return c;
  }
  if (variant == "no-trigger") {
    c.trigger = false;
    return c;
  }
  throw ConfigInvalid("unknown ablation variant: " + variant);
}

RunResult run_sgoif(const ExperimentConfig& config,
                    const std::string& out_dir) {
  config.validate();

  Rng root(config.seed);
  Rng data_rng = root.fork(1);
  Rng train_rng = root.fork(2);
  Rng solver_rng = root.fork(3);

  TaskSetup task = build_task(config, data_rng);
  const Model& model = task.model;
  const int dim = model.dim();
  const long n = static_cast<long>(task.train.size());

  TrainState state;
  state.theta = model.init_theta(train_rng);
  state.schedule = EtaSchedule{config.eta0, config.eta_decay_t0};
  state.lambda_w = config.lambda_w;

  CurvatureSurrogate surrogate = build_surrogate(config, model);
  SolverSchedule schedule;
  schedule.rule = config.rho_rule == "constant"
                      ? SolverSchedule::RhoRule::kConstant
                      : SolverSchedule::RhoRule::kRobbinsMonro;
  schedule.rho0 = config.rho0;
  schedule.t0 = config.rho_t0;
  schedule.max_neumann_k = config.max_neumann_k;
  schedule.cg_max_iters = config.cg_max_iters;

  // Anchor bank seeded from the head of the held-out pool; the tail is the
  // replacement candidate pool.
  AnchorBank bank;
  bank.refresh_period = config.anchor_period;
  const int pool_size =
      static_cast<int>(task.pool.size()) - config.k_anchors;
  std::vector<int> anchor_pool_index(static_cast<std::size_t>(config.k_anchors));
  for (int v = 0; v < config.k_anchors; ++v) {
    anchor_pool_index[static_cast<std::size_t>(v)] = v;
    Vector g = model.gradient(state.theta, task.pool.examples[static_cast<std::size_t>(v)]);
    bank.anchors.push_back(AnchorState::make(v, std::move(g)));
  }

  SubspaceState sub;
  sub.r = config.lowrank ? std::min(config.rank_r, dim) : 0;
  sub.refresh_period = config.subspace_period;

  QuantileTracker magnitudes;
  std::vector<BernsteinAccumulator> probes(task.train.size());

  // Per-anchor residual history for the MA gate and truncation trend.
  std::vector<std::vector<double>> residual_history(
      static_cast<std::size_t>(config.k_anchors));

  TraceWriters traces;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    traces.controller.open(out_dir + "/controller_trace.csv",
                           std::ios::binary);
    traces.solver.open(out_dir + "/solver_trace.csv", std::ios::binary);
    if (!traces.controller || !traces.solver)
      throw IoError("cannot open trace files in " + out_dir);
    traces.open = true;
    traces.controller << "t,eta,g_bar,beta_tilde,gamma_t,tau";
    for (int v = 0; v < config.k_anchors; ++v)
      traces.controller << ",c_" << v;
    traces.controller << '\n';
    traces.solver << "t,anchor_id,residual_norm\n";
  }

  MetricsReport report;
  report.temperature_applied =
      config.temperature_enabled ? config.temperature : 1.0;
  RunResult result;
  result.noisy_truth.resize(task.train.size(), 0);
  for (std::size_t i = 0; i < task.train.size(); ++i)
    result.noisy_truth[i] = task.train.examples[i].is_noisy() ? 1 : 0;
  NoisySet noisy_ids;
  for (std::size_t i = 0; i < task.train.size(); ++i)
    if (result.noisy_truth[i]) noisy_ids.insert(static_cast<long>(i));

  std::vector<long> previous_ordering;
  std::vector<double> tau_trace;
  std::vector<double> median_residuals;  // pre-maintenance, for trend sensing
  int neumann_k = 0;
  StabilitySignals last_signals;
  std::set<int> pending_refine;
  constexpr long kCoverageCooldown = 25;
  long last_coverage_replacement = -kCoverageCooldown;
  long hvp_total = 0;
  long hvp_step_max = 0;
  int checkpoint_index = 0;

  HvpCounter::reset();
  const auto wall_start = std::chrono::steady_clock::now();

  auto damped_hvp = [&](std::span<const Example> batch) {
    // H_t = batch Hessian + (lambda_w + alpha) I: weight decay is part of
    // the objective, alpha is the Neumann shift that keeps the operator
    // SPD for the desk-scale models. The explicit return type matters:
    // a deduced Eigen expression would dangle once the hvp temporary
    // dies.
    const double shift = config.lambda_w + config.alpha_damping;
    return [&, batch, shift](const Vector& v) -> Vector {
      return model.hvp(state.theta, batch, v) + shift * v;
    };
  };

  auto score_pass = [&](std::vector<InfluenceRecord>& out,
                        std::vector<Vector>* gradients) {
    AnchorBank scoring_bank = bank;
    if (!config.calibration)
      for (AnchorState& a : scoring_bank.anchors) a.c_v = 1.0;
    AggregationWeights weights = aggregation_weights(scoring_bank);
    out.resize(task.train.size());
    if (gradients) gradients->resize(task.train.size());
    parallel_for(task.train.size(), config.threads, [&](std::size_t i) {
      Vector g = model.gradient(state.theta, task.train.examples[i]);
      out[i] = score_example(static_cast<long>(i), g, scoring_bank, weights);
      if (gradients) (*gradients)[i] = std::move(g);
    });
    if (weights.no_confidence) report.no_confidence_epochs = true;
  };

  for (long t = 0; t < config.steps; ++t) {
    const long hvp_before = HvpCounter::value();

    // Minibatch sample and model update.
    std::vector<Example> batch(static_cast<std::size_t>(config.batch_size));
    for (int b = 0; b < config.batch_size; ++b)
      batch[static_cast<std::size_t>(b)] =
          task.train.examples[train_rng.uniform_index(task.train.size())];
    state = sgd_step(state, model, batch);

    // Per-example gradients at the fresh parameters feed the surrogate.
    std::vector<Vector> batch_grads(batch.size());
    parallel_for(batch.size(), config.threads, [&](std::size_t b) {
      batch_grads[b] = model.gradient(state.theta, batch[b]);
    });
    surrogate.update(batch_grads, t);

    auto apply_h = damped_hvp(batch);

    // Low-rank subspace refresh.
    if (sub.r > 0 && t % sub.refresh_period == 0) {
      std::vector<Vector> probes_g;
      for (const AnchorState& a : bank.anchors) probes_g.push_back(a.g_v);
      sub = update_subspace(std::move(sub), probes_g, apply_h, dim,
                            solver_rng);
      sub.last_refresh_step = t;
      surrogate.set_subspace(sub.q, sub.lambda);
    }

    // Controller signals for this step.
    const double gamma_t =
        surrogate.updated() ? surrogate.condition_proxy() : 1.0;
    StabilitySignals signals =
        make_signals(state.schedule.at(t), state.grad_norm_ema,
                     config.lambda_w, n, config.gamma1, config.gamma2,
                     gamma_t, config.kappa);
    // Per-anchor target refresh + Richardson + residual + gate.
    const double rho_t = schedule.rho(t);
    parallel_for(bank.anchors.size(), config.threads, [&](std::size_t v) {
      AnchorState& anchor = bank.anchors[v];
      if (!config.freeze_anchor_gradients) {
        anchor.set_target(model.gradient(
            state.theta,
            task.pool.examples[static_cast<std::size_t>(
                anchor_pool_index[v])]));
      }
      LinearOp precond;
      if (config.precond)
        precond = [&](const Vector& x) { return surrogate.precond_apply(x); };
      anchor = richardson_step(std::move(anchor), apply_h, precond, rho_t);
      // Finite but runaway iterates (indefinite curvature under too little
      // damping) get the same reset treatment as non-finite ones.
      if (anchor.residual_norm >
          1e8 * std::max(1.0, anchor.g_v.norm())) {
        anchor.phi_v.setZero();
        anchor.c_v = 0.0;
        anchor.reset_flagged = true;
        anchor.recompute_residual(apply_h);
      }
      switch (config.gate) {
        case GateMode::kStability:
          anchor.c_v = confidence_gate(anchor.residual_norm, signals.tau_t);
          break;
        case GateMode::kMa:
          anchor.c_v = ma_gate(anchor.residual_norm, residual_history[v],
                               config.ma_window);
          break;
        case GateMode::kNone:
          anchor.c_v = 1.0;
          break;
      }
    });
    for (std::size_t v = 0; v < bank.anchors.size(); ++v)
      residual_history[v].push_back(bank.anchors[v].residual_norm);
    last_signals = signals;

    // Trend-adapted Neumann truncation order (window of 5 medians) for
    // the warm-start path below.
    {
      std::vector<double> rs;
      for (const AnchorState& a : bank.anchors) rs.push_back(a.residual_norm);
      median_residuals.push_back(median_of(rs));
      if (median_residuals.size() >= 6) {
        const double now = median_residuals.back();
        const double then =
            median_residuals[median_residuals.size() - 6];
        neumann_k = adapt_truncation(neumann_k, now, now - then,
                                     schedule.max_neumann_k);
      }
    }

    // Minibatch scoring (Alg. 1 line 5) drives the refinement trigger.
    {
      AnchorBank& scoring_bank = bank;
      AggregationWeights weights = aggregation_weights(scoring_bank);
      std::vector<InfluenceRecord> records(batch.size());
      parallel_for(batch.size(), config.threads, [&](std::size_t b) {
        records[b] = score_example(-1, batch_grads[b], scoring_bank, weights);
      });
      for (const InfluenceRecord& rec : records)
        for (double raw : rec.raw_inner) magnitudes.add(std::abs(raw));
      if (config.trigger) {
        for (const InfluenceRecord& rec : records)
          for (int id : refinement_trigger(rec, bank, magnitudes,
                                           config.magnitude_quantile,
                                           config.confidence_floor))
            pending_refine.insert(id);
      }
    }

    // Bernstein probe window: full-dataset passes feed the accumulators
    // during the `bernstein_window` steps before each checkpoint.
    const long next_checkpoint = std::min(
        ((t / config.eval_every) + 1) * config.eval_every, config.steps);
    const long prev_checkpoint = (t / config.eval_every) * config.eval_every;
    const long window_start =
        std::max(next_checkpoint - config.bernstein_window, prev_checkpoint);
    if (t >= window_start) {
      if (t == window_start)
        for (auto& acc : probes) acc.reset();
      AnchorBank scoring_bank = bank;
      if (!config.calibration)
        for (AnchorState& a : scoring_bank.anchors) a.c_v = 1.0;
      AggregationWeights weights = aggregation_weights(scoring_bank);
      if (!weights.no_confidence) {
        std::vector<InfluenceRecord> records(task.train.size());
        parallel_for(task.train.size(), config.threads, [&](std::size_t i) {
          Vector g = model.gradient(state.theta, task.train.examples[i]);
          records[i] =
              score_example(static_cast<long>(i), g, scoring_bank, weights);
        });
        for (std::size_t i = 0; i < records.size(); ++i)
          for (std::size_t v = 0; v < records[i].per_anchor.size(); ++v)
            probes[i].add(weights.w[v] * records[i].per_anchor[v]);
      }
    }

    // Anchor maintenance at period boundaries or on coverage loss. The
    // coverage path is rate limited: at desk scale a small bank of
    // correlated IHVPs can sit below the threshold for long stretches,
    // and churning an anchor every step would keep the bank from ever
    // converging.
    bool coverage_triggered = false;
    bool maintain = (t > 0 && t % bank.refresh_period == 0);
    GramReport gram;
    bool gram_ok = false;
    try {
      gram = build_gram(bank);
      gram_ok = true;
      if (coverage_check(gram, bank.coverage_threshold) ==
              Coverage::kRefreshNeeded &&
          t - last_coverage_replacement >= kCoverageCooldown) {
        coverage_triggered = true;
        maintain = true;
      }
    } catch (const AllAnchorsZero&) {
      // Warm-up: no usable phi columns yet.
    }
    if (maintain && pool_size > 0) {
      WarmStartFn warm;
      if (sub.r > 0 && sub.q.cols() > 0) {
        // Warm start against the surrogate's own operator: equal to the
        // hybrid-model inverse and free of model HVPs, so candidate
        // evaluation in the coverage path stays cheap.
        warm = [&](const Vector& g) {
          return subspace_solve(
              sub, g, [&](const Vector& v) { return surrogate.apply(v); },
              surrogate.effective_diagonal());
        };
      } else if (surrogate.updated()) {
        // Subspace disabled: truncated Neumann expansion on the surrogate
        // at the trend-adapted order.
        warm = [&](const Vector& g) -> Vector {
          try {
            return neumann_ihvp(g, surrogate, neumann_k).first;
          } catch (const DivergentSeries&) {
            return Vector::Zero(g.size());
          }
        };
      }
      CandidateGradientFn pool_grad = [&](int idx) {
        return model.gradient(
            state.theta,
            task.pool.examples[static_cast<std::size_t>(config.k_anchors + idx)]);
      };
      const ReplacementResult replaced =
          replace_anchors(bank, gram_ok ? gram : GramReport{}, pool_grad,
                          pool_size, warm, coverage_triggered, solver_rng);
      if (replaced.slot >= 0) {
        report.replacement_count += 1;
        if (coverage_triggered) {
          report.coverage_trigger_count += 1;
          last_coverage_replacement = t;
        }
        // The slot now tracks the installed pool example on every
        // subsequent per-step target refresh.
        anchor_pool_index[static_cast<std::size_t>(replaced.slot)] =
            config.k_anchors + replaced.pool_index;
      }
    }

    // Targeted CG refinement of trigger-flagged anchors at maintenance
    // boundaries (Alg. 1 line 6).
    if (config.trigger && t > 0 && t % bank.refresh_period == 0 &&
        !pending_refine.empty()) {
      for (std::size_t v = 0; v < bank.anchors.size(); ++v) {
        AnchorState& anchor = bank.anchors[v];
        if (pending_refine.count(anchor.anchor_id) == 0) continue;
        anchor = cg_refine(std::move(anchor), apply_h, signals.tau_t / 2.0,
                           schedule.cg_max_iters);
        anchor.last_refined_step = t;
        if (config.gate == GateMode::kStability)
          anchor.c_v = confidence_gate(anchor.residual_norm, signals.tau_t);
      }
      pending_refine.clear();
    }

    // Traces.
    std::vector<double> residuals;
    double c_mean = 0.0;
    for (const AnchorState& a : bank.anchors) {
      residuals.push_back(a.residual_norm);
      c_mean += a.c_v;
    }
    c_mean /= static_cast<double>(bank.anchors.size());
    report.residual_trace.push_back(median_of(residuals));
    report.confidence_trace.push_back(c_mean);
    tau_trace.push_back(signals.tau_t);
    if (traces.open) {
      traces.controller << t << ',' << format_double(signals.eta_t) << ','
                        << format_double(signals.g_bar_t) << ','
                        << format_double(signals.beta_tilde_t) << ','
                        << format_double(signals.gamma_t) << ','
                        << format_double(signals.tau_t);
      for (const AnchorState& a : bank.anchors)
        traces.controller << ',' << format_double(a.c_v);
      traces.controller << '\n';
      for (const AnchorState& a : bank.anchors)
        traces.solver << t << ',' << a.anchor_id << ','
                      << format_double(a.residual_norm) << '\n';
    }

    const long hvp_step = HvpCounter::value() - hvp_before;
    hvp_total += hvp_step;
    hvp_step_max = std::max(hvp_step_max, hvp_step);

    // Checkpoint evaluation.
    if ((t + 1) % config.eval_every == 0 || t + 1 == config.steps) {
      const bool final_checkpoint = t + 1 == config.steps;
      std::vector<InfluenceRecord> records;
      std::vector<Vector> eval_grads;
      score_pass(records, final_checkpoint ? &eval_grads : nullptr);
      for (std::size_t i = 0; i < records.size(); ++i) {
        records[i].probe_count = probes[i].count();
        if (probes[i].count() >= 2)
          records[i].ci_half_width =
              static_cast<double>(bank.anchors.size()) *
              bernstein_interval(probes[i], config.bernstein_alpha);
      }

      std::vector<ScoredExample> scored(records.size());
      std::vector<double> magnitudes_only(records.size());
      for (std::size_t i = 0; i < records.size(); ++i) {
        const double s = config.signed_score
                             ? records[i].aggregated
                             : std::abs(records[i].aggregated);
        scored[i] = {records[i].example_id, s};
        magnitudes_only[i] = s;
      }

      CheckpointMetrics cp;
      cp.step = t + 1;
      cp.p_at_1 = precision_at_k(scored, noisy_ids, 1.0);
      cp.p_at_5 = precision_at_k(scored, noisy_ids, 5.0);
      cp.aupr = average_precision(scored, noisy_ids);
      cp.auroc = auroc(scored, noisy_ids);

      std::vector<long> ordering;
      {
        std::vector<ScoredExample> sorted = scored;
        std::sort(sorted.begin(), sorted.end(),
                  [](const ScoredExample& a, const ScoredExample& b) {
                    if (a.score != b.score) return a.score > b.score;
                    return a.id < b.id;
                  });
        for (const auto& e : sorted) ordering.push_back(e.id);
      }
      if (!previous_ordering.empty())
        cp.kendall_tau_adjacent =
            kendall_tau_top(previous_ordering, ordering, 1.0);
      previous_ordering = ordering;

      report.checkpoints.push_back(cp);
      report.score_probability_mean = probability_summary(
          magnitudes_only, config.temperature_enabled, config.temperature);

      // Final-checkpoint top-1% certification from the online error
      // budgets (solver + confidence terms per anchor, plus the Gram
      // projection bound).
      if (final_checkpoint && !records.empty() &&
          records.size() >= 2) {
        try {
          GramReport cert_gram = build_gram(bank);
          std::vector<Vector> phis;
          for (int id : cert_gram.used_anchor_ids)
            for (const AnchorState& a : bank.anchors)
              if (a.anchor_id == id) phis.push_back(a.phi_v / a.phi_v.norm());
          const double m_bound = config.lambda_w + config.alpha_damping;
          std::vector<double> per_example_bound(records.size(), 0.0);
          parallel_for(records.size(), config.threads, [&](std::size_t i) {
            const double e_proj =
                projection_error_bound(cert_gram, eval_grads[i], phis);
            double worst = 0.0;
            for (std::size_t v = 0; v < bank.anchors.size(); ++v) {
              ErrorBudget budget = error_budget(
                  records[i], static_cast<int>(v), bank.anchors[v], m_bound,
                  eval_grads[i].norm(), e_proj, last_signals.tau_t,
                  config.delta_threshold);
              worst = std::max(worst,
                               budget.e_solver + budget.e_conf + e_proj);
            }
            per_example_bound[i] = worst;
          });
          double sup_bound = 0.0;
          for (double b : per_example_bound) sup_bound = std::max(sup_bound, b);
          const int top_k = static_cast<int>(std::ceil(
              0.01 * static_cast<double>(records.size())));
          RankingReport ranking = topk_report(records, top_k, sup_bound);
          report.top1pct_gamma = ranking.gamma_k;
          report.top1pct_certified = ranking.order_certified;
          report.sup_error_bound = sup_bound;
        } catch (const SingularGram&) {
          // Coverage too degenerate to certify; fields stay null.
        } catch (const AllAnchorsZero&) {
        }
      }

      if (!out_dir.empty()) {
        std::ofstream csv(out_dir + "/scores_epoch_" +
                              std::to_string(checkpoint_index) + ".csv",
                          std::ios::binary);
        if (!csv) throw IoError("cannot write score dump");
        csv << "example_id,aggregated,ci_half_width,flagged,is_noisy_truth\n";
        for (const InfluenceRecord& r : records) {
          csv << r.example_id << ',' << format_double(r.aggregated) << ','
              << format_double(r.ci_half_width) << ',' << (r.flagged ? 1 : 0)
              << ','
              << (noisy_ids.count(r.example_id) > 0 ? 1 : 0) << '\n';
        }
      }
      ++checkpoint_index;

      if (t + 1 == config.steps) result.final_records = std::move(records);
    }
  }

  const auto wall_end = std::chrono::steady_clock::now();

  // Headline metrics: final checkpoint.
  if (!report.checkpoints.empty()) {
    const CheckpointMetrics& last = report.checkpoints.back();
    report.p_at_k["1"] = last.p_at_1;
    report.p_at_k["5"] = last.p_at_5;
    report.aupr = last.aupr;
    report.auroc = last.auroc;
  }
  {
    double tau_sum = 0.0;
    int tau_count = 0;
    for (const CheckpointMetrics& cp : report.checkpoints) {
      if (cp.kendall_tau_adjacent.has_value()) {
        tau_sum += *cp.kendall_tau_adjacent;
        ++tau_count;
      }
    }
    if (tau_count > 0) report.kendall_tau_adjacent = tau_sum / tau_count;
  }
  report.hvp_count_per_step =
      static_cast<double>(hvp_total) / static_cast<double>(config.steps);
  report.hvp_count_per_step_max = hvp_step_max;
  report.final_train_loss = model.batch_loss(state.theta, task.train.examples);

  if (config.measure_overhead) {
    // Gate-free, scorer-free training wall time on the same draws.
    const double method_seconds =
        std::chrono::duration<double>(wall_end - wall_start).count();
    Rng baseline_data = root.fork(1);
    Rng baseline_train = root.fork(2);
    TaskSetup base_task = build_task(config, baseline_data);
    TrainState base_state;
    base_state.theta = base_task.model.init_theta(baseline_train);
    base_state.schedule = state.schedule;
    base_state.lambda_w = config.lambda_w;
    const auto base_start = std::chrono::steady_clock::now();
    for (long t = 0; t < config.steps; ++t) {
      std::vector<Example> batch(static_cast<std::size_t>(config.batch_size));
      for (int b = 0; b < config.batch_size; ++b)
        batch[static_cast<std::size_t>(b)] =
            base_task.train.examples[baseline_train.uniform_index(
                base_task.train.size())];
      base_state = sgd_step(base_state, base_task.model, batch);
    }
    const double base_seconds = std::chrono::duration<double>(
                                    std::chrono::steady_clock::now() -
                                    base_start)
                                    .count();
    if (base_seconds > 0.0)
      report.wall_overhead_ratio = method_seconds / base_seconds;
  }

  if (!out_dir.empty()) {
    std::ofstream json_out(out_dir + "/metrics.json", std::ios::binary);
    if (!json_out) throw IoError("cannot write metrics.json");
    json_out << metrics_report_to_json(report, config);
  }

  result.report = std::move(report);
  result.train_data = std::move(task.train);
  return result;
}

std::vector<AblationRow> run_ablation_suite(const ExperimentConfig& base,
                                            const std::string& out_dir) {
  std::vector<AblationRow> rows;
  for (const std::string& variant : kAblationVariants) {
    ExperimentConfig config = apply_ablation_variant(base, variant);
    std::string variant_dir;
    if (!out_dir.empty()) variant_dir = out_dir + "/" + variant;
    RunResult run = run_sgoif(config, variant_dir);
    rows.push_back({variant, std::move(run.report)});
  }
  return rows;
}

std::string metrics_report_to_json(const MetricsReport& report,
                                   const ExperimentConfig& config) {
  json j;
  j["task"] = task_name(config.task);
  j["seed"] = config.seed;
  json pk;
  for (const auto& [key, value] : report.p_at_k)
    pk[key] = opt_to_json(value);
  j["p_at_k"] = pk;
  j["aupr"] = opt_to_json(report.aupr);
  j["auroc"] = opt_to_json(report.auroc);
  j["kendall_tau_adjacent"] = opt_to_json(report.kendall_tau_adjacent);
  j["hvp_count_per_step"] = report.hvp_count_per_step;
  j["hvp_count_per_step_max"] = report.hvp_count_per_step_max;
  j["wall_overhead_ratio"] = opt_to_json(report.wall_overhead_ratio);
  j["final_train_loss"] = report.final_train_loss;
  j["replacement_count"] = report.replacement_count;
  j["coverage_trigger_count"] = report.coverage_trigger_count;
  j["top1pct_gamma"] = opt_to_json(report.top1pct_gamma);
  j["top1pct_certified"] = report.top1pct_certified.has_value()
                               ? json(*report.top1pct_certified)
                               : json(nullptr);
  j["sup_error_bound"] = opt_to_json(report.sup_error_bound);
  j["score_probability_mean"] = report.score_probability_mean;
  j["temperature_applied"] = report.temperature_applied;
  j["no_confidence_epochs"] = report.no_confidence_epochs;
  json cps = json::array();
  for (const CheckpointMetrics& cp : report.checkpoints) {
    json c;
    c["step"] = cp.step;
    c["p_at_1"] = opt_to_json(cp.p_at_1);
    c["p_at_5"] = opt_to_json(cp.p_at_5);
    c["aupr"] = opt_to_json(cp.aupr);
    c["auroc"] = opt_to_json(cp.auroc);
    c["kendall_tau_adjacent"] = opt_to_json(cp.kendall_tau_adjacent);
    cps.push_back(c);
  }
  j["checkpoints"] = cps;
  j["residual_trace"] = report.residual_trace;
  j["confidence_trace"] = report.confidence_trace;

  // Full resolved config for provenance.
  json cfg;
  std::istringstream cfg_text(config_to_text(config));
  std::string line;
  while (std::getline(cfg_text, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    cfg[line.substr(0, eq)] = line.substr(eq + 3);
  }
  j["config"] = cfg;
  return j.dump(2) + "\n";
}

MetricsReport metrics_from_scores_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("scores csv: missing header");
  if (line != "example_id,aggregated,ci_half_width,flagged,is_noisy_truth")
    throw IoError("scores csv: unexpected header");
  std::vector<ScoredExample> scored;
  NoisySet noisy;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 5) throw IoError("scores csv: ragged row");
    const long id = parse_long(fields[0]);
    const double aggregated = parse_double(fields[1]);
    scored.push_back({id, std::abs(aggregated)});
    if (parse_long(fields[4]) != 0) noisy.insert(id);
  }
  MetricsReport report;
  report.p_at_k["1"] = precision_at_k(scored, noisy, 1.0);
  report.p_at_k["5"] = precision_at_k(scored, noisy, 5.0);
  report.aupr = average_precision(scored, noisy);
  report.auroc = auroc(scored, noisy);
  return report;
}

bool OracleCheckReport::all_passed() const {
  for (const OracleCheckEntry& e : entries)
    if (e.failures > 0) return false;
  return true;
}

std::string oracle_report_to_json(const OracleCheckReport& report) {
  json j;
  json entries = json::array();
  for (const OracleCheckEntry& e : report.entries) {
    json entry;
    entry["suite"] = e.suite;
    entry["total"] = e.total;
    entry["failures"] = e.failures;
    entry["worst_slack"] = e.worst_slack;
    entries.push_back(entry);
  }
  j["entries"] = entries;
  j["all_passed"] = report.all_passed();
  return j.dump(2) + "\n";
}

}  // namespace sgoif
