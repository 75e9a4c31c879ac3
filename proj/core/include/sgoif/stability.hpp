#ifndef SGOIF_STABILITY_HPP
#define SGOIF_STABILITY_HPP

#include <algorithm>
#include <span>

namespace sgoif {

/// Per-step controller signals: inputs (eta_t, G_bar_t, lambda_w, n,
/// gamma1, gamma2, kappa, Gamma_t) and outputs (beta_tilde_t, tau_t).
struct StabilitySignals {
  double eta_t = 0.0;
  double g_bar_t = 0.0;
  double lambda_w = 0.0;
  long n = 1;
  double gamma1 = 1.0;
  double gamma2 = 1.0;
  double beta_tilde_t = 0.0;
  double gamma_t = 1.0;  // curvature condition proxy
  double kappa = 50.0;
  double tau_t = 0.0;
};

/// beta_tilde = gamma1 * eta * G_bar / n + gamma2 * lambda_w / n.
inline double stability_proxy(double eta_t, double g_bar_t, double lambda_w,
                              long n, double gamma1, double gamma2) {
  const double dn = static_cast<double>(n);
  return gamma1 * eta_t * g_bar_t / dn + gamma2 * lambda_w / dn;
}

/// tau = kappa * beta_tilde * Gamma.
inline double tolerance(double beta_tilde, double gamma_t, double kappa) {
  return kappa * beta_tilde * gamma_t;
}

/// c = clip(1 - ||r|| / tau, 0, 1). The tau = 0 limit is the indicator of
/// an exact solve.
inline double confidence_gate(double residual_norm, double tau_t) {
  if (tau_t == 0.0) return residual_norm == 0.0 ? 1.0 : 0.0;
  return std::clamp(1.0 - residual_norm / tau_t, 0.0, 1.0);
}

/// Moving-average baseline gate used by the ablation runner:
/// clip(1 - ||r|| / (2 * mean of the last `window` residuals), 0, 1).
inline double ma_gate(double residual_norm, std::span<const double> history,
                      int window) {
  if (window < 1) window = 1;
  const std::size_t take =
      std::min<std::size_t>(history.size(), static_cast<std::size_t>(window));
  if (take == 0) return residual_norm == 0.0 ? 1.0 : 0.0;
  double mean = 0.0;
  for (std::size_t i = history.size() - take; i < history.size(); ++i)
    mean += history[i];
  mean /= static_cast<double>(take);
  return confidence_gate(residual_norm, 2.0 * mean);
}

inline StabilitySignals make_signals(double eta_t, double g_bar_t,
                                     double lambda_w, long n, double gamma1,
                                     double gamma2, double gamma_t,
                                     double kappa) {
  StabilitySignals s;
  s.eta_t = eta_t;
  s.g_bar_t = g_bar_t;
  s.lambda_w = lambda_w;
  s.n = n;
  s.gamma1 = gamma1;
  s.gamma2 = gamma2;
  s.gamma_t = gamma_t;
  s.kappa = kappa;
  s.beta_tilde_t = stability_proxy(eta_t, g_bar_t, lambda_w, n, gamma1, gamma2);
  s.tau_t = tolerance(s.beta_tilde_t, gamma_t, kappa);
  return s;
}

}  // namespace sgoif

#endif
