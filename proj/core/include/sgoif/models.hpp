#ifndef SGOIF_MODELS_HPP
#define SGOIF_MODELS_HPP

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sgoif/numerics.hpp"
#include "sgoif/rng.hpp"

namespace sgoif {

struct Example {
  Vector features;
  int observed_label = 0;
  int true_label = 0;

  bool is_noisy() const { return observed_label != true_label; }
};

struct Dataset {
  std::vector<Example> examples;
  int feature_dim = 0;
  int num_classes = 1;

  std::size_t size() const { return examples.size(); }
  std::size_t noisy_count() const;
};

enum class ModelKind { kQuadratic, kLogistic, kMlp1Hidden };

/// Desk-scale differentiable model. Quadratic and logistic gradients and
/// HVPs are closed form; the one-hidden-layer tanh MLP uses exact
/// forward-over-reverse differentiation of the analytic gradient.
/// Batch gradient/HVP semantics: mean over the batch.
class Model {
 public:
  static Model quadratic(Matrix spd);
  static Model logistic(int feature_dim, int classes);
  static Model mlp(int feature_dim, int hidden, int classes);

  ModelKind kind() const { return kind_; }
  int dim() const { return dim_; }
  int feature_dim() const { return feature_dim_; }
  int classes() const { return classes_; }
  int hidden() const { return hidden_; }
  const Matrix& quadratic_matrix() const { return quad_a_; }

  double loss(const Vector& theta, const Example& z) const;
  double batch_loss(const Vector& theta, std::span<const Example> batch) const;

  /// grad_theta loss(theta; z).
  Vector gradient(const Vector& theta, const Example& z) const;
  Vector batch_gradient(const Vector& theta,
                        std::span<const Example> batch) const;

  /// Exact Hessian-vector product of the mean batch loss. Increments the
  /// global HVP counter.
  Vector hvp(const Vector& theta, std::span<const Example> batch,
             const Vector& vec) const;

  /// Column-by-column explicit Hessian (oracle path, dim <= 200).
  Matrix explicit_hessian(const Vector& theta,
                          std::span<const Example> batch) const;

  Vector init_theta(Rng& rng, double scale = 0.1) const;

 private:
  Model() = default;
  void check_example(const Example& z) const;
  Vector hvp_one(const Vector& theta, const Example& z,
                 const Vector& vec) const;

  ModelKind kind_ = ModelKind::kQuadratic;
  int dim_ = 0;
  int feature_dim_ = 0;
  int classes_ = 1;
  int hidden_ = 0;
  Matrix quad_a_;
};

/// Learning-rate schedule: constant eta0, or eta0 / (1 + t / t0).
struct EtaSchedule {
  double eta0 = 0.1;
  double decay_t0 = 0.0;  // 0 disables decay

  double at(long t) const {
    if (decay_t0 <= 0.0) return eta0;
    return eta0 / (1.0 + static_cast<double>(t) / decay_t0);
  }
};

struct TrainState {
  Vector theta;
  long step = 0;
  EtaSchedule schedule;
  double lambda_w = 0.0;
  double grad_norm_ema = 0.0;

  double eta() const { return schedule.at(step); }
};

/// One SGD step with weight decay:
///   theta <- theta - eta_t (grad L_batch + lambda_w theta).
/// grad_norm_ema tracks the minibatch loss-gradient norm with decay 0.9.
TrainState sgd_step(TrainState state, const Model& model,
                    std::span<const Example> batch);

enum class NoiseMode { kSymmetric, kAsymmetric };

/// Flip exactly round(rate * n) observed labels. Symmetric: uniform among
/// the other classes; asymmetric: c -> (c + 1) mod C. Sparsity s exempts
/// round(s * C) classes from receiving noise, concentrating the same flip
/// count in the remaining classes. Throws InfeasibleNoise when the exempt
/// set leaves too few eligible examples.
Dataset inject_label_noise(const Dataset& clean, double rate, NoiseMode mode,
                           double sparsity, Rng& rng);

/// Gaussian class-cluster synthetic data: class c has mean
/// radius * u_c for unit directions u_c, identity covariance.
Dataset make_gaussian_clusters(int n, int feature_dim, int classes,
                               double radius, Rng& rng);

// Dataset CSV exchange: header feature_0..feature_{p-1},observed_label,true_label.
void write_dataset_csv(const Dataset& data, std::ostream& out);
Dataset read_dataset_csv(std::istream& in);

// Binary snapshot, 8-byte magic "SGOIFDS1", little-endian payload.
void save_dataset(const Dataset& data, std::ostream& out);
Dataset load_dataset(std::istream& in);

}  // namespace sgoif

#endif
