#include "sgoif/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "sgoif/hvp_counter.hpp"
#include "sgoif/io_util.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary snapshots assume a little-endian host");

namespace sgoif {
namespace {

// Flat-parameter layout for the one-hidden-layer MLP:
// [W1 (h x p) row-major | b1 (h) | W2 (C x h) row-major | b2 (C)].
struct MlpViews {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>>
      w1, w2;
  Eigen::Map<const Vector> b1, b2;
};

MlpViews mlp_views(const Vector& theta, int p, int h, int c) {
  const double* base = theta.data();
  return MlpViews{
      {base, h, p},
      {base + h * p + h, c, h},
      {base + h * p, h},
      {base + h * p + h + c * h, c},
  };
}

Vector softmax(const Vector& logits) {
  Vector z = (logits.array() - logits.maxCoeff()).exp();
  return z / z.sum();
}

}  // namespace

std::size_t Dataset::noisy_count() const {
  return static_cast<std::size_t>(
      std::count_if(examples.begin(), examples.end(),
                    [](const Example& z) { return z.is_noisy(); }));
}

Model Model::quadratic(Matrix spd) {
  check_finite(spd, "quadratic A");
  check_symmetric(spd);
  Model m;
  m.kind_ = ModelKind::kQuadratic;
  m.dim_ = static_cast<int>(spd.rows());
  m.feature_dim_ = m.dim_;
  m.classes_ = 1;
  m.quad_a_ = std::move(spd);
  return m;
}

Model Model::logistic(int feature_dim, int classes) {
  if (feature_dim < 1 || classes < 2)
    throw Error("logistic: need feature_dim >= 1, classes >= 2");
  Model m;
  m.kind_ = ModelKind::kLogistic;
  m.feature_dim_ = feature_dim;
  m.classes_ = classes;
  m.dim_ = feature_dim * classes;
  return m;
}

Model Model::mlp(int feature_dim, int hidden, int classes) {
  if (feature_dim < 1 || hidden < 1 || classes < 2)
    throw Error("mlp: need feature_dim, hidden >= 1, classes >= 2");
  Model m;
  m.kind_ = ModelKind::kMlp1Hidden;
  m.feature_dim_ = feature_dim;
  m.hidden_ = hidden;
  m.classes_ = classes;
  m.dim_ = hidden * feature_dim + hidden + classes * hidden + classes;
  return m;
}

void Model::check_example(const Example& z) const {
  if (z.features.size() != feature_dim_)
    throw DimensionMismatch("example feature dim does not match model");
  if (kind_ != ModelKind::kQuadratic &&
      (z.observed_label < 0 || z.observed_label >= classes_))
    throw DimensionMismatch("example label out of range");
}

double Model::loss(const Vector& theta, const Example& z) const {
  if (theta.size() != dim_) throw DimensionMismatch("loss: theta dim");
  check_example(z);
  switch (kind_) {
    case ModelKind::kQuadratic:
      return 0.5 * theta.dot(quad_a_ * theta) - z.features.dot(theta);
    case ModelKind::kLogistic: {
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                     Eigen::RowMajor>>
          w(theta.data(), classes_, feature_dim_);
      Vector u = w * z.features;
      const double m = u.maxCoeff();
      const double lse = m + std::log((u.array() - m).exp().sum());
      return lse - u[z.observed_label];
    }
    case ModelKind::kMlp1Hidden: {
      auto v = mlp_views(theta, feature_dim_, hidden_, classes_);
      Vector a1 = (v.w1 * z.features + v.b1).array().tanh();
      Vector u = v.w2 * a1 + v.b2;
      const double m = u.maxCoeff();
      const double lse = m + std::log((u.array() - m).exp().sum());
      return lse - u[z.observed_label];
    }
  }
  return 0.0;
}

double Model::batch_loss(const Vector& theta,
                         std::span<const Example> batch) const {
  if (batch.empty()) throw Error("batch_loss: empty batch");
  double total = 0.0;
  for (const Example& z : batch) total += loss(theta, z);
  return total / static_cast<double>(batch.size());
}

Vector Model::gradient(const Vector& theta, const Example& z) const {
  if (theta.size() != dim_) throw DimensionMismatch("gradient: theta dim");
  check_example(z);
  switch (kind_) {
    case ModelKind::kQuadratic:
      return quad_a_ * theta - z.features;
    case ModelKind::kLogistic: {
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                     Eigen::RowMajor>>
          w(theta.data(), classes_, feature_dim_);
      Vector pi = softmax(w * z.features);
      pi[z.observed_label] -= 1.0;
      Vector g(dim_);
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                               Eigen::RowMajor>>
          gw(g.data(), classes_, feature_dim_);
      gw = pi * z.features.transpose();
      return g;
    }
    case ModelKind::kMlp1Hidden: {
      auto v = mlp_views(theta, feature_dim_, hidden_, classes_);
      Vector a1 = (v.w1 * z.features + v.b1).array().tanh();
      Vector pi = softmax(v.w2 * a1 + v.b2);
      Vector d2 = pi;
      d2[z.observed_label] -= 1.0;
      Vector d1 =
          (v.w2.transpose() * d2).cwiseProduct((1.0 - a1.array().square()).matrix());

      Vector g(dim_);
      const int p = feature_dim_, h = hidden_, c = classes_;
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                               Eigen::RowMajor>>
          gw1(g.data(), h, p);
      Eigen::Map<Vector> gb1(g.data() + h * p, h);
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                               Eigen::RowMajor>>
          gw2(g.data() + h * p + h, c, h);
      Eigen::Map<Vector> gb2(g.data() + h * p + h + c * h, c);
      gw1 = d1 * z.features.transpose();
      gb1 = d1;
      gw2 = d2 * a1.transpose();
      gb2 = d2;
      return g;
    }
  }
  return Vector::Zero(dim_);
}

Vector Model::batch_gradient(const Vector& theta,
                             std::span<const Example> batch) const {
  if (batch.empty()) throw Error("batch_gradient: empty batch");
  Vector g = Vector::Zero(dim_);
  for (const Example& z : batch) g += gradient(theta, z);
  return g / static_cast<double>(batch.size());
}

Vector Model::hvp_one(const Vector& theta, const Example& z,
                      const Vector& vec) const {
  switch (kind_) {
    case ModelKind::kQuadratic:
      return quad_a_ * vec;
    case ModelKind::kLogistic: {
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                     Eigen::RowMajor>>
          w(theta.data(), classes_, feature_dim_);
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                     Eigen::RowMajor>>
          vm(vec.data(), classes_, feature_dim_);
      Vector pi = softmax(w * z.features);
      Vector du = vm * z.features;
      // d(softmax) = (diag(pi) - pi pi^T) du
      Vector q = pi.cwiseProduct(du) - pi * pi.dot(du);
      Vector out(dim_);
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                               Eigen::RowMajor>>
          om(out.data(), classes_, feature_dim_);
      om = q * z.features.transpose();
      return out;
    }
    case ModelKind::kMlp1Hidden: {
      // Forward-over-reverse directional derivative of the backprop
      // gradient (exact full Hessian-vector product).
      auto v = mlp_views(theta, feature_dim_, hidden_, classes_);
      const int p = feature_dim_, h = hidden_, c = classes_;
      auto dv = mlp_views(vec, p, h, c);

      Vector s1 = v.w1 * z.features + v.b1;
      Vector a1 = s1.array().tanh();
      Vector t = (1.0 - a1.array().square()).matrix();  // tanh'
      Vector pi = softmax(v.w2 * a1 + v.b2);
      Vector d2 = pi;
      d2[z.observed_label] -= 1.0;
      Vector w2t_d2 = v.w2.transpose() * d2;

      Vector r_s1 = dv.w1 * z.features + dv.b1;
      Vector r_a1 = t.cwiseProduct(r_s1);
      Vector r_s2 = dv.w2 * a1 + v.w2 * r_a1 + dv.b2;
      Vector r_pi = pi.cwiseProduct(r_s2) - pi * pi.dot(r_s2);
      const Vector& r_d2 = r_pi;

      Vector r_d1 = (dv.w2.transpose() * d2 + v.w2.transpose() * r_d2)
                        .cwiseProduct(t) -
                    2.0 * w2t_d2.cwiseProduct(a1).cwiseProduct(r_a1);

      Vector out(dim_);
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                               Eigen::RowMajor>>
          ow1(out.data(), h, p);
      Eigen::Map<Vector> ob1(out.data() + h * p, h);
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                               Eigen::RowMajor>>
          ow2(out.data() + h * p + h, c, h);
      Eigen::Map<Vector> ob2(out.data() + h * p + h + c * h, c);
      ow1 = r_d1 * z.features.transpose();
      ob1 = r_d1;
      ow2 = r_d2 * a1.transpose() + d2 * r_a1.transpose();
      ob2 = r_d2;
      return out;
    }
  }
  return Vector::Zero(dim_);
}

Vector Model::hvp(const Vector& theta, std::span<const Example> batch,
                  const Vector& vec) const {
  if (theta.size() != dim_ || vec.size() != dim_)
    throw DimensionMismatch("hvp: theta/vec dim");
  HvpCounter::increment();
  if (kind_ == ModelKind::kQuadratic) return quad_a_ * vec;
  if (batch.empty()) throw Error("hvp: empty batch for data-dependent model");
  Vector out = Vector::Zero(dim_);
  for (const Example& z : batch) {
    check_example(z);
    out += hvp_one(theta, z, vec);
  }
  return out / static_cast<double>(batch.size());
}

Matrix Model::explicit_hessian(const Vector& theta,
                               std::span<const Example> batch) const {
  if (dim_ > kExplicitHessianMaxDim)
    throw Error("explicit_hessian: dim exceeds oracle cap");
  Matrix h(dim_, dim_);
  Vector e = Vector::Zero(dim_);
  for (int j = 0; j < dim_; ++j) {
    e[j] = 1.0;
    h.col(j) = hvp(theta, batch, e);
    e[j] = 0.0;
  }
  // Symmetrize away last-bit asymmetry from the column sweep.
  return 0.5 * (h + h.transpose());
}

Vector Model::init_theta(Rng& rng, double scale) const {
  Vector theta(dim_);
  for (int i = 0; i < dim_; ++i) theta[i] = scale * rng.normal();
  return theta;
}

TrainState sgd_step(TrainState state, const Model& model,
                    std::span<const Example> batch) {
  if (batch.empty()) throw Error("sgd_step: empty batch");
  Vector g = model.batch_gradient(state.theta, batch);
  state.grad_norm_ema = 0.9 * state.grad_norm_ema + 0.1 * g.norm();
  const double eta = state.eta();
  state.theta -= eta * (g + state.lambda_w * state.theta);
  state.step += 1;
  return state;
}

Dataset inject_label_noise(const Dataset& clean, double rate, NoiseMode mode,
                           double sparsity, Rng& rng) {
  if (rate < 0.0 || rate > 1.0) throw Error("noise rate outside [0,1]");
  if (sparsity < 0.0 || sparsity > 1.0) throw Error("sparsity outside [0,1]");
  Dataset out = clean;
  const long n = static_cast<long>(out.size());
  const long flips = std::lround(rate * static_cast<double>(n));
  if (rate == 0.0) return out;
  if (flips < 1)
    throw InfeasibleNoise("rate * n < 1: no flip can be realized");
  const int c = out.num_classes;
  if (c < 2) throw InfeasibleNoise("need at least two classes to flip");

  // Exempt round(sparsity * C) classes from receiving noise.
  const int exempt_count = static_cast<int>(std::lround(sparsity * c));
  std::vector<int> class_order(static_cast<std::size_t>(c));
  std::iota(class_order.begin(), class_order.end(), 0);
  for (int i = 0; i < exempt_count; ++i) {
    const std::size_t j =
        static_cast<std::size_t>(i) +
        rng.uniform_index(static_cast<std::size_t>(c - i));
    std::swap(class_order[static_cast<std::size_t>(i)], class_order[j]);
  }
  std::vector<bool> exempt(static_cast<std::size_t>(c), false);
  for (int i = 0; i < exempt_count; ++i)
    exempt[static_cast<std::size_t>(class_order[static_cast<std::size_t>(i)])] =
        true;
  if (exempt_count >= c)
    throw InfeasibleNoise("sparsity exempts every class");

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!exempt[static_cast<std::size_t>(out.examples[i].true_label)])
      eligible.push_back(i);
  if (static_cast<long>(eligible.size()) < flips)
    throw InfeasibleNoise("too few eligible examples for requested flips");

  // Partial Fisher-Yates: pick exactly `flips` distinct victims.
  for (long k = 0; k < flips; ++k) {
    const std::size_t j =
        static_cast<std::size_t>(k) +
        rng.uniform_index(eligible.size() - static_cast<std::size_t>(k));
    std::swap(eligible[static_cast<std::size_t>(k)], eligible[j]);
  }
  for (long k = 0; k < flips; ++k) {
    Example& z = out.examples[eligible[static_cast<std::size_t>(k)]];
    const int old = z.true_label;
    if (mode == NoiseMode::kAsymmetric) {
      z.observed_label = (old + 1) % c;
    } else {
      const int draw =
          static_cast<int>(rng.uniform_index(static_cast<std::size_t>(c - 1)));
      z.observed_label = draw >= old ? draw + 1 : draw;
    }
  }
  return out;
}

Dataset make_gaussian_clusters(int n, int feature_dim, int classes,
                               double radius, Rng& rng) {
  if (n < 1 || feature_dim < 1 || classes < 1)
    throw Error("make_gaussian_clusters: bad shape");
  Dataset data;
  data.feature_dim = feature_dim;
  data.num_classes = classes;
  data.examples.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.uniform_index(
        static_cast<std::size_t>(classes)));
    Vector x(feature_dim);
    for (int j = 0; j < feature_dim; ++j) x[j] = rng.normal();
    const int axis = (label / 2) % feature_dim;
    const double sign = (label % 2 == 0) ? 1.0 : -1.0;
    x[axis] += sign * radius;
    data.examples.push_back({std::move(x), label, label});
  }
  return data;
}

void write_dataset_csv(const Dataset& data, std::ostream& out) {
  for (int j = 0; j < data.feature_dim; ++j) out << "feature_" << j << ',';
  out << "observed_label,true_label\n";
  for (const Example& z : data.examples) {
    for (int j = 0; j < data.feature_dim; ++j)
      out << format_double(z.features[j]) << ',';
    out << z.observed_label << ',' << z.true_label << '\n';
  }
}

Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("dataset csv: missing header");
  auto header = split_csv_line(line);
  if (header.size() < 3 || header[header.size() - 2] != "observed_label" ||
      header.back() != "true_label")
    throw IoError("dataset csv: unexpected header");
  Dataset data;
  data.feature_dim = static_cast<int>(header.size()) - 2;
  int max_label = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw IoError("dataset csv: ragged row");
    Example z;
    z.features.resize(data.feature_dim);
    for (int j = 0; j < data.feature_dim; ++j)
      z.features[j] = parse_double(fields[static_cast<std::size_t>(j)]);
    z.observed_label =
        static_cast<int>(parse_long(fields[fields.size() - 2]));
    z.true_label = static_cast<int>(parse_long(fields.back()));
    max_label = std::max({max_label, z.observed_label, z.true_label});
    data.examples.push_back(std::move(z));
  }
  data.num_classes = max_label + 1;
  return data;
}

namespace {

constexpr char kDatasetMagic[8] = {'S', 'G', 'O', 'I', 'F', 'D', 'S', '1'};

template <typename T>
void write_raw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("snapshot: truncated stream");
  return value;
}

}  // namespace

void save_dataset(const Dataset& data, std::ostream& out) {
  out.write(kDatasetMagic, sizeof(kDatasetMagic));
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(data.size()));
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(data.feature_dim));
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(data.num_classes));
  for (const Example& z : data.examples) {
    out.write(reinterpret_cast<const char*>(z.features.data()),
              static_cast<std::streamsize>(sizeof(double)) * data.feature_dim);
    write_raw<std::int32_t>(out, z.observed_label);
    write_raw<std::int32_t>(out, z.true_label);
  }
  if (!out) throw IoError("save_dataset: write failure");
}

Dataset load_dataset(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kDatasetMagic))
    throw IoError("load_dataset: bad magic");
  Dataset data;
  const auto n = read_raw<std::uint32_t>(in);
  data.feature_dim = static_cast<int>(read_raw<std::uint32_t>(in));
  data.num_classes = static_cast<int>(read_raw<std::uint32_t>(in));
  data.examples.resize(n);
  for (auto& z : data.examples) {
    z.features.resize(data.feature_dim);
    in.read(reinterpret_cast<char*>(z.features.data()),
            static_cast<std::streamsize>(sizeof(double)) * data.feature_dim);
    z.observed_label = read_raw<std::int32_t>(in);
    z.true_label = read_raw<std::int32_t>(in);
  }
  if (!in) throw IoError("load_dataset: truncated stream");
  return data;
}

}  // namespace sgoif
