#pragma once

// Evaluation: Gaussian fits of expert features, Frechet distance, the
// multi-expert protocol and mode coverage on the 2-D ring.

#include "idvae/data.hpp"
#include "idvae/nets.hpp"
#include "idvae/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace idvae {

template <typename Scalar>
struct GaussianStats {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Vector mean;
  Matrix cov;
  std::size_t n = 0;

  Eigen::Index dim() const { return mean.size(); }
};

/// Sample mean and unbiased (n-1) covariance of the rows of `features`.
template <typename Derived>
GaussianStats<typename Derived::Scalar> fit_gaussian(const Eigen::MatrixBase<Derived>& features) {
  using Scalar = typename Derived::Scalar;
  const auto n = features.rows();
  if (n < 2) throw std::invalid_argument("fit_gaussian: need at least 2 samples, got " + std::to_string(n));
  GaussianStats<Scalar> stats;
  stats.n = static_cast<std::size_t>(n);
  stats.mean = features.colwise().mean().transpose();
  const auto centered = (features.rowwise() - stats.mean.transpose()).eval();
  stats.cov = (centered.transpose() * centered) / static_cast<Scalar>(n - 1);
  stats.cov = (0.5 * (stats.cov + stats.cov.transpose())).eval();
  return stats;
}

inline constexpr double kCovRegularization = 1e-6;

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
///
/// The trace of the square root is taken from the eigenvalues of
/// S_a^{1/2} S_b S_a^{1/2} (both covariances regularized by 1e-6 I, negative
/// eigenvalues clamped to zero). Identical statistics give exactly 0 and
/// small negative round-off is clamped to 0.
template <typename Scalar>
Scalar frechet_distance(const GaussianStats<Scalar>& a, const GaussianStats<Scalar>& b) {
  using Matrix = typename GaussianStats<Scalar>::Matrix;
  if (a.dim() != b.dim() || a.cov.rows() != a.dim() || b.cov.rows() != b.dim()) {
    throw std::invalid_argument("frechet_distance: dimension mismatch " + std::to_string(a.dim()) + " vs " +
                                std::to_string(b.dim()));
  }
  if (!a.mean.allFinite() || !b.mean.allFinite() || !a.cov.allFinite() || !b.cov.allFinite()) {
    throw std::domain_error("frechet_distance: non-finite statistics");
  }
  if (a.mean == b.mean && a.cov == b.cov) return Scalar(0);

  const auto d = a.dim();
  const Matrix reg = Matrix::Identity(d, d) * static_cast<Scalar>(kCovRegularization);
  Eigen::SelfAdjointEigenSolver<Matrix> eig_a(a.cov + reg);
  const auto root_vals = eig_a.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt();
  const Matrix sqrt_a = eig_a.eigenvectors() * root_vals.asDiagonal() * eig_a.eigenvectors().transpose();
  Matrix inner = sqrt_a * (b.cov + reg) * sqrt_a;
  inner = (Scalar(0.5) * (inner + inner.transpose())).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> eig_inner(inner, Eigen::EigenvaluesOnly);
  const Scalar trace_sqrt = eig_inner.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt().sum();

  const Scalar dist = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - Scalar(2) * trace_sqrt;
  return dist < Scalar(0) ? Scalar(0) : dist;
}

/// Row-major real tensor [n, ...] flattened to an n x d double matrix.
Eigen::MatrixXd to_matrix(const Tensor& t);

class Expert {
 public:
  virtual ~Expert() = default;
  virtual const std::string& id() const = 0;
  virtual int dim() const = 0;
  /// One feature row per sample.
  virtual Eigen::MatrixXd features(const Tensor& x) const = 0;
};

struct ExpertBudget {
  int epochs = 3;
  int batch_size = 64;
  real lr = 1e-3f;
};

/// Small classifier whose penultimate activations are the feature space.
/// Arch ids: "cnn_a", "cnn_b" (trained convolutional), "mlp" (trained dense,
/// for 2-D data), "random_projection" (untrained, fixed random weights).
class NetworkExpert : public Expert {
 public:
  NetworkExpert(std::string id, std::string arch, Shape input_shape, int classes, std::uint64_t seed);

  const std::string& id() const override { return id_; }
  int dim() const override { return feature_dim_; }
  Eigen::MatrixXd features(const Tensor& x) const override;

  Tensor logits(const Tensor& x, bool track = false) const;
  std::vector<int> classify(const Tensor& x) const;
  double accuracy(const Dataset& data) const;

  const std::string& arch() const { return arch_; }
  double heldout_accuracy = 0.0;
  std::vector<NamedTensor>& params() { return params_; }
  const std::vector<NamedTensor>& params() const { return params_; }

 private:
  struct Stage {
    bool conv = false;
    int stride = 1;
    int padding = 0;
  };

  Tensor body(const Tensor& x, bool track) const;
  Tensor stage(std::size_t i, const Tensor& h, bool track) const;
  void add_stage(const std::string& name, Stage stage, Shape weight_shape, std::int64_t fan_in, CounterRng& rng);

  std::string id_;
  std::string arch_;
  Shape input_shape_;
  int classes_;
  int feature_dim_ = 64;
  std::vector<NamedTensor> params_;  // (weight, bias) per stage; the last stage is the classifier
  std::vector<Stage> stages_;
};

/// Raised when expert training diverges.
class ExpertDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trains a classifier on (train) and records accuracy on (heldout).
std::unique_ptr<NetworkExpert> train_expert(const Dataset& train, const Dataset& heldout, std::uint64_t seed,
                                            const std::string& arch, const ExpertBudget& budget = {});

/// Softmax cross-entropy averaged over the batch.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// A generative model as seen by the evaluator: n samples for a seed.
struct SampleSource {
  std::string name;
  std::function<Tensor(std::size_t n, std::uint64_t seed)> generate;
};

struct EvalRow {
  std::string model;
  std::string expert;
  double mean = 0;
  double std = 0;
  int repeats = 0;
  std::vector<double> scores;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  /// Per expert: model names ordered best (lowest distance) first.
  std::map<std::string, std::vector<std::string>> rankings;
  bool agreement = true;
  std::map<std::string, double> recons;
  std::map<std::string, std::pair<double, double>> coverage;  // modes, high-quality fraction
  std::vector<std::string> warnings;

  const EvalRow& row(const std::string& model, const std::string& expert) const;
  void write_csv(std::ostream& out) const;
  void print_table(std::ostream& out) const;
};

/// Frechet distance between the Gaussian fit of each expert's features on
/// `real` and on fresh samples of each model, repeated `repeats` times with
/// seeds derived from `seed`. Rankings order models by mean distance.
EvalReport ensemble_eval(const std::vector<SampleSource>& models, const std::vector<const Expert*>& experts,
                         const Tensor& observed, std::size_t n_samples, int repeats, std::uint64_t seed);

/// Ranks models for each expert and sets the agreement flag.
void rank_models(EvalReport& report);

struct ModeCoverage {
  int modes = 0;
  double quality = 0.0;
  std::vector<int> per_mode;
};

/// A sample is high quality within 3 sigma of its nearest center; a mode is
/// covered by at least max(20, n / (10 k)) high-quality samples.
ModeCoverage mode_coverage(std::span<const real> points, const MixtureSpec& spec);

}  // namespace idvae
