#include "idvae/eval.hpp"

#include "idvae/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <numeric>

namespace idvae {

Eigen::MatrixXd to_matrix(const Tensor& t) {
  if (t.rank() < 1 || t.shape()[0] < 1) throw ShapeError("to_matrix", "expected a non-empty batch");
  const auto rows = t.shape()[0];
  const auto cols = t.numel() / rows;
  return Eigen::Map<const Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(t.data().data(), rows,
                                                                                                 cols)
      .cast<double>();
}

// ---------------------------------------------------------------------------
// Experts

namespace {

constexpr real kSlope = 0.2f;

std::vector<real> uniform_values(std::int64_t n, double bound, CounterRng& rng) {
  std::vector<real> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<real>(rng.uniform(-bound, bound));
  return v;
}

std::int64_t conv_out(std::int64_t n, int k, int s, int p) { return (n + 2 * p - k) / s + 1; }

}  // namespace

NetworkExpert::NetworkExpert(std::string id, std::string arch, Shape input_shape, int classes, std::uint64_t seed)
    : id_(std::move(id)), arch_(std::move(arch)), input_shape_(std::move(input_shape)), classes_(classes) {
  if (classes_ < 2) throw std::invalid_argument("expert needs at least 2 classes");
  CounterRng rng(seed);
  const bool image = input_shape_.size() == 3;
  const std::int64_t in_size = numel(input_shape_);

  if (arch_ == "cnn_a" || arch_ == "cnn_b" || (arch_ == "random_projection" && image)) {
    if (!image) throw std::invalid_argument("expert arch '" + arch_ + "' needs [C,H,W] input");
    const bool a = arch_ != "cnn_b";
    const int k = a ? 4 : 3;
    const std::vector<int> widths = a ? std::vector<int>{16, 32} : std::vector<int>{24, 48};
    std::int64_t c = input_shape_[0];
    std::int64_t h = input_shape_[1];
    std::int64_t w = input_shape_[2];
    for (std::size_t i = 0; i < widths.size(); ++i) {
      add_stage("conv" + std::to_string(i), {true, 2, 1}, {widths[i], c, k, k}, c * k * k, rng);
      c = widths[i];
      h = conv_out(h, k, 2, 1);
      w = conv_out(w, k, 2, 1);
    }
    add_stage("fc", {}, {c * h * w, feature_dim_}, c * h * w, rng);
  } else if (arch_ == "mlp") {
    add_stage("fc0", {}, {in_size, feature_dim_}, in_size, rng);
    add_stage("fc1", {}, {feature_dim_, feature_dim_}, feature_dim_, rng);
  } else if (arch_ == "random_projection") {
    add_stage("proj", {}, {in_size, feature_dim_}, in_size, rng);
  } else {
    throw std::invalid_argument("unknown expert arch '" + arch_ + "' (cnn_a, cnn_b, mlp, random_projection)");
  }
  add_stage("head", {}, {feature_dim_, classes_}, feature_dim_, rng);
}

void NetworkExpert::add_stage(const std::string& name, Stage stage, Shape weight_shape, std::int64_t fan_in,
                              CounterRng& rng) {
  // Dense random projections of low-dimensional inputs use a wide bound so the
  // tanh features are not all near-linear.
  const bool wide = arch_ == "random_projection" && !stage.conv && stages_.empty();
  const double gain = 2.0 / (1.0 + kSlope * kSlope);
  const double bound = wide ? 2.0 : std::sqrt(3.0 * gain / static_cast<double>(fan_in));
  const std::int64_t out = stage.conv ? weight_shape[0] : weight_shape[1];
  const std::int64_t count = numel(weight_shape);
  params_.push_back({id_ + "." + name + ".w", Tensor::parameter(weight_shape, uniform_values(count, bound, rng))});
  std::vector<real> bias(static_cast<std::size_t>(out), 0.0f);
  if (wide) bias = uniform_values(out, 1.0, rng);
  params_.push_back({id_ + "." + name + ".b", Tensor::parameter({out}, std::move(bias))});
  stages_.push_back(stage);
}

Tensor NetworkExpert::stage(std::size_t i, const Tensor& h, bool track) const {
  const Tensor w = track ? params_[2 * i].tensor : params_[2 * i].tensor.detach();
  const Tensor b = track ? params_[2 * i + 1].tensor : params_[2 * i + 1].tensor.detach();
  if (stages_[i].conv) return conv2d(h, w, b, stages_[i].stride, stages_[i].padding);
  return add(matmul(h, w), b);
}

Tensor NetworkExpert::body(const Tensor& x, bool track) const {
  if (x.rank() < 1 || Shape(x.shape().begin() + 1, x.shape().end()) != input_shape_) {
    throw ShapeError("expert " + id_, "unexpected input shape");
  }
  const bool projection = arch_ == "random_projection";
  Tensor h = x;
  const std::size_t n_body = stages_.size() - 1;
  for (std::size_t i = 0; i < n_body; ++i) {
    if (!stages_[i].conv && h.rank() != 2) h = reshape(h, {h.shape()[0], -1});
    h = stage(i, h, track);
    h = projection && i + 1 == n_body ? tanh(h) : leaky_relu(h, kSlope);
  }
  return h;
}

Tensor NetworkExpert::logits(const Tensor& x, bool track) const {
  return stage(stages_.size() - 1, body(x, track), track);
}

Eigen::MatrixXd NetworkExpert::features(const Tensor& x) const {
  const auto n = x.shape()[0];
  Eigen::MatrixXd out(n, feature_dim_);
  constexpr std::int64_t kChunk = 500;
  const std::int64_t row = x.numel() / n;
  for (std::int64_t begin = 0; begin < n; begin += kChunk) {
    const auto len = std::min(kChunk, n - begin);
    Shape shape = x.shape();
    shape[0] = len;
    const auto src = x.data().subspan(static_cast<std::size_t>(begin * row), static_cast<std::size_t>(len * row));
    const Tensor chunk = Tensor::constant(shape, std::vector<real>(src.begin(), src.end()));
    out.middleRows(begin, len) = to_matrix(body(chunk, false));
  }
  return out;
}

std::vector<int> NetworkExpert::classify(const Tensor& x) const {
  const Eigen::MatrixXd z = to_matrix(logits(x, false));
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) z.row(i).maxCoeff(&out[static_cast<std::size_t>(i)]);
  return out;
}

double NetworkExpert::accuracy(const Dataset& data) const {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  constexpr std::size_t kChunk = 500;
  for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
    idx.resize(std::min(kChunk, data.size() - begin));
    std::iota(idx.begin(), idx.end(), begin);
    const auto pred = classify(data.gather(idx));
    for (std::size_t i = 0; i < idx.size(); ++i) correct += pred[i] == data.labels[idx[i]];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.shape()[0] != static_cast<std::int64_t>(labels.size())) {
    throw ShapeError("cross_entropy", "logits must be [B, C] with B labels");
  }
  const auto b = logits.shape()[0];
  const auto c = logits.shape()[1];
  // Row maxima enter as constants; the shift cancels in the gradient.
  std::vector<real> maxima(static_cast<std::size_t>(b));
  const auto v = logits.data();
  for (std::int64_t i = 0; i < b; ++i) {
    maxima[i] = *std::max_element(v.begin() + i * c, v.begin() + (i + 1) * c);
  }
  const Tensor shifted = sub(logits, Tensor::constant({b, 1}, std::move(maxima)));
  const Tensor lse = log(matmul(exp(shifted), Tensor::full({c, 1}, 1.0f)));
  const Tensor log_p = sub(shifted, lse);
  return scale(sum(mul(one_hot(labels, static_cast<int>(c)), log_p)), -1.0f / static_cast<real>(b));
}

std::unique_ptr<NetworkExpert> train_expert(const Dataset& train, const Dataset& heldout, std::uint64_t seed,
                                            const std::string& arch, const ExpertBudget& budget) {
  if (train.size() == 0) throw DataError("train_expert: empty training set");
  auto expert = std::make_unique<NetworkExpert>(arch + "_" + std::to_string(seed), arch, train.sample_shape,
                                                train.classes, seed);
  if (arch != "random_projection") {
    // Only the classifier is trained; its penultimate layer is the feature map.
    AdamHyper hyper;
    hyper.lr = budget.lr;
    hyper.beta1 = 0.9f;
    Adam opt(expert->params(), hyper);
    std::vector<Tensor> tensors;
    for (const auto& p : expert->params()) tensors.push_back(p.tensor);
    std::vector<std::size_t> order(train.size());
    const auto bs = static_cast<std::size_t>(std::max(budget.batch_size, 1));
    for (int epoch = 0; epoch < budget.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), 0);
      CounterRng rng = CounterRng(seed).fork(static_cast<std::uint64_t>(epoch));
      rng.shuffle(order);
      for (std::size_t begin = 0; begin < order.size(); begin += bs) {
        const std::span<const std::size_t> idx(order.data() + begin, std::min(bs, order.size() - begin));
        zero_grads(tensors);
        const Tensor loss = cross_entropy(expert->logits(train.gather(idx), true), train.gather_labels(idx));
        if (!std::isfinite(loss.item())) {
          throw ExpertDivergence("expert " + expert->id() + " diverged in epoch " + std::to_string(epoch));
        }
        backward(loss);
        opt.step();
      }
    }
    zero_grads(tensors);
  }
  expert->heldout_accuracy = expert->accuracy(heldout);
  return expert;
}

// ---------------------------------------------------------------------------
// Protocol

const EvalRow& EvalReport::row(const std::string& model, const std::string& expert) const {
  for (const auto& r : rows)
    if (r.model == model && r.expert == expert) return r;
  throw std::out_of_range("no eval row for " + model + " / " + expert);
}

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void EvalReport::write_csv(std::ostream& out) const {
  out << "model,expert,mean,std,repeats,recons,modes,quality\n";
  for (const auto& r : rows) {
    const auto rc = recons.find(r.model);
    const auto cv = coverage.find(r.model);
    out << r.model << "," << r.expert << "," << num(r.mean) << "," << num(r.std) << "," << r.repeats << ","
        << (rc != recons.end() ? num(rc->second) : "") << ","
        << (cv != coverage.end() ? num(cv->second.first) : "") << ","
        << (cv != coverage.end() ? num(cv->second.second) : "") << "\n";
  }
}

void EvalReport::print_table(std::ostream& out) const {
  out << std::left << std::setw(20) << "model" << std::setw(24) << "expert" << std::right << std::setw(14)
      << "frechet" << std::setw(12) << "std" << std::setw(12) << "recons" << "\n";
  for (const auto& r : rows) {
    const auto rc = recons.find(r.model);
    out << std::left << std::setw(20) << r.model << std::setw(24) << r.expert << std::right << std::setw(14)
        << num(r.mean) << std::setw(12) << (std::isnan(r.std) ? "-" : num(r.std)) << std::setw(12)
        << (rc != recons.end() ? num(rc->second) : "-") << "\n";
  }
  for (const auto& [model, cv] : coverage) {
    out << "coverage " << model << ": " << cv.first << " modes, quality " << num(cv.second) << "\n";
  }
  for (const auto& [expert, order] : rankings) {
    out << "ranking " << expert << ":";
    for (const auto& m : order) out << " " << m;
    out << "\n";
  }
  out << "agreement: " << (agreement ? "yes" : "no") << "\n";
  for (const auto& w : warnings) out << "warning: " << w << "\n";
}

void rank_models(EvalReport& report) {
  report.rankings.clear();
  std::map<std::string, std::vector<std::pair<double, std::size_t>>> by_expert;
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    by_expert[report.rows[i].expert].push_back({report.rows[i].mean, i});
  }
  for (auto& [expert, entries] : by_expert) {
    std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    auto& order = report.rankings[expert];
    for (const auto& e : entries) order.push_back(report.rows[e.second].model);
  }
  report.agreement = true;
  for (const auto& [expert, order] : report.rankings) {
    if (order != report.rankings.begin()->second) report.agreement = false;
  }
}

EvalReport ensemble_eval(const std::vector<SampleSource>& models, const std::vector<const Expert*>& experts,
                         const Tensor& observed, std::size_t n_samples, int repeats, std::uint64_t seed) {
  if (models.empty()) throw std::invalid_argument("ensemble_eval: no models");
  if (experts.size() < 2) throw std::invalid_argument("ensemble_eval: need at least 2 experts");
  if (repeats < 1) throw std::invalid_argument("ensemble_eval: repeats must be >= 1");
  if (n_samples < 2) throw std::invalid_argument("ensemble_eval: need at least 2 samples");

  EvalReport report;
  std::vector<GaussianStats<double>> reference;
  for (const Expert* e : experts) {
    if (n_samples < 10 * static_cast<std::size_t>(e->dim())) {
      report.warnings.push_back("n_samples " + std::to_string(n_samples) + " < 10 x feature dim of " + e->id());
    }
    reference.push_back(fit_gaussian(e->features(observed)));
  }

  for (const auto& model : models) {
    std::vector<std::vector<double>> scores(experts.size());
    for (int r = 0; r < repeats; ++r) {
      // Every model sees the same generation seeds.
      const std::uint64_t gen_seed = CounterRng(seed).fork(static_cast<std::uint64_t>(r)).next_u64();
      const Tensor samples = model.generate(n_samples, gen_seed);
      for (std::size_t e = 0; e < experts.size(); ++e) {
        const auto stats = fit_gaussian(experts[e]->features(samples));
        scores[e].push_back(frechet_distance(reference[e], stats));
      }
    }
    for (std::size_t e = 0; e < experts.size(); ++e) {
      EvalRow row;
      row.model = model.name;
      row.expert = experts[e]->id();
      row.repeats = repeats;
      row.scores = scores[e];
      const double mean = std::accumulate(row.scores.begin(), row.scores.end(), 0.0) / repeats;
      double ss = 0.0;
      for (double s : row.scores) ss += (s - mean) * (s - mean);
      row.mean = mean;
      row.std = repeats >= 3 ? std::sqrt(ss / (repeats - 1)) : std::numeric_limits<double>::quiet_NaN();
      report.rows.push_back(std::move(row));
    }
  }
  rank_models(report);
  return report;
}

ModeCoverage mode_coverage(std::span<const real> points, const MixtureSpec& spec) {
  spec.validate();
  if (points.size() % 2 != 0) throw std::invalid_argument("mode_coverage: expected 2-D points");
  const std::size_t n = points.size() / 2;
  ModeCoverage out;
  out.per_mode.assign(static_cast<std::size_t>(spec.k), 0);
  if (n == 0) return out;
  const double radius = 3.0 * spec.sigma;
  std::size_t good = 0;
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int m = 0; m < spec.k; ++m) {
      const double dx = points[2 * i] - spec.centers[m][0];
      const double dy = points[2 * i + 1] - spec.centers[m][1];
      const double d = dx * dx + dy * dy;
      if (d < best_d) {
        best_d = d;
        best = m;
      }
    }
    if (std::sqrt(best_d) <= radius) {
      ++good;
      ++out.per_mode[best];
    }
  }
  const double needed = std::max(20.0, static_cast<double>(n) / (10.0 * spec.k));
  for (int c : out.per_mode) out.modes += c >= needed;
  out.quality = static_cast<double>(good) / static_cast<double>(n);
  return out;
}

}  // namespace idvae
