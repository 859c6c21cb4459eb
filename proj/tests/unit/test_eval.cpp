#include "idvae/eval.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

using namespace idvae;

namespace {

class LinearExpert : public Expert {
 public:
  LinearExpert(std::string id, Eigen::MatrixXd map) : id_(std::move(id)), map_(std::move(map)) {}
  const std::string& id() const override { return id_; }
  int dim() const override { return static_cast<int>(map_.cols()); }
  Eigen::MatrixXd features(const Tensor& x) const override { return to_matrix(x) * map_; }

 private:
  std::string id_;
  Eigen::MatrixXd map_;
};

SampleSource shifted_normal(std::string name, double shift) {
  return {std::move(name), [=](std::size_t n, std::uint64_t seed) {
            CounterRng rng(seed);
            auto v = rng.normal(n * 2);
            for (auto& x : v) x = static_cast<float>(x + shift);
            return Tensor::constant({static_cast<std::int64_t>(n), 2}, v);
          }};
}

Dataset mnist(const std::string& split) {
  const std::filesystem::path dir = IDVAE_DATA_DIR;
  return load_idx(dir / (split + "-images-idx3-ubyte.gz"), dir / (split + "-labels-idx1-ubyte.gz"));
}

Dataset head(const Dataset& d, std::size_t n) {
  Dataset out = d;
  out.values.resize(n * static_cast<std::size_t>(d.sample_size()));
  out.labels.resize(n);
  return out;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("fit_gaussian") {
  Eigen::MatrixXd x(4, 2);
  x << 1, 0, 3, 0, 1, 2, 3, 2;
  const auto s = fit_gaussian(x);
  CHECK(s.mean(0) == doctest::Approx(2));
  CHECK(s.mean(1) == doctest::Approx(1));
  CHECK(s.cov(0, 0) == doctest::Approx(4.0 / 3));
  CHECK(s.cov(0, 1) == doctest::Approx(0));
  CHECK(s.n == 4);
  CHECK_THROWS_AS(fit_gaussian(Eigen::MatrixXd(1, 2)), std::invalid_argument);
  // Templated on the scalar.
  const auto f = fit_gaussian(x.cast<float>().eval());
  CHECK(f.mean(0) == doctest::Approx(2.0f));
}

TEST_CASE("frechet_distance examples") {
  GaussianStats<double> a;
  a.mean = Eigen::VectorXd::Zero(1);
  a.cov = Eigen::MatrixXd::Identity(1, 1);
  GaussianStats<double> b = a;
  CHECK(frechet_distance(a, b) == 0.0);
  b.mean(0) = 1.0;
  // The 1e-6 ridge on the square root costs about 2e-6 here.
  CHECK(frechet_distance(a, b) == doctest::Approx(1.0).epsilon(1e-5));
  b.mean(0) = 0.0;
  b.cov(0, 0) = 4.0;
  CHECK(frechet_distance(a, b) == doctest::Approx(1.0).epsilon(1e-5));
  GaussianStats<double> c;
  c.mean = Eigen::VectorXd::Zero(2);
  c.cov = Eigen::MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(frechet_distance(a, c), std::invalid_argument);
  c = a;
  c.mean(0) = std::nan("");
  CHECK_THROWS_AS(frechet_distance(a, c), std::domain_error);
}

TEST_CASE("ensemble protocol on synthetic sources") {
  const LinearExpert e1("identity", Eigen::MatrixXd::Identity(2, 2));
  Eigen::MatrixXd m(2, 2);
  m << 2, 1, -1, 3;
  const LinearExpert e2("mixed", m);
  const Tensor observed = shifted_normal("real", 0).generate(2000, 99);
  const Tensor copy = observed.clone();
  const std::vector<SampleSource> models{
      shifted_normal("far", 2.0), {"copy", [copy](std::size_t, std::uint64_t) { return copy; }},
      shifted_normal("near", 0.3), shifted_normal("near_again", 0.3)};
  const EvalReport r = ensemble_eval(models, {&e1, &e2}, observed, 2000, 3, 5);
  CHECK(r.rows.size() == 8);
  for (const auto& [expert, order] : r.rankings) {
    CHECK(order.front() == "copy");
    CHECK(order.back() == "far");
  }
  CHECK(r.row("copy", "identity").mean == 0.0);
  // Identical generators score identically.
  CHECK(r.row("near", "mixed").scores == r.row("near_again", "mixed").scores);
  CHECK(r.agreement);
  CHECK(r.row("far", "identity").repeats == 3);
  CHECK(r.row("far", "identity").std > 0.0);
  CHECK(r.warnings.empty());

  const EvalReport single = ensemble_eval(models, {&e1, &e2}, observed, 15, 1, 5);
  CHECK(std::isnan(single.row("far", "mixed").std));
  CHECK(single.warnings.size() == 2);
  CHECK_THROWS_AS(ensemble_eval(models, {&e1}, observed, 100, 1, 5), std::invalid_argument);
  CHECK_THROWS_AS(r.row("nobody", "identity"), std::out_of_range);
}

TEST_CASE("rankings that disagree clear the agreement flag") {
  EvalReport r;
  r.rows = {{"a", "x", 1.0}, {"b", "x", 2.0}, {"a", "y", 3.0}, {"b", "y", 0.5}};
  rank_models(r);
  CHECK(r.rankings.at("x") == std::vector<std::string>{"a", "b"});
  CHECK(r.rankings.at("y") == std::vector<std::string>{"b", "a"});
  CHECK_FALSE(r.agreement);
}

TEST_CASE("mode coverage") {
  const auto spec = MixtureSpec::ring();
  std::vector<float> pts;
  for (int i = 0; i < 100; ++i) pts.insert(pts.end(), {2.0f, 0.0f});
  auto cov = mode_coverage(pts, spec);
  CHECK(cov.modes == 1);
  CHECK(cov.quality == 1.0);
  CHECK(cov.per_mode[0] == 100);
  pts.assign(200, 0.0f);  // the ring's center is far from every mode
  cov = mode_coverage(pts, spec);
  CHECK(cov.modes == 0);
  CHECK(cov.quality == 0.0);
  CHECK_THROWS_AS(mode_coverage(std::vector<float>{1, 2, 3}, spec), std::invalid_argument);
}

TEST_CASE("expert training is seeded") {
  const Dataset train = head(mnist("train"), 256), test = head(mnist("t10k"), 128);
  ExpertBudget b;
  b.epochs = 1;
  const auto a = train_expert(train, test, 3, "cnn_b", b);
  const auto same = train_expert(train, test, 3, "cnn_b", b);
  const auto other = train_expert(train, test, 4, "cnn_b", b);
  bool equal = true, differs = false;
  for (std::size_t i = 0; i < a->params().size(); ++i) {
    const auto x = a->params()[i].tensor.data(), y = same->params()[i].tensor.data(),
               z = other->params()[i].tensor.data();
    equal = equal && std::equal(x.begin(), x.end(), y.begin());
    differs = differs || !std::equal(x.begin(), x.end(), z.begin());
  }
  CHECK(equal);
  CHECK(differs);
  CHECK(a->dim() == 64);
  CHECK(a->features(test.all()).rows() == 128);
}

TEST_CASE("convolutional experts classify held-out digits") {
  const Dataset train = mnist("train"), test = mnist("t10k");
  for (const char* arch : {"cnn_a", "cnn_b"}) {
    const auto e = train_expert(train, test, 7, arch);
    CHECK_MESSAGE(e->heldout_accuracy >= 0.95, arch << " accuracy " << e->heldout_accuracy);
  }
}

}  // TEST_SUITE
