#include "fixtures.hpp"
#include "oracles.hpp"

#include "idvae/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace idvae;
using namespace idvae::testing;
namespace fs = std::filesystem;

namespace {

using Snapshot = std::vector<std::vector<float>>;

Snapshot snapshot(const std::vector<NamedTensor>& params) {
  Snapshot s;
  for (const auto& p : params) s.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return s;
}

bool unchanged(const Snapshot& s, const std::vector<NamedTensor>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto d = params[i].tensor.data();
    if (std::memcmp(s[i].data(), d.data(), d.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("idvae_unit_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("phase isolation within one step") {
  const ExperimentConfig c = tiny_ring_config(Variant::idvae, 2);
  TrainState s = TrainState::create(c, {2}, 8);
  const auto& part = s.net->params();
  const Snapshot enc0 = snapshot(part.enc), dec0 = snapshot(part.dec);
  Snapshot dis1;
  int phases = 0;
  train_step(ring_batch(16, 0, 3), c, s, [&](Phase p, const TrainState&) {
    ++phases;
    if (p == Phase::dis) {
      CHECK(unchanged(enc0, part.enc));
      CHECK(unchanged(dec0, part.dec));
      dis1 = snapshot(part.dis);
    }
    if (p == Phase::enc) CHECK(unchanged(dis1, part.dis));
  });
  CHECK(phases == 3);
  CHECK(s.step == 1);
}

TEST_CASE("schedule orders") {
  std::vector<Phase> seen;
  const auto record = [&](Phase p, const TrainState&) { seen.push_back(p); };
  for (auto [order, want] : {std::pair{ScheduleOrder::dis_first, std::vector{Phase::dis, Phase::enc, Phase::dec}},
                             std::pair{ScheduleOrder::enc_first, std::vector{Phase::enc, Phase::dis, Phase::dec}},
                             std::pair{ScheduleOrder::joint, std::vector{Phase::joint, Phase::dec}}}) {
    ExperimentConfig c = tiny_ring_config(Variant::idvae, 1);
    c.schedule = order;
    TrainState s = TrainState::create(c, {2}, 8);
    seen.clear();
    train_step(ring_batch(16, 0, 1), c, s, record);
    CHECK(seen == want);
  }
  const ExperimentConfig vae = tiny_ring_config(Variant::vae, 1);
  TrainState s = TrainState::create(vae, {2}, 8);
  seen.clear();
  train_step(ring_batch(16, 0, 1), vae, s, record);
  CHECK(seen == std::vector{Phase::enc, Phase::dec});
}

TEST_CASE("learning rate zero changes nothing") {
  ExperimentConfig c = tiny_ring_config(Variant::idvae_r, 4);
  c.optim.lr = 0.0f;
  TrainState s = TrainState::create(c, {2}, 8);
  const auto all = s.net->params().all();
  const Snapshot before = snapshot(all);
  train_step(ring_batch(16, 0, 5), c, s);
  CHECK(unchanged(before, all));
}

TEST_CASE("enc_first and dis_first end in different parameters") {
  ExperimentConfig a = tiny_ring_config(Variant::idvae, 6);
  ExperimentConfig b = a;
  b.schedule = ScheduleOrder::enc_first;
  TrainState sa = TrainState::create(a, {2}, 8), sb = TrainState::create(b, {2}, 8);
  const Batch batch = ring_batch(16, 0, 7);
  train_step(batch, a, sa);
  train_step(batch, b, sb);
  CHECK_FALSE(unchanged(snapshot(sa.net->params().shared), sb.net->params().shared));
}

TEST_CASE("optimizer update rule") {
  SUBCASE("zero gradient leaves the parameter") {
    std::vector<float> p{0.3f, -0.2f};
    Moments m{{0, 0}, {0, 0}};
    optimizer_update(p, std::vector<float>{0, 0}, m, 1, AdamHyper{});
    CHECK(p == std::vector<float>{0.3f, -0.2f});
  }
  SUBCASE("first bias-corrected step has magnitude lr") {
    std::vector<float> p{1.0f};
    Moments m{{0}, {0}};
    AdamHyper h;
    h.lr = 0.1f;
    optimizer_update(p, std::vector<float>{1.0f}, m, 1, h);
    CHECK(1.0f - p[0] == doctest::Approx(0.1).epsilon(1e-4));
  }
  SUBCASE("matches a double-precision reference over 100 steps") {
    CounterRng rng(11);
    AdamHyper h;
    h.lr = 0.01f;
    auto p = uniform(6, -0.5, 0.5, rng);
    std::vector<double> ref(p.begin(), p.end());
    Moments m{std::vector<float>(6), std::vector<float>(6)};
    ReferenceAdam oracle(h, 6);
    for (std::uint64_t t = 1; t <= 100; ++t) {
      const auto g = uniform(6, -1, 1, rng);
      optimizer_update(p, g, m, t, h);
      oracle.step(ref, {g.begin(), g.end()});
    }
    for (int i = 0; i < 6; ++i) CHECK(std::abs(p[i] - ref[i]) <= 1e-6);
  }
}

TEST_CASE("non-finite loss names the phase and step") {
  const ExperimentConfig c = tiny_ring_config(Variant::idvae, 8);
  TrainState s = TrainState::create(c, {2}, 8);
  train_step(ring_batch(16, 0, 1), c, s);
  Tensor w = s.net->params().dis.front().tensor;
  for (float& v : w.mutable_data()) v = std::nanf("");
  try {
    train_step(ring_batch(16, 0, 2), c, s);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("dis") != std::string::npos);
    CHECK(msg.find("step 2") != std::string::npos);
  }
}

TEST_CASE("VAE held-out reconstruction improves on 2-D data") {
  ExperimentConfig c = tiny_ring_config(Variant::vae, 9);
  c.ring_train = 2048;
  c.ring_test = 500;
  c.epochs = 3;
  c.batch_size = 32;
  c.optim.lr = 1e-3f;
  c.out_dir = scratch("vae_improves").string();
  Trainer t(c);
  const double before = heldout_recons(*t.state().net, t.data().test);
  const TrainResult r = t.run();
  CHECK(r.final_probe.recons < before);
}

TEST_CASE("IDVAE discriminator loss stays finite and away from zero") {
  ExperimentConfig c = tiny_ring_config(Variant::idvae, 10);
  c.ring_train = 1024;
  c.epochs = 2;
  c.out_dir = scratch("dis_bounded").string();
  Trainer t(c);
  std::size_t good = 0;
  const auto n = t.total_steps();
  for (std::uint64_t i = 0; i < n; ++i) {
    const float l = t.step().l_dis.item();
    good += std::isfinite(l) && l > 0.1f;
  }
  CHECK(static_cast<double>(good) >= 0.9 * static_cast<double>(n));
}

TEST_CASE("resume reproduces the uninterrupted run") {
  ExperimentConfig c = tiny_ring_config(Variant::c_idvae, 12);
  c.epochs = 3;
  c.checkpoints = true;
  c.log_every = 4;
  const fs::path full = scratch("resume_full"), part = scratch("resume_part");
  c.out_dir = full.string();
  Trainer(c).run();

  c.out_dir = part.string();
  ExperimentConfig first = c;
  first.epochs = 1;
  Trainer(first).run();
  // Resume from the epoch-1 checkpoint with the full budget.
  Trainer resumed(c, Checkpoint::load(part / "checkpoint_epoch_1.ckpt"));
  resumed.run();

  CHECK(slurp(full / "final.ckpt").size() > 0);
  const Checkpoint a = Checkpoint::load(full / "final.ckpt"), b = Checkpoint::load(part / "final.ckpt");
  REQUIRE(a.tensors.size() == b.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) CHECK(a.tensors[i].values == b.tensors[i].values);
  CHECK(a.step == b.step);
  CHECK(slurp(full / "metrics.csv") == slurp(part / "metrics.csv"));
}

TEST_CASE("metrics log layout") {
  ExperimentConfig c = tiny_ring_config(Variant::vae, 13);
  c.out_dir = scratch("metrics").string();
  Trainer(c).run();
  std::ifstream in(fs::path(c.out_dir) / "metrics.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "step,epoch,l_enc,l_dis,l_dec,recons,prior,recons_dis,gan,dis_real,dis_fake_prior,dis_fake_recon,"
        "probe_recons,probe_modes,probe_quality");
  long last = 0;
  std::string line;
  while (std::getline(in, line)) {
    const long step = std::stol(line.substr(0, line.find(',')));
    CHECK(step > last);
    last = step;
  }
  CHECK(last == 16);  // 256 points / batch 16, one epoch
  CHECK(fs::exists(fs::path(c.out_dir) / "config.resolved.txt"));
  CHECK(fs::exists(fs::path(c.out_dir) / "final.ckpt"));
}

TEST_CASE("checkpoint round trip and corruption") {
  const ExperimentConfig c = tiny_ring_config(Variant::idvae, 14);
  TrainState s = TrainState::create(c, {2}, 8);
  train_step(ring_batch(16, 0, 1), c, s);
  const fs::path dir = scratch("ckpt");
  const fs::path path = dir / "a.ckpt";
  make_checkpoint(c, s).save(path);
  const Checkpoint back = Checkpoint::load(path);
  CHECK(back.step == 1);
  CHECK(back.optimizer_steps.at("dis") == 1);
  CHECK(checkpoint_config(back).to_pairs() == c.to_pairs());
  const std::string bytes = slurp(path);
  CHECK(bytes.rfind("IDVAE-CHECKPOINT 1\n", 0) == 0);

  const fs::path cut = dir / "cut.ckpt";
  std::ofstream(cut, std::ios::binary) << bytes.substr(0, bytes.size() - 10);
  try {
    Checkpoint::load(cut);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(cut.string()) != std::string::npos);
  }
  const fs::path bad = dir / "bad.ckpt";
  std::ofstream(bad, std::ios::binary) << "not a checkpoint\n";
  CHECK_THROWS_AS(Checkpoint::load(bad), DataError);
  CHECK_THROWS_AS(Checkpoint::load(dir / "missing.ckpt"), DataError);

  // Architecture mismatch surfaces as a data error.
  ExperimentConfig other = c;
  other.trunk = {8, 8};
  CHECK_THROWS_AS(restore_state(back, other, {2}, 8), DataError);
}

TEST_CASE("config parsing") {
  CHECK_THROWS_AS(ExperimentConfig::from_pairs({{"no_such_key", "1"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_pairs({{"batch_size", "many"}}), ConfigError);
  CHECK_THROWS_AS(parse_variant("gan"), ConfigError);
  const ExperimentConfig r = ExperimentConfig::for_variant(Variant::idvae_r);
  CHECK(r.weights.gamma > 0.0f);
  CHECK(ExperimentConfig::for_variant(Variant::idvae).weights.gamma == 0.0f);
  CHECK_FALSE(ExperimentConfig::for_variant(Variant::vae).dis_phase);
  ExperimentConfig bad = ExperimentConfig::for_variant(Variant::idvae);
  bad.weights.gamma = 1.0f;
  CHECK_THROWS_AS(bad.resolve(), ConfigError);

  // Variant is applied first whatever its position.
  const auto c = ExperimentConfig::from_pairs({{"omega", "0.5"}, {"variant", "idvae"}});
  CHECK(c.weights.omega == 0.5f);

  ExperimentConfig echo = tiny_ring_config(Variant::no_sharing, 3);
  echo.schedule = ScheduleOrder::enc_first;
  const auto again = ExperimentConfig::from_pairs(ExperimentConfig::parse_text(echo.to_text()));
  CHECK(again.to_pairs() == echo.to_pairs());
}

}  // TEST_SUITE
