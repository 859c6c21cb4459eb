#include "fixtures.hpp"
#include "properties.hpp"

#include <cstring>
#include <filesystem>
#include <map>

namespace idvae::testing {

namespace {

using Snapshot = std::vector<std::vector<real>>;

Snapshot snapshot(const Network& net) {
  Snapshot s;
  for (const auto& p : net.params().all()) s.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return s;
}

bool same_bits(const std::vector<real>& a, std::span<const real> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(real)) == 0;
}

bool same_params(const Network& a, const Network& b) {
  const auto pa = a.params().all(), pb = b.params().all();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto da = pa[i].tensor.data(), db = pb[i].tensor.data();
    if (da.size() != db.size() || std::memcmp(da.data(), db.data(), da.size() * sizeof(real)) != 0) return false;
  }
  return true;
}

GroupMask expected_groups(Phase p) {
  switch (p) {
    case Phase::dis: return kShared | kDis;
    case Phase::enc: return kShared | kEnc;
    case Phase::joint: return kShared | kEnc | kDis;
    case Phase::dec: return kDec;
  }
  return 0;
}

Group group_of(const ParamPartition& part, const std::string& name) {
  for (Group g : {kShared, kEnc, kDis, kDec})
    for (const auto& p : part.group(g))
      if (p.name == name) return g;
  throw std::logic_error("unknown parameter " + name);
}

struct IsolationStats {
  std::size_t phases = 0;
  std::size_t violations = 0;
  std::string first;
  std::map<std::string, std::size_t> shared_changes;  // per phase name
};

// Runs `steps` steps and checks, after every phase, that exactly the tensors
// of the phase's groups changed.
IsolationStats run_isolation(const ExperimentConfig& config, const Shape& sample_shape, int classes,
                             const std::function<Batch(std::uint64_t)>& make_batch, int steps) {
  TrainState state = TrainState::create(config, sample_shape, classes);
  IsolationStats stats;
  Snapshot before;
  const auto params = state.net->params().all();
  std::vector<Group> groups;
  for (const auto& p : params) groups.push_back(group_of(state.net->params(), p.name));

  const PhaseObserver observer = [&](Phase phase, const TrainState& s) {
    ++stats.phases;
    const GroupMask want = expected_groups(phase);
    bool shared_moved = false;
    const auto now = s.net->params().all();
    for (std::size_t i = 0; i < now.size(); ++i) {
      const bool changed = !same_bits(before[i], now[i].tensor.data());
      const bool expected = want & groups[i];
      if (changed != expected) {
        if (stats.violations++ == 0) {
          stats.first = "step " + std::to_string(s.step + 1) + " phase " + to_string(phase) + " tensor " +
                        now[i].name + (changed ? " changed" : " unchanged");
        }
      }
      if (groups[i] == kShared && changed) shared_moved = true;
    }
    if (shared_moved) ++stats.shared_changes[to_string(phase)];
    before = snapshot(*s.net);
  };
  for (int i = 0; i < steps; ++i) {
    before = snapshot(*state.net);
    train_step(make_batch(static_cast<std::uint64_t>(i)), config, state, observer);
  }
  return stats;
}

void isolation_property(const std::string& id, Variant v, ScheduleOrder order) {
  add_property("trainer.isolation." + id, 1, [=](std::uint64_t seed, Report& r) {
    ExperimentConfig c = tiny_ring_config(v, seed);
    c.schedule = order;
    c.resolve();
    const int cond = c.conditional() ? c.ring_k : 0;
    constexpr int kSteps = 100;
    const auto stats = run_isolation(c, {2}, c.ring_k,
                                     [&](std::uint64_t i) { return ring_batch(16, cond, seed * 1000 + i); }, kSteps);
    r.truth("changed set equals phase groups", stats.violations == 0,
            std::to_string(stats.violations) + " violations, first: " + stats.first, "0 violations");
    const bool has_shared = !TrainState::create(c, {2}, c.ring_k).net->params().shared.empty();
    if (has_shared) {
      for (const auto& [phase, count] : stats.shared_changes) {
        if (phase == "dec") continue;
        r.truth("shared moves in every " + phase + " phase", count == kSteps, std::to_string(count),
                std::to_string(kSteps));
      }
      if (c.dis_phase) {
        r.truth("shared moves in dis and enc phases",
                stats.shared_changes.count(order == ScheduleOrder::joint ? "joint" : "dis") == 1);
      }
    }
  });
}

ExperimentConfig tiny_image_config(Variant v, std::uint64_t seed) {
  ExperimentConfig c = ExperimentConfig::for_variant(v);
  c.dataset = "mnist";
  c.seed = seed;
  c.batch_size = 4;
  c.trunk = {3, 4};
  c.latent_dim = 3;
  c.resolve();
  return c;
}

Batch image_batch(std::size_t n, int cond_dim, std::uint64_t seed) {
  CounterRng rng(seed);
  Batch b;
  b.x = Tensor::constant({static_cast<std::int64_t>(n), 1, 8, 8}, uniform(n * 64, 0, 1, rng));
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(rng.below(10)));
  if (cond_dim > 0) b.y = one_hot(b.labels, cond_dim);
  return b;
}

}  // namespace

void register_trainer_properties() {
  isolation_property("vae", Variant::vae, ScheduleOrder::dis_first);
  isolation_property("idvae", Variant::idvae, ScheduleOrder::dis_first);
  isolation_property("idvae_r", Variant::idvae_r, ScheduleOrder::dis_first);
  isolation_property("no_sharing", Variant::no_sharing, ScheduleOrder::dis_first);
  isolation_property("c_idvae", Variant::c_idvae, ScheduleOrder::dis_first);
  isolation_property("idvae.enc_first", Variant::idvae, ScheduleOrder::enc_first);
  isolation_property("idvae.joint", Variant::idvae, ScheduleOrder::joint);

  add_property("trainer.isolation.conv", 2, [](std::uint64_t seed, Report& r) {
    const Variant v = seed % 2 ? Variant::c_idvae : Variant::idvae;
    const ExperimentConfig c = tiny_image_config(v, seed);
    const int cond = c.conditional() ? 10 : 0;
    const auto stats = run_isolation(c, {1, 8, 8}, 10, [&](std::uint64_t i) { return image_batch(4, cond, seed + i); }, 20);
    r.truth(to_string(v) + " changed set equals phase groups", stats.violations == 0,
            std::to_string(stats.violations) + " violations, first: " + stats.first, "0 violations");
  });

  add_property("trainer.lr_zero", 3, [](std::uint64_t seed, Report& r) {
    ExperimentConfig c = tiny_ring_config(Variant::idvae, seed);
    c.optim.lr = 0.0f;
    TrainState s = TrainState::create(c, {2}, 8);
    const Snapshot before = snapshot(*s.net);
    train_step(ring_batch(16, 0, seed), c, s);
    bool same = true;
    const auto now = s.net->params().all();
    for (std::size_t i = 0; i < now.size(); ++i) same = same && same_bits(before[i], now[i].tensor.data());
    r.truth("no parameter changes", same);
  });

  add_property("trainer.enc_first_differs", 3, [](std::uint64_t seed, Report& r) {
    ExperimentConfig a = tiny_ring_config(Variant::idvae, seed);
    ExperimentConfig b = a;
    b.schedule = ScheduleOrder::enc_first;
    TrainState sa = TrainState::create(a, {2}, 8), sb = TrainState::create(b, {2}, 8);
    r.truth("same init", same_params(*sa.net, *sb.net));
    const Batch batch = ring_batch(16, 0, seed);
    train_step(batch, a, sa);
    train_step(batch, b, sb);
    r.truth("parameters differ after one step", !same_params(*sa.net, *sb.net));
  });

  add_property("trainer.determinism", 3, [](std::uint64_t seed, Report& r) {
    const ExperimentConfig c = tiny_ring_config(static_cast<Variant>(seed % 5), seed);
    const int cond = c.conditional() ? c.ring_k : 0;
    TrainState a = TrainState::create(c, {2}, 8), b = TrainState::create(c, {2}, 8);
    for (std::uint64_t i = 0; i < 5; ++i) {
      const LossBundle la = train_step(ring_batch(16, cond, seed + i), c, a);
      const LossBundle lb = train_step(ring_batch(16, cond, seed + i), c, b);
      r.truth("losses step " + std::to_string(i), la.components.values() == lb.components.values());
    }
    r.truth("parameters", same_params(*a.net, *b.net));
  });

  add_property("trainer.checkpoint_roundtrip", 3, [](std::uint64_t seed, Report& r) {
    const ExperimentConfig c = tiny_ring_config(static_cast<Variant>(seed % 5), seed);
    const int cond = c.conditional() ? c.ring_k : 0;
    TrainState a = TrainState::create(c, {2}, 8);
    for (std::uint64_t i = 0; i < 3; ++i) train_step(ring_batch(16, cond, seed + i), c, a);
    const auto path = std::filesystem::temp_directory_path() / ("idvae_prop_" + std::to_string(seed) + ".ckpt");
    make_checkpoint(c, a).save(path);
    TrainState b = restore_state(Checkpoint::load(path), c, {2}, 8);
    std::filesystem::remove(path);
    r.truth("restored parameters", same_params(*a.net, *b.net));
    r.truth("restored step", a.step == b.step, std::to_string(b.step), std::to_string(a.step));
    for (std::uint64_t i = 3; i < 6; ++i) {
      train_step(ring_batch(16, cond, seed + i), c, a);
      train_step(ring_batch(16, cond, seed + i), c, b);
    }
    r.truth("continued training bit-identical", same_params(*a.net, *b.net));
  });

  add_property("trainer.adam_reference", 5, [](std::uint64_t seed, Report& r) {
    CounterRng rng(seed);
    AdamHyper h;
    h.lr = static_cast<real>(rng.uniform(1e-3, 5e-2));
    h.beta1 = static_cast<real>(rng.uniform(0.3, 0.95));
    constexpr std::size_t n = 16;
    auto param = uniform(n, -0.5, 0.5, rng);
    std::vector<double> ref(param.begin(), param.end());
    Moments m{std::vector<real>(n, 0.0f), std::vector<real>(n, 0.0f)};
    ReferenceAdam oracle(h, n);
    double worst = 0;
    for (std::uint64_t t = 1; t <= 100; ++t) {
      const auto g = uniform(n, -1, 1, rng);
      optimizer_update(param, g, m, t, h);
      oracle.step(ref, std::vector<double>(g.begin(), g.end()));
      for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(param[i] - ref[i]));
    }
    r.below("max |param - reference| over 100 steps", worst, 1e-6);
  });

  add_property("trainer.adam_zero_grad", 3, [](std::uint64_t seed, Report& r) {
    CounterRng rng(seed);
    auto param = uniform(8, -1, 1, rng);
    const auto before = param;
    Moments m{std::vector<real>(8, 0.0f), std::vector<real>(8, 0.0f)};
    const std::vector<real> g(8, 0.0f);
    optimizer_update(param, g, m, 1, AdamHyper{});
    r.truth("unchanged", param == before);
  });

  // With the adversarial weights and the discriminator phase off, an
  // IDVAE(R) step (decoder on gamma * recons) is a VAE step.
  add_property("reduction.vae_step", 3, [](std::uint64_t seed, Report& r) {
    ExperimentConfig vae = tiny_ring_config(Variant::vae, seed);
    ExperimentConfig red = tiny_ring_config(Variant::idvae_r, seed);
    red.weights.omega = 0.0f;
    red.weights.lambda = 0.0f;
    red.weights.gamma = vae.weights.alpha;
    red.dis_phase = false;
    red.resolve();
    ExperimentConfig plain = tiny_ring_config(Variant::idvae, seed);
    plain.weights.omega = 0.0f;
    plain.weights.lambda = 0.0f;
    plain.dis_phase = false;
    plain.resolve();

    TrainState a = TrainState::create(vae, {2}, 8), b = TrainState::create(red, {2}, 8);
    TrainState p = TrainState::create(plain, {2}, 8);
    const Batch batch = ring_batch(16, 0, seed);
    train_step(batch, vae, a);
    train_step(batch, red, b);
    train_step(batch, plain, p);
    r.truth("all parameters bit-identical", same_params(*a.net, *b.net));
    bool enc_side = true;
    const auto pa = a.net->params().select(kShared | kEnc), pp = p.net->params().select(kShared | kEnc);
    for (std::size_t i = 0; i < pa.size(); ++i) {
      const auto da = pa[i].tensor.data();
      enc_side = enc_side && same_bits({da.begin(), da.end()}, pp[i].tensor.data());
    }
    r.truth("plain IDVAE encoder side bit-identical", enc_side);
  });

  add_property("reduction.no_sharing_structure", 2, [](std::uint64_t seed, Report& r) {
    for (const Shape& shape : {Shape{2}, Shape{1, 8, 8}}) {
      ExperimentConfig c = shape.size() == 1 ? tiny_ring_config(Variant::no_sharing, seed)
                                             : tiny_image_config(Variant::no_sharing, seed);
      TrainState s = TrainState::create(c, shape, shape.size() == 1 ? 8 : 10);
      const auto& part = s.net->params();
      std::size_t shared_objects = 0;
      for (const auto& e : part.enc)
        for (const auto& d : part.dis)
          if (e.tensor.same_object(d.tensor) || e.tensor.shares_storage_with(d.tensor)) ++shared_objects;
      r.truth(idvae::to_string(shape) + " theta_shared empty", part.shared.empty());
      r.truth(idvae::to_string(shape) + " enc/dis tensors shared", shared_objects == 0, std::to_string(shared_objects), "0");
    }
  });
}

}  // namespace idvae::testing
