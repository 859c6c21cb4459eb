#include "idvae/trainer.hpp"

#include "idvae/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace idvae {

std::string to_string(Phase p) {
  switch (p) {
    case Phase::dis: return "dis";
    case Phase::enc: return "enc";
    case Phase::joint: return "joint";
    case Phase::dec: return "dec";
  }
  return "?";
}

namespace {

// Fixed dataset seeds: the ring data does not move with the training seed.
constexpr std::uint64_t kRingTrainSeed = 0x52494E4754524149ull;
constexpr std::uint64_t kRingTestSeed = 0x52494E4754455354ull;
// Stream tags for the per-run generators.
constexpr std::uint64_t kStepStream = 1ull << 40;
constexpr std::uint64_t kEpochStream = 2ull << 40;
constexpr std::uint64_t kProbeStream = 3ull << 40;

GroupMask phase_groups(Phase p) {
  switch (p) {
    case Phase::dis: return kShared | kDis;
    case Phase::enc: return kShared | kEnc;
    case Phase::joint: return kShared | kEnc | kDis;
    case Phase::dec: return kDec;
  }
  return 0;
}

std::vector<Phase> schedule_of(const ExperimentConfig& config) {
  std::vector<Phase> phases;
  if (!config.dis_phase) {
    phases = {Phase::enc};
  } else if (config.schedule == ScheduleOrder::joint) {
    phases = {Phase::joint};
  } else if (config.schedule == ScheduleOrder::enc_first) {
    phases = {Phase::enc, Phase::dis};
  } else {
    phases = {Phase::dis, Phase::enc};
  }
  phases.push_back(Phase::dec);
  return phases;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

TrainState TrainState::create(const ExperimentConfig& config, const Shape& sample_shape, int classes) {
  TrainState state;
  state.seed = config.seed;
  state.net = std::make_unique<Network>(config.net_spec(sample_shape, classes), config.seed);
  for (Phase p : schedule_of(config)) {
    state.optimizers.emplace(to_string(p), Adam(state.net->params().select(phase_groups(p)), config.optim));
  }
  return state;
}

LossInputs step_inputs(const Batch& batch, const Network& net, std::uint64_t seed, std::uint64_t step) {
  CounterRng rng = CounterRng(seed).fork(kStepStream + step);
  const auto n = static_cast<std::size_t>(batch.x.shape()[0]);
  const int dz = net.spec().latent_dim;
  LossInputs in;
  in.x = batch.x;
  in.cond = batch.y;
  in.prior_z = sample_prior(n, dz, rng);
  in.noise = Tensor::constant({static_cast<std::int64_t>(n), dz}, rng.normal(n * static_cast<std::size_t>(dz)));
  return in;
}

LossBundle train_step(const Batch& batch, const ExperimentConfig& config, TrainState& state,
                      const PhaseObserver& observer) {
  const Network& net = *state.net;
  const LossInputs inputs = step_inputs(batch, net, state.seed, state.step);
  const std::vector<Tensor> params = net.params().tensors(kAllGroups);
  const bool vae_decoder = config.variant == Variant::vae;

  LossBundle out;
  for (Phase phase : schedule_of(config)) {
    unsigned terms = 0;
    switch (phase) {
      case Phase::dis: terms = kDisTerm; break;
      case Phase::enc: terms = kEncTerm; break;
      case Phase::joint: terms = kEncTerm | kDisTerm; break;
      case Phase::dec: terms = vae_decoder ? kEncTerm : kDecTerm; break;
    }
    const GroupMask frozen = kAllGroups & ~phase_groups(phase);

    zero_grads(params);
    const LossBundle b = assemble(net, config.weights, inputs, terms, frozen);
    Tensor loss;
    switch (phase) {
      case Phase::dis: loss = b.l_dis; break;
      case Phase::enc: loss = b.l_enc; break;
      case Phase::joint: loss = add(b.l_enc, b.l_dis); break;
      case Phase::dec: loss = vae_decoder ? b.l_enc : b.l_dec; break;
    }
    if (!std::isfinite(loss.item())) {
      throw NumericError("non-finite " + to_string(phase) + " loss (" + std::to_string(loss.item()) + ") at step " +
                         std::to_string(state.step + 1));
    }
    backward(loss);
    state.optimizers.at(to_string(phase)).step();

    auto& c = out.components;
    if (phase == Phase::enc || phase == Phase::joint) {
      out.l_enc = b.l_enc;
      c.recons = b.components.recons;
      c.prior = b.components.prior;
    }
    if (phase == Phase::dis || phase == Phase::joint) {
      out.l_dis = b.l_dis;
      c.dis_real = b.components.dis_real;
      c.dis_fake_prior = b.components.dis_fake_prior;
      c.dis_fake_recon = b.components.dis_fake_recon;
    }
    if (phase == Phase::dec) {
      out.l_dec = loss;
      c.gan = b.components.gan;
      c.recons_dis = b.components.recons_dis;
    }
    if (observer) observer(phase, state);
  }
  zero_grads(params);
  ++state.step;
  return out;
}

std::pair<Shape, int> data_geometry(const ExperimentConfig& config) {
  if (config.is_image()) return {Shape{1, 28, 28}, 10};
  return {Shape{2}, config.ring_k};
}

namespace {

std::filesystem::path find_idx(const std::filesystem::path& dir, const std::string& stem) {
  for (const std::string& name : {stem + ".gz", stem}) {
    if (std::filesystem::exists(dir / name)) return dir / name;
  }
  throw DataError("missing " + (dir / (stem + ".gz")).string() + " (or uncompressed " + stem + ")");
}

ExperimentConfig resolved(ExperimentConfig c) {
  c.resolve();
  return c;
}

void truncate(Dataset& d, std::size_t n) {
  if (n == 0 || n >= d.size()) return;
  d.values.resize(n * static_cast<std::size_t>(d.sample_size()));
  d.labels.resize(n);
}

}  // namespace

DataSplits load_data(const ExperimentConfig& config) {
  DataSplits splits;
  if (config.is_image()) {
    const std::filesystem::path dir = config.data_dir;
    splits.train = load_idx(find_idx(dir, "train-images-idx3-ubyte"), find_idx(dir, "train-labels-idx1-ubyte"));
    splits.test = load_idx(find_idx(dir, "t10k-images-idx3-ubyte"), find_idx(dir, "t10k-labels-idx1-ubyte"));
    truncate(splits.train, static_cast<std::size_t>(std::max(config.train_limit, 0)));
  } else {
    if (config.ring_train < 1 || config.ring_test < 1) throw ConfigError("ring_train and ring_test must be >= 1");
    const MixtureSpec spec = config.mixture();
    splits.train = sample_mixture(spec, static_cast<std::size_t>(config.ring_train), kRingTrainSeed);
    splits.test = sample_mixture(spec, static_cast<std::size_t>(config.ring_test), kRingTestSeed);
  }
  return splits;
}

Tensor reconstruct(const Network& net, const Tensor& x, const Condition& cond) {
  const Shape zshape{x.shape()[0], net.spec().latent_dim};
  const LatentCode code = net.encode(x, cond, Tensor::zeros(zshape), kAllGroups);
  return net.decode(code.mu, cond, kAllGroups);
}

double heldout_recons(const Network& net, const Dataset& test, std::size_t limit) {
  const std::size_t n = std::min(limit == 0 ? test.size() : limit, test.size());
  if (n == 0) throw DataError("heldout_recons: empty test set");
  constexpr std::size_t kChunk = 250;
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    idx.resize(std::min(kChunk, n - begin));
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor x = test.gather(idx);
    Condition cond;
    if (net.spec().cond_dim > 0) cond = one_hot(test.gather_labels(idx), net.spec().cond_dim);
    const Tensor xr = reconstruct(net, x, cond);
    const auto a = x.data();
    const auto b = xr.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - b[i];
      total += d * d;
    }
  }
  return total / (static_cast<double>(n) * static_cast<double>(test.sample_size()));
}

Tensor generate(const Network& net, std::size_t n, std::uint64_t seed, std::optional<int> label) {
  const Tensor z = sample_prior(n, net.spec().latent_dim, seed);
  Condition cond;
  const int classes = net.spec().cond_dim;
  if (classes > 0) {
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = label ? *label : static_cast<int>(i % classes);
    cond = one_hot(labels, classes);
  } else if (label) {
    throw std::invalid_argument("generate: label given for an unconditional model");
  }
  return net.decode(z, cond, kAllGroups);
}

Trainer::Trainer(ExperimentConfig config)
    : config_(resolved(std::move(config))),
      data_(load_data(config_)),
      loader_(data_.train, static_cast<std::size_t>(config_.batch_size), config_.conditional() ? data_.train.classes : 0),
      state_(TrainState::create(config_, data_.train.sample_shape, data_.train.classes)) {}

Trainer::Trainer(ExperimentConfig config, const Checkpoint& resume)
    : config_(resolved(std::move(config))),
      data_(load_data(config_)),
      loader_(data_.train, static_cast<std::size_t>(config_.batch_size), config_.conditional() ? data_.train.classes : 0),
      state_(restore_state(resume, config_, data_.train.sample_shape, data_.train.classes)) {}

std::uint64_t Trainer::total_steps() const {
  return static_cast<std::uint64_t>(config_.epochs) * steps_per_epoch();
}

void Trainer::prepare_epoch(std::uint64_t epoch) {
  if (epoch == loader_epoch_) return;
  CounterRng rng = CounterRng(config_.seed).fork(kEpochStream + epoch);
  loader_.begin_epoch(rng);
  loader_epoch_ = epoch;
}

LossBundle Trainer::step() {
  const std::uint64_t spe = steps_per_epoch();
  prepare_epoch(state_.step / spe);
  const Batch batch = loader_.batch(static_cast<std::size_t>(state_.step % spe));
  return train_step(batch, config_, state_);
}

Probe Trainer::probe() const {
  Probe p;
  p.recons = heldout_recons(*state_.net, data_.test);
  p.modes = std::numeric_limits<double>::quiet_NaN();
  p.quality = std::numeric_limits<double>::quiet_NaN();
  if (!config_.is_image() && config_.probe_samples > 0) {
    const std::uint64_t seed = CounterRng(config_.seed).fork(kProbeStream).next_u64();
    const Tensor samples = generate(*state_.net, static_cast<std::size_t>(config_.probe_samples), seed);
    const ModeCoverage cov = mode_coverage(samples.data(), config_.mixture());
    p.modes = cov.modes;
    p.quality = cov.quality;
  }
  return p;
}

std::vector<std::string> Trainer::metric_columns() {
  std::vector<std::string> cols{"step", "epoch", "l_enc", "l_dis", "l_dec"};
  for (const auto& n : LossComponents::names()) cols.push_back(n);
  for (const char* n : {"probe_recons", "probe_modes", "probe_quality"}) cols.emplace_back(n);
  return cols;
}

namespace {

// Keeps the header and the rows up to `step` of an existing log.
void rewind_metrics(const std::filesystem::path& path, std::uint64_t step) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot reopen " + path.string() + " to resume");
  std::string kept;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      kept += line + "\n";
      header = false;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    if (std::stoull(line.substr(0, comma)) <= step) kept += line + "\n";
  }
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << kept;
}

}  // namespace

TrainResult Trainer::run(std::ostream* log) {
  namespace fs = std::filesystem;
  const fs::path dir = config_.out_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());

  TrainResult result;
  const fs::path echo = dir / "config.resolved.txt";
  {
    std::ofstream out(echo, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + echo.string());
    out << config_.to_text();
  }
  result.artifacts.push_back(echo);

  const fs::path metrics_path = dir / "metrics.csv";
  const bool resuming = state_.step > 0;
  if (resuming && fs::exists(metrics_path)) {
    rewind_metrics(metrics_path, state_.step);
  } else {
    std::ofstream out(metrics_path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + metrics_path.string());
    const auto cols = metric_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << "\n";
  }
  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::app);
  if (!metrics) throw DataError("cannot append to " + metrics_path.string());
  result.artifacts.push_back(metrics_path);

  const std::uint64_t spe = steps_per_epoch();
  const std::uint64_t total = total_steps();
  while (state_.step < total) {
    const LossBundle b = step();
    const std::uint64_t s = state_.step;
    const std::uint64_t epoch = (s - 1) / spe + 1;
    if (s % static_cast<std::uint64_t>(config_.log_every) == 0 || s == total) {
      const Probe p = probe();
      metrics << s << "," << epoch << "," << fmt(b.l_enc.item()) << "," << fmt(b.l_dis.item()) << ","
              << fmt(b.l_dec.item());
      for (real v : b.components.values()) metrics << "," << fmt(v);
      metrics << "," << fmt(p.recons) << "," << fmt(p.modes) << "," << fmt(p.quality) << "\n";
      metrics.flush();
      if (log) {
        *log << "step " << s << "/" << total << " l_enc " << fmt(b.l_enc.item()) << " l_dis "
             << fmt(b.l_dis.item()) << " l_dec " << fmt(b.l_dec.item()) << " heldout " << fmt(p.recons) << "\n";
      }
    }
    if (s % spe == 0 && config_.checkpoints) {
      const fs::path path = dir / ("checkpoint_epoch_" + std::to_string(s / spe) + ".ckpt");
      make_checkpoint(config_, state_).save(path);
      result.artifacts.push_back(path);
    }
  }

  result.final_checkpoint = make_checkpoint(config_, state_);
  const fs::path final_path = dir / "final.ckpt";
  result.final_checkpoint.save(final_path);
  result.artifacts.push_back(final_path);
  result.final_probe = probe();
  return result;
}

}  // namespace idvae
