// idvae: train, sample, reconstruct, grid, eval and inspect.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 config error, 3 data error,
// 4 numeric failure.

#include "idvae/config.hpp"
#include "idvae/eval.hpp"
#include "idvae/image.hpp"
#include "idvae/trainer.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace idvae;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string variant, dataset, schedule, out;
  int epochs = -1;
  long long seed = -1;
  std::string resume;

  std::vector<std::string> checkpoints;
  int n = 0;
  int label = -1;
  int repeats = 3;
  int n_samples = 0;
  int expert_epochs = 3;
  long long expert_seed = 7;
};

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ExperimentConfig build_config(const Options& o) {
  KeyValues pairs;
  if (!o.config_path.empty()) pairs = ExperimentConfig::parse_text(read_file(o.config_path));
  if (!o.variant.empty()) pairs.emplace_back("variant", o.variant);
  if (!o.dataset.empty()) pairs.emplace_back("dataset", o.dataset);
  if (!o.schedule.empty()) pairs.emplace_back("schedule", o.schedule);
  if (o.epochs >= 0) pairs.emplace_back("epochs", std::to_string(o.epochs));
  if (o.seed >= 0) pairs.emplace_back("seed", std::to_string(o.seed));
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    pairs.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  ExperimentConfig config = ExperimentConfig::from_pairs(pairs);
  const bool out_given = !o.out.empty() || std::any_of(pairs.begin(), pairs.end(),
                                                        [](const auto& p) { return p.first == "out_dir"; });
  if (!o.out.empty()) {
    config.out_dir = o.out;
  } else if (!out_given) {
    config.out_dir = env_or("IDVAE_OUT_DIR", config.out_dir);
  }
  config.resolve();
  return config;
}

fs::path output_dir(const Options& o, const std::string& fallback) {
  const fs::path dir = !o.out.empty() ? fs::path(o.out) : fs::path(env_or("IDVAE_OUT_DIR", fallback));
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void list_artifacts(const std::vector<fs::path>& paths) {
  for (const auto& p : paths) std::cout << "wrote " << p.string() << "\n";
}

struct Loaded {
  ExperimentConfig config;
  std::unique_ptr<Network> net;
};

Loaded load_model(const std::string& path) {
  const Checkpoint ckpt = Checkpoint::load(path);
  Loaded l;
  l.config = checkpoint_config(ckpt);
  const auto [shape, classes] = data_geometry(l.config);
  l.net = load_network(ckpt, shape, classes);
  return l;
}

int run_train(const Options& o) {
  ExperimentConfig config = build_config(o);
  std::unique_ptr<Trainer> trainer;
  if (!o.resume.empty()) {
    trainer = std::make_unique<Trainer>(config, Checkpoint::load(o.resume));
  } else {
    trainer = std::make_unique<Trainer>(config);
  }
  std::cerr << "training " << to_string(config.variant) << " on " << config.dataset << ": "
            << trainer->total_steps() << " steps (" << trainer->steps_per_epoch() << " per epoch)\n";
  const TrainResult result = trainer->run(&std::cerr);
  list_artifacts(result.artifacts);
  return 0;
}

void emit_points(const fs::path& dir, const std::string& stem, const Tensor& points, const ExperimentConfig& config,
                 std::vector<fs::path>& written) {
  const fs::path csv = dir / (stem + ".csv");
  write_points_csv(csv, points.data());
  written.push_back(csv);
  const fs::path png = dir / (stem + ".png");
  write_png(png, scatter_plot(points.data(), 1.5 * config.ring_radius));
  written.push_back(png);
}

int run_sample(const Options& o) {
  const Loaded m = load_model(o.checkpoints.at(0));
  const int n = o.n > 0 ? o.n : 64;
  std::optional<int> label;
  if (o.label >= 0) {
    if (m.net->spec().cond_dim == 0) throw ConfigError("--label given but the checkpoint is not conditional");
    if (o.label >= m.net->spec().cond_dim) throw ConfigError("--label out of range");
    label = o.label;
  }
  const std::uint64_t seed = o.seed >= 0 ? static_cast<std::uint64_t>(o.seed) : m.config.seed;
  const Tensor x = generate(*m.net, static_cast<std::size_t>(n), seed, label);
  const fs::path dir = output_dir(o, m.config.out_dir);
  std::vector<fs::path> written;
  if (m.config.is_image()) {
    const fs::path png = dir / "samples.png";
    write_png(png, tile_grid(x, square_layout(static_cast<std::size_t>(n))));
    written.push_back(png);
  } else {
    emit_points(dir, "samples", x, m.config, written);
  }
  list_artifacts(written);
  return 0;
}

int run_reconstruct(const Options& o) {
  const Loaded m = load_model(o.checkpoints.at(0));
  const DataSplits data = load_data(m.config);
  const auto n = std::min<std::size_t>(o.n > 0 ? static_cast<std::size_t>(o.n) : 32, data.test.size());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const Tensor x = data.test.gather(idx);
  Condition cond;
  if (m.net->spec().cond_dim > 0) cond = one_hot(data.test.gather_labels(idx), m.net->spec().cond_dim);
  const Tensor xr = reconstruct(*m.net, x, cond);
  const fs::path dir = output_dir(o, m.config.out_dir);
  std::vector<fs::path> written;
  // Originals and reconstructions interleaved.
  Shape shape = x.shape();
  shape[0] = static_cast<std::int64_t>(2 * n);
  const auto row = static_cast<std::size_t>(data.test.sample_size());
  std::vector<real> tiles(2 * n * row);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(x.data().begin() + i * row, row, tiles.begin() + 2 * i * row);
    std::copy_n(xr.data().begin() + i * row, row, tiles.begin() + (2 * i + 1) * row);
  }
  const Tensor pairs = Tensor::constant(shape, std::move(tiles));
  if (m.config.is_image()) {
    const int cols = 2 * square_layout(n).cols;
    const fs::path png = dir / "reconstructions.png";
    write_png(png, tile_grid(pairs, {static_cast<int>((2 * n + cols - 1) / cols), cols}));
    written.push_back(png);
  } else {
    emit_points(dir, "reconstructions", pairs, m.config, written);
  }
  list_artifacts(written);
  return 0;
}

int run_grid(const Options& o) {
  const Loaded m = load_model(o.checkpoints.at(0));
  const int classes = m.net->spec().cond_dim;
  if (classes == 0) throw ConfigError("grid needs a conditional checkpoint (variant c_idvae)");
  const int per_label = o.n > 0 ? o.n : 8;
  const std::uint64_t seed = o.seed >= 0 ? static_cast<std::uint64_t>(o.seed) : m.config.seed;
  std::vector<Tensor> rows;
  for (int label = 0; label < classes; ++label) {
    rows.push_back(generate(*m.net, static_cast<std::size_t>(per_label), seed, label));
  }
  const Tensor all = concat(rows, 0);
  const fs::path dir = output_dir(o, m.config.out_dir);
  std::vector<fs::path> written;
  if (m.config.is_image()) {
    const fs::path png = dir / "conditional_grid.png";
    write_png(png, tile_grid(all, {classes, per_label}));
    written.push_back(png);
  } else {
    std::vector<int> labels;
    for (int label = 0; label < classes; ++label) labels.insert(labels.end(), per_label, label);
    const fs::path csv = dir / "conditional_samples.csv";
    write_points_csv(csv, all.data(), labels);
    written.push_back(csv);
  }
  list_artifacts(written);
  return 0;
}

int run_eval(const Options& o) {
  // Every checkpoint is loaded before anything is written.
  std::vector<Loaded> models;
  for (const auto& path : o.checkpoints) models.push_back(load_model(path));
  const ExperimentConfig& base = models.front().config;
  for (const auto& m : models) {
    if (m.config.dataset != base.dataset) throw ConfigError("eval: checkpoints use different datasets");
  }
  const DataSplits data = load_data(base);

  std::vector<std::string> names;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < o.checkpoints.size(); ++i) {
    const fs::path p(o.checkpoints[i]);
    std::string name = p.has_parent_path() ? p.parent_path().filename().string() + "/" + p.stem().string()
                                           : p.stem().string();
    if (!seen.insert(name).second) name += "#" + std::to_string(i);
    seen.insert(name);
    names.push_back(name);
  }

  ExpertBudget budget;
  budget.epochs = o.expert_epochs;
  const auto es = static_cast<std::uint64_t>(o.expert_seed);
  std::vector<std::unique_ptr<NetworkExpert>> experts;
  if (base.is_image()) {
    experts.push_back(train_expert(data.train, data.test, es, "cnn_a", budget));
    experts.push_back(train_expert(data.train, data.test, es + 1, "cnn_b", budget));
  } else {
    experts.push_back(train_expert(data.train, data.test, es, "mlp", budget));
    experts.push_back(train_expert(data.train, data.test, es + 1, "mlp", budget));
  }
  experts.push_back(train_expert(data.train, data.test, es + 2, "random_projection", budget));
  std::vector<const Expert*> panel;
  for (const auto& e : experts) {
    std::cerr << "expert " << e->id() << " held-out accuracy " << e->heldout_accuracy << "\n";
    panel.push_back(e.get());
  }

  const std::size_t n = o.n_samples > 0 ? static_cast<std::size_t>(o.n_samples) : std::min<std::size_t>(data.test.size(), 1000);
  std::vector<std::size_t> idx(std::min(n, data.test.size()));
  std::iota(idx.begin(), idx.end(), 0);
  const Tensor observed = data.test.gather(idx);

  std::vector<SampleSource> sources;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const Network* net = models[i].net.get();
    sources.push_back({names[i], [net](std::size_t count, std::uint64_t seed) { return generate(*net, count, seed); }});
  }
  const std::uint64_t seed = o.seed >= 0 ? static_cast<std::uint64_t>(o.seed) : 1;
  EvalReport report = ensemble_eval(sources, panel, observed, n, o.repeats, seed);
  for (std::size_t i = 0; i < models.size(); ++i) {
    report.recons[names[i]] = heldout_recons(*models[i].net, data.test, 0);
    if (!base.is_image()) {
      const Tensor pts = generate(*models[i].net, 2000, seed);
      const ModeCoverage cov = mode_coverage(pts.data(), base.mixture());
      report.coverage[names[i]] = {cov.modes, cov.quality};
    }
  }

  const fs::path dir = output_dir(o, "runs/eval");
  const fs::path csv = dir / "eval.csv";
  const fs::path table = dir / "eval.txt";
  {
    std::ofstream out(csv, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + csv.string());
    report.write_csv(out);
    std::ofstream txt(table, std::ios::binary | std::ios::trunc);
    if (!txt) throw DataError("cannot write " + table.string());
    report.print_table(txt);
  }
  report.print_table(std::cout);
  list_artifacts({csv, table});
  return 0;
}

int run_inspect(const Options& o) {
  const Checkpoint ckpt = Checkpoint::load(o.checkpoints.at(0));
  std::cout << "step " << ckpt.step << "\n";
  for (const auto& [k, v] : ckpt.config) std::cout << "config " << k << " = " << v << "\n";
  for (const auto& [name, t] : ckpt.optimizer_steps) std::cout << "optimizer " << name << " t=" << t << "\n";
  std::size_t total = 0;
  for (const auto& t : ckpt.tensors) {
    std::cout << "tensor " << t.name << " [";
    for (std::size_t i = 0; i < t.shape.size(); ++i) std::cout << (i ? "," : "") << t.shape[i];
    std::cout << "]\n";
    total += t.values.size();
  }
  std::cout << ckpt.tensors.size() << " tensors, " << total << " values\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("IDVAE_THREADS")) Eigen::setNbThreads(std::max(1, std::atoi(threads)));

  CLI::App app{"Hybrid VAE/GAN with a shared encoder-discriminator trunk"};
  app.require_subcommand(1);
  Options o;

  const auto add_config_flags = [&o](CLI::App* cmd) {
    cmd->add_option("--config", o.config_path, "key = value config file");
    cmd->add_option("--set", o.overrides, "override a config key (key=value), repeatable");
    cmd->add_option("--variant", o.variant, "vae | idvae | idvae_r | no_sharing | c_idvae");
    cmd->add_option("--dataset", o.dataset, "ring2d | mnist");
    cmd->add_option("--schedule", o.schedule, "dis_first | enc_first | joint");
    cmd->add_option("--epochs", o.epochs);
    cmd->add_option("--seed", o.seed);
    cmd->add_option("--out", o.out, "output directory (default: $IDVAE_OUT_DIR or out_dir)");
  };

  auto* train = app.add_subcommand("train", "train a model");
  add_config_flags(train);
  train->add_option("--resume", o.resume, "continue from a checkpoint")->check(CLI::ExistingFile);

  auto* sample = app.add_subcommand("sample", "decode prior samples");
  auto* recon = app.add_subcommand("reconstruct", "reconstruct held-out examples");
  auto* grid = app.add_subcommand("grid", "conditional grid, one row per label");
  auto* inspect = app.add_subcommand("inspect", "print a checkpoint manifest");
  for (auto* cmd : {sample, recon, grid, inspect}) {
    cmd->add_option("--checkpoint", o.checkpoints)->required()->expected(1);
  }
  for (auto* cmd : {sample, recon, grid}) {
    cmd->add_option("--n", o.n, "number of samples (per label for grid)");
    cmd->add_option("--out", o.out);
  }
  for (auto* cmd : {sample, grid}) cmd->add_option("--seed", o.seed);
  sample->add_option("--label", o.label, "condition on this label");

  auto* eval = app.add_subcommand("eval", "Frechet distances under several experts");
  eval->add_option("--checkpoint", o.checkpoints, "checkpoints to compare")->required();
  eval->add_option("--repeats", o.repeats)->check(CLI::PositiveNumber);
  eval->add_option("--n-samples", o.n_samples);
  eval->add_option("--expert-epochs", o.expert_epochs);
  eval->add_option("--expert-seed", o.expert_seed);
  eval->add_option("--seed", o.seed);
  eval->add_option("--out", o.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return run_train(o);
    if (*sample) return run_sample(o);
    if (*recon) return run_reconstruct(o);
    if (*grid) return run_grid(o);
    if (*eval) return run_eval(o);
    if (*inspect) return run_inspect(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
