#include "idvae/data.hpp"

#include "idvae/nets.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numbers>
#include <numeric>

namespace idvae {

MixtureSpec MixtureSpec::ring(int k, double radius, double sigma) {
  MixtureSpec spec;
  spec.k = k;
  spec.radius = radius;
  spec.sigma = sigma;
  for (int i = 0; i < k; ++i) {
    const double angle = 2.0 * std::numbers::pi * i / k;
    spec.centers.push_back({radius * std::cos(angle), radius * std::sin(angle)});
  }
  return spec;
}

void MixtureSpec::validate() const {
  if (k < 1 || static_cast<int>(centers.size()) != k) throw std::invalid_argument("MixtureSpec: need k >= 1 centers");
  if (!(sigma >= 0.0)) throw std::invalid_argument("MixtureSpec: sigma must be non-negative");
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j)
      if (centers[i] == centers[j]) throw std::invalid_argument("MixtureSpec: centers must be distinct");
}

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
  const auto width = static_cast<std::size_t>(sample_size());
  std::vector<real> out(indices.size() * width);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(indices[i] * width), width, out.begin() + i * width);
  }
  Shape shape{static_cast<std::int64_t>(indices.size())};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor::constant(std::move(shape), std::move(out));
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels[i]);
  return out;
}

Tensor Dataset::all() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), 0);
  return gather(idx);
}

Dataset sample_mixture(const MixtureSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  CounterRng rng(seed);
  Dataset out;
  out.sample_shape = {2};
  out.classes = spec.k;
  out.values.resize(2 * n);
  out.labels.resize(n);
  std::vector<real> noise(2);
  for (std::size_t i = 0; i < n; ++i) {
    const int mode = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.k)));
    rng.fill_normal(noise);
    out.labels[i] = mode;
    out.values[2 * i] = static_cast<real>(spec.centers[mode][0] + spec.sigma * noise[0]);
    out.values[2 * i + 1] = static_cast<real>(spec.centers[mode][1] + spec.sigma * noise[1]);
  }
  return out;
}

real byte_to_unit(std::uint8_t v) { return static_cast<real>(v) / 255.0f; }

std::uint8_t unit_to_byte(real v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, real{0}, real{1}) * 255.0f));
}

namespace {

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

struct GzCloser {
  void operator()(gzFile f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

class IdxReader {
 public:
  explicit IdxReader(const std::filesystem::path& path) : path_(path), file_(gzopen(path.c_str(), "rb")) {
    if (!file_) throw DataError("cannot open " + path.string());
  }

  void read(void* dst, std::size_t n, const char* what) {
    auto* out = static_cast<unsigned char*>(dst);
    std::size_t done = 0;
    while (done < n) {
      const auto chunk = static_cast<unsigned>(std::min<std::size_t>(n - done, 1u << 30));
      const int got = gzread(file_.get(), out + done, chunk);
      if (got <= 0) throw DataError(path_.string() + ": truncated while reading " + what);
      done += static_cast<std::size_t>(got);
    }
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    read(b, 4, what);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  GzHandle file_;
};

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  IdxReader img(images);
  const auto img_magic = img.u32("magic");
  if (img_magic != 0x00000803u) {
    throw DataError(images.string() + ": bad IDX image magic 0x" + hex32(img_magic));
  }
  const std::uint32_t n = img.u32("count");
  const std::uint32_t h = img.u32("rows");
  const std::uint32_t w = img.u32("cols");

  IdxReader lab(labels);
  const auto lab_magic = lab.u32("magic");
  if (lab_magic != 0x00000801u) {
    throw DataError(labels.string() + ": bad IDX label magic 0x" + hex32(lab_magic));
  }
  const std::uint32_t n_labels = lab.u32("count");
  if (n_labels != n) {
    throw DataError("image/label count mismatch: " + std::to_string(n) + " images vs " + std::to_string(n_labels) +
                    " labels");
  }

  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(n) * h * w);
  img.read(pixels.data(), pixels.size(), "pixels");
  std::vector<std::uint8_t> raw_labels(n);
  lab.read(raw_labels.data(), raw_labels.size(), "labels");

  Dataset out;
  out.sample_shape = {1, h, w};
  out.values.resize(pixels.size());
  std::transform(pixels.begin(), pixels.end(), out.values.begin(), byte_to_unit);
  out.labels.assign(raw_labels.begin(), raw_labels.end());
  for (int l : out.labels) {
    if (l > 9) throw DataError(labels.string() + ": label " + std::to_string(l) + " outside 0-9");
  }
  out.classes = 10;
  return out;
}

Tensor sample_prior(std::size_t n, int latent_dim, CounterRng& rng) {
  if (n < 1 || latent_dim < 1) throw std::invalid_argument("sample_prior: n and d_z must be >= 1");
  return Tensor::constant({static_cast<std::int64_t>(n), latent_dim},
                          rng.normal(n * static_cast<std::size_t>(latent_dim)));
}

Tensor sample_prior(std::size_t n, int latent_dim, std::uint64_t seed) {
  CounterRng rng(seed);
  return sample_prior(n, latent_dim, rng);
}

BatchLoader::BatchLoader(const Dataset& data, std::size_t batch_size, int cond_dim)
    : data_(&data), batch_size_(batch_size), cond_dim_(cond_dim), order_(data.size()) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (data.size() == 0) throw DataError("empty dataset");
  std::iota(order_.begin(), order_.end(), 0);
}

std::size_t BatchLoader::batches_per_epoch() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

void BatchLoader::begin_epoch(CounterRng& rng) {
  std::iota(order_.begin(), order_.end(), 0);
  rng.shuffle(order_);
}

Batch BatchLoader::batch(std::size_t index) const {
  const std::size_t begin = index * batch_size_;
  const std::size_t end = std::min(begin + batch_size_, order_.size());
  const std::span<const std::size_t> idx(order_.data() + begin, end - begin);
  Batch b;
  b.x = data_->gather(idx);
  b.labels = data_->gather_labels(idx);
  if (cond_dim_ > 0) b.y = one_hot(b.labels, cond_dim_);
  return b;
}

}  // namespace idvae
