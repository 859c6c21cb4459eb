#include "idvae/image.hpp"

#include "idvae/data.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

namespace idvae {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.width < 1 || image.height < 1 || (image.channels != 1 && image.channels != 3) ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    throw std::invalid_argument("write_png: inconsistent image buffer");
  }
  File file(std::fopen(path.c_str(), "wb"));
  if (!file) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("error while encoding " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(image.width) * image.channels;
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + y * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) throw DataError("cannot read PNG " + path.string());
  const bool gray = !(img.format & PNG_FORMAT_FLAG_COLOR);
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.channels = gray ? 1 : 3;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError("cannot decode PNG " + path.string());
  }
  return out;
}

GridLayout square_layout(std::size_t n) {
  if (n == 0) return {};
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)) - 1e-9));
  return {static_cast<int>((n + cols - 1) / cols), cols};
}

Image tile_grid(const Tensor& images, GridLayout layout, int pad) {
  if (images.rank() != 4) throw ShapeError("tile_grid", "expected [n, C, H, W]");
  const auto n = images.shape()[0];
  const auto c = images.shape()[1];
  const auto h = images.shape()[2];
  const auto w = images.shape()[3];
  if (c != 1 && c != 3) throw ShapeError("tile_grid", "1 or 3 channels supported");
  if (static_cast<std::int64_t>(layout.rows) * layout.cols < n) throw std::invalid_argument("tile_grid: layout too small");
  Image out;
  out.channels = static_cast<int>(c);
  out.width = static_cast<int>(layout.cols * (w + pad) + pad);
  out.height = static_cast<int>(layout.rows * (h + pad) + pad);
  out.pixels.assign(static_cast<std::size_t>(out.width) * out.height * out.channels, 0);
  const auto v = images.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const auto top = pad + (i / layout.cols) * (h + pad);
    const auto left = pad + (i % layout.cols) * (w + pad);
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          const real value = v[((i * c + ch) * h + y) * w + x];
          out.pixels[((top + y) * out.width + left + x) * c + ch] = unit_to_byte(value);
        }
  }
  return out;
}

Image scatter_plot(std::span<const real> points, double extent, int size) {
  Image out;
  out.width = out.height = size;
  out.channels = 1;
  out.pixels.assign(static_cast<std::size_t>(size) * size, 255);
  for (std::size_t i = 0; i + 1 < points.size(); i += 2) {
    const double fx = (points[i] + extent) / (2 * extent);
    const double fy = (extent - points[i + 1]) / (2 * extent);
    const int px = static_cast<int>(std::floor(fx * (size - 1) + 0.5));
    const int py = static_cast<int>(std::floor(fy * (size - 1) + 0.5));
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int x = px + dx;
        const int y = py + dy;
        if (x >= 0 && y >= 0 && x < size && y < size) out.pixels[static_cast<std::size_t>(y) * size + x] = 40;
      }
  }
  return out;
}

void write_points_csv(const std::filesystem::path& path, std::span<const real> points, std::span<const int> labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << (labels.empty() ? "x,y\n" : "x,y,label\n");
  char buf[64];
  for (std::size_t i = 0; i + 1 < points.size(); i += 2) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g", points[i], points[i + 1]);
    out << buf;
    if (!labels.empty()) out << "," << labels[i / 2];
    out << "\n";
  }
}

}  // namespace idvae
