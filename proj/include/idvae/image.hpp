#pragma once

// PNG output for sample grids and 2-D scatter plots.

#include "idvae/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace idvae {

/// 8-bit gray (channels = 1) or RGB (channels = 3), row-major.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;
};

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

struct GridLayout {
  int rows = 0;
  int cols = 0;
};

/// Near-square layout: cols = ceil(sqrt(n)).
GridLayout square_layout(std::size_t n);

/// Tiles [n, C, H, W] images (values in [0, 1], C = 1 or 3) row-major into a
/// grid separated by `pad` black pixels.
Image tile_grid(const Tensor& images, GridLayout layout, int pad = 2);

/// White canvas with one dark dot per point, framing [-extent, extent]^2.
Image scatter_plot(std::span<const real> points, double extent, int size = 512);

void write_points_csv(const std::filesystem::path& path, std::span<const real> points,
                      std::span<const int> labels = {});

}  // namespace idvae
