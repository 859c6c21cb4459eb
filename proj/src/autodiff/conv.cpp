#include "idvae/tensor.hpp"

#include "node.hpp"

#include <algorithm>

namespace idvae {

using detail::grad_target;
using detail::make_result;
using detail::Node;

namespace {

// Geometry of a strided window sweep over an image of C x H x W producing a
// grid of out_h x out_w window positions.
struct Window {
  std::int64_t channels, height, width, kernel, stride, padding, out_h, out_w;

  std::int64_t rows() const { return channels * kernel * kernel; }
  std::int64_t grid() const { return out_h * out_w; }
};

// Output columns [lo, hi) whose input column ow * stride - padding + kj lies
// inside the image.
std::pair<std::int64_t, std::int64_t> valid_cols(const Window& w, std::int64_t kj) {
  const std::int64_t shift = kj - w.padding;
  std::int64_t lo = shift >= 0 ? 0 : (-shift + w.stride - 1) / w.stride;
  std::int64_t hi = (w.width - 1 - shift) < 0 ? 0 : (w.width - 1 - shift) / w.stride + 1;
  lo = std::min(lo, w.out_w);
  hi = std::clamp(hi, lo, w.out_w);
  return {lo, hi};
}

// img [N,C,H,W] -> col [C*k*k, N*out_h*out_w]
void im2col(const real* img, const Window& w, std::int64_t batch, real* col) {
  const std::int64_t cols = batch * w.grid();
  for (std::int64_t c = 0; c < w.channels; ++c) {
    for (std::int64_t ki = 0; ki < w.kernel; ++ki) {
      for (std::int64_t kj = 0; kj < w.kernel; ++kj) {
        real* dst = col + ((c * w.kernel + ki) * w.kernel + kj) * cols;
        const auto [lo, hi] = valid_cols(w, kj);
        for (std::int64_t n = 0; n < batch; ++n) {
          const real* plane = img + (n * w.channels + c) * w.height * w.width;
          for (std::int64_t oh = 0; oh < w.out_h; ++oh, dst += w.out_w) {
            const std::int64_t ih = oh * w.stride - w.padding + ki;
            if (ih < 0 || ih >= w.height) {
              std::fill_n(dst, w.out_w, 0.0f);
              continue;
            }
            const std::int64_t base = ih * w.width - w.padding + kj;
            std::fill_n(dst, lo, 0.0f);
            for (std::int64_t ow = lo; ow < hi; ++ow) dst[ow] = plane[base + ow * w.stride];
            std::fill(dst + hi, dst + w.out_w, 0.0f);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters col back into img (accumulating).
void col2im_add(const real* col, const Window& w, std::int64_t batch, real* img) {
  const std::int64_t cols = batch * w.grid();
  for (std::int64_t c = 0; c < w.channels; ++c) {
    for (std::int64_t ki = 0; ki < w.kernel; ++ki) {
      for (std::int64_t kj = 0; kj < w.kernel; ++kj) {
        const real* src = col + ((c * w.kernel + ki) * w.kernel + kj) * cols;
        const auto [lo, hi] = valid_cols(w, kj);
        for (std::int64_t n = 0; n < batch; ++n) {
          real* plane = img + (n * w.channels + c) * w.height * w.width;
          for (std::int64_t oh = 0; oh < w.out_h; ++oh, src += w.out_w) {
            const std::int64_t ih = oh * w.stride - w.padding + ki;
            if (ih < 0 || ih >= w.height) continue;
            const std::int64_t base = ih * w.width - w.padding + kj;
            for (std::int64_t ow = lo; ow < hi; ++ow) plane[base + ow * w.stride] += src[ow];
          }
        }
      }
    }
  }
}

// [N,C,P] <-> [C,N*P]
void nchw_to_cm(const real* src, std::int64_t batch, std::int64_t channels, std::int64_t plane,
                real* dst) {
  for (std::int64_t n = 0; n < batch; ++n)
    for (std::int64_t c = 0; c < channels; ++c)
      std::copy_n(src + (n * channels + c) * plane, plane, dst + (c * batch + n) * plane);
}

void cm_to_nchw_add(const real* src, std::int64_t batch, std::int64_t channels, std::int64_t plane,
                    real* dst) {
  for (std::int64_t n = 0; n < batch; ++n)
    for (std::int64_t c = 0; c < channels; ++c) {
      const real* s = src + (c * batch + n) * plane;
      real* d = dst + (n * channels + c) * plane;
      for (std::int64_t p = 0; p < plane; ++p) d[p] += s[p];
    }
}

bool has_bias(const Tensor& bias) { return bias.rank() > 0; }

void check_bias(const std::string& op, const Tensor& bias, std::int64_t channels) {
  if (has_bias(bias) && (bias.rank() != 1 || bias.dim(0) != channels)) {
    throw ShapeError(op, bias.shape(), Shape{channels});
  }
}

void add_bias(real* out, const real* bias, std::int64_t batch, std::int64_t channels, std::int64_t plane) {
  for (std::int64_t n = 0; n < batch; ++n)
    for (std::int64_t c = 0; c < channels; ++c) {
      real* d = out + (n * channels + c) * plane;
      for (std::int64_t p = 0; p < plane; ++p) d[p] += bias[c];
    }
}

void bias_grad(const real* g, std::int64_t batch, std::int64_t channels, std::int64_t plane, real* gb) {
  for (std::int64_t n = 0; n < batch; ++n)
    for (std::int64_t c = 0; c < channels; ++c) {
      const real* s = g + (n * channels + c) * plane;
      real acc = 0.0f;
      for (std::int64_t p = 0; p < plane; ++p) acc += s[p];
      gb[c] += acc;
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(1) || weight.dim(2) != weight.dim(3)) {
    throw ShapeError("conv2d", x.shape(), weight.shape());
  }
  const std::int64_t batch = x.dim(0);
  const std::int64_t out_c = weight.dim(0);
  Window w{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), stride, padding, 0, 0};
  w.out_h = (w.height + 2 * padding - w.kernel) / stride + 1;
  w.out_w = (w.width + 2 * padding - w.kernel) / stride + 1;
  if (w.out_h <= 0 || w.out_w <= 0) throw ShapeError("conv2d", x.shape(), weight.shape());
  check_bias("conv2d", bias, out_c);

  const std::int64_t cols = batch * w.grid();
  std::vector<real> col(static_cast<std::size_t>(w.rows() * cols));
  im2col(x.data().data(), w, batch, col.data());
  ConstMatrixMap wm(weight.data().data(), out_c, w.rows());
  RowMatrixX out_cm = wm * ConstMatrixMap(col.data(), w.rows(), cols);

  std::vector<real> out(static_cast<std::size_t>(batch * out_c * w.grid()), 0.0f);
  cm_to_nchw_add(out_cm.data(), batch, out_c, w.grid(), out.data());
  if (has_bias(bias)) add_bias(out.data(), bias.data().data(), batch, out_c, w.grid());

  std::vector<Tensor> inputs{x, weight};
  if (has_bias(bias)) inputs.push_back(bias);
  return make_result(
      "conv2d", {batch, out_c, w.out_h, w.out_w}, std::move(out), inputs,
      [w, batch, out_c, cols, col = std::move(col)](Node& self) {
        Node& nx = *self.inputs[0];
        Node& nw = *self.inputs[1];
        std::vector<real> g_cm(static_cast<std::size_t>(out_c * cols));
        nchw_to_cm(self.grad.data(), batch, out_c, w.grid(), g_cm.data());
        ConstMatrixMap g(g_cm.data(), out_c, cols);
        if (real* gw = grad_target(nw)) {
          MatrixMap(gw, out_c, w.rows()).noalias() += g * ConstMatrixMap(col.data(), w.rows(), cols).transpose();
        }
        if (real* gx = grad_target(nx)) {
          RowMatrixX gcol = ConstMatrixMap(nw.in(), out_c, w.rows()).transpose() * g;
          col2im_add(gcol.data(), w, batch, gx);
        }
        if (self.inputs.size() > 2) {
          if (real* gb = grad_target(*self.inputs[2])) bias_grad(self.grad.data(), batch, out_c, w.grid(), gb);
        }
      });
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                        int padding) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(0) != x.dim(1) || weight.dim(2) != weight.dim(3)) {
    throw ShapeError("conv2d_transpose", x.shape(), weight.shape());
  }
  const std::int64_t batch = x.dim(0);
  const std::int64_t in_c = x.dim(1);
  const std::int64_t out_c = weight.dim(1);
  const std::int64_t kernel = weight.dim(2);
  const std::int64_t out_h = (x.dim(2) - 1) * stride - 2 * padding + kernel;
  const std::int64_t out_w = (x.dim(3) - 1) * stride - 2 * padding + kernel;
  if (out_h <= 0 || out_w <= 0) throw ShapeError("conv2d_transpose", x.shape(), weight.shape());
  check_bias("conv2d_transpose", bias, out_c);

  // The window sweeps the output image; its grid is the input image.
  const Window w{out_c, out_h, out_w, kernel, stride, padding, x.dim(2), x.dim(3)};
  const std::int64_t cols = batch * w.grid();

  std::vector<real> x_cm(static_cast<std::size_t>(in_c * cols));
  nchw_to_cm(x.data().data(), batch, in_c, w.grid(), x_cm.data());
  ConstMatrixMap wm(weight.data().data(), in_c, w.rows());
  RowMatrixX col = wm.transpose() * ConstMatrixMap(x_cm.data(), in_c, cols);

  std::vector<real> out(static_cast<std::size_t>(batch * out_c * out_h * out_w), 0.0f);
  col2im_add(col.data(), w, batch, out.data());
  if (has_bias(bias)) add_bias(out.data(), bias.data().data(), batch, out_c, out_h * out_w);

  std::vector<Tensor> inputs{x, weight};
  if (has_bias(bias)) inputs.push_back(bias);
  return make_result(
      "conv2d_transpose", {batch, out_c, out_h, out_w}, std::move(out), inputs,
      [w, batch, in_c, out_c, cols, x_cm = std::move(x_cm)](Node& self) {
        Node& nx = *self.inputs[0];
        Node& nw = *self.inputs[1];
        std::vector<real> gcol(static_cast<std::size_t>(w.rows() * cols));
        im2col(self.grad.data(), w, batch, gcol.data());
        ConstMatrixMap g(gcol.data(), w.rows(), cols);
        if (real* gw = grad_target(nw)) {
          MatrixMap(gw, in_c, w.rows()).noalias() += ConstMatrixMap(x_cm.data(), in_c, cols) * g.transpose();
        }
        if (real* gx = grad_target(nx)) {
          RowMatrixX gx_cm = ConstMatrixMap(nw.in(), in_c, w.rows()) * g;
          cm_to_nchw_add(gx_cm.data(), batch, in_c, w.grid(), gx);
        }
        if (self.inputs.size() > 2) {
          if (real* gb = grad_target(*self.inputs[2])) {
            bias_grad(self.grad.data(), batch, out_c, w.height * w.width, gb);
          }
        }
      });
}

}  // namespace idvae
