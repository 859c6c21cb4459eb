#include "idvae/tensor.hpp"

#include "node.hpp"

#include <algorithm>
#include <cmath>

namespace idvae {

using detail::grad_target;
using detail::make_result;
using detail::Node;

namespace {

// Index maps from an output element to the contributing element of each
// broadcast operand. Empty vectors mean identity (operand already has the
// output shape).
struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> a_index;
  std::vector<std::int64_t> b_index;
};

Shape broadcast_shape(const std::string& op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) throw ShapeError(op, a, b);
    out[i] = da == 1 ? db : da;
  }
  return out;
}

std::vector<std::int64_t> source_index(const Shape& out, const Shape& in) {
  const std::int64_t n = numel(out);
  std::vector<std::int64_t> index(static_cast<std::size_t>(n));
  const std::size_t rank = out.size();
  const std::size_t offset = rank - in.size();
  std::vector<std::int64_t> in_stride(rank, 0);
  std::int64_t stride = 1;
  for (std::size_t i = rank; i-- > offset;) {
    const auto extent = in[i - offset];
    in_stride[i] = extent == 1 ? 0 : stride;
    stride *= extent;
  }
  std::vector<std::int64_t> counter(rank, 0);
  std::int64_t src = 0;
  for (std::int64_t k = 0; k < n; ++k) {
    index[static_cast<std::size_t>(k)] = src;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      src += in_stride[d];
      if (counter[d] < out[d]) break;
      src -= in_stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return index;
}

BroadcastPlan plan(const std::string& op, const Shape& a, const Shape& b) {
  BroadcastPlan p;
  p.out = broadcast_shape(op, a, b);
  if (a != p.out) p.a_index = source_index(p.out, a);
  if (b != p.out) p.b_index = source_index(p.out, b);
  return p;
}

inline std::int64_t at(const std::vector<std::int64_t>& index, std::int64_t k) {
  return index.empty() ? k : index[static_cast<std::size_t>(k)];
}

// f(a, b) -> value; da(a, b, g), db(a, b, g) -> partials times upstream g.
template <typename F, typename DA, typename DB>
Tensor binary(const std::string& op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  auto p = plan(op, a.shape(), b.shape());
  const std::int64_t n = numel(p.out);
  std::vector<real> out(static_cast<std::size_t>(n));
  const real* x = a.data().data();
  const real* y = b.data().data();
  for (std::int64_t k = 0; k < n; ++k) out[k] = f(x[at(p.a_index, k)], y[at(p.b_index, k)]);
  auto a_index = std::move(p.a_index);
  auto b_index = std::move(p.b_index);
  return make_result(op, p.out, std::move(out), {a, b},
                     [a_index = std::move(a_index), b_index = std::move(b_index), n, da, db](Node& self) {
                       Node& na = *self.inputs[0];
                       Node& nb = *self.inputs[1];
                       const real* x = na.in();
                       const real* y = nb.in();
                       const real* g = self.grad.data();
                       if (real* ga = grad_target(na)) {
                         for (std::int64_t k = 0; k < n; ++k) {
                           const auto i = at(a_index, k);
                           const auto j = at(b_index, k);
                           ga[i] += da(x[i], y[j], g[k]);
                         }
                       }
                       if (real* gb = grad_target(nb)) {
                         for (std::int64_t k = 0; k < n; ++k) {
                           const auto i = at(a_index, k);
                           const auto j = at(b_index, k);
                           gb[j] += db(x[i], y[j], g[k]);
                         }
                       }
                     });
}

// f(x) -> value; df(x, y, g) -> partial times upstream, with y = f(x).
template <typename F, typename DF>
Tensor unary(const std::string& op, const Tensor& a, F f, DF df) {
  const auto src = a.data();
  std::vector<real> out(src.size());
  std::transform(src.begin(), src.end(), out.begin(), f);
  return make_result(op, a.shape(), std::move(out), {a}, [df](Node& self) {
    Node& in = *self.inputs[0];
    real* gx = grad_target(in);
    const real* x = in.in();
    const real* y = self.in();
    const real* g = self.grad.data();
    const auto n = self.size();
    for (std::int64_t k = 0; k < n; ++k) gx[k] += df(x[k], y[k], g[k]);
  });
}

real safe_denominator(real v) {
  if (std::abs(v) >= kLogEpsilon) return v;
  return v < 0.0f ? -kLogEpsilon : kLogEpsilon;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](real x, real y) { return x + y; }, [](real, real, real g) { return g; },
      [](real, real, real g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](real x, real y) { return x - y; }, [](real, real, real g) { return g; },
      [](real, real, real g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](real x, real y) { return x * y; },
      [](real, real y, real g) { return g * y; }, [](real x, real, real g) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](real x, real y) { return x / safe_denominator(y); },
      [](real, real y, real g) { return g / safe_denominator(y); },
      [](real x, real y, real g) {
        if (std::abs(y) < kLogEpsilon) return real{0};
        return -g * x / (y * y);
      });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator-(const Tensor& a) { return neg(a); }
Tensor operator*(real c, const Tensor& a) { return scale(a, c); }
Tensor operator+(real c, const Tensor& a) { return add_scalar(a, c); }

Tensor scale(const Tensor& a, real c) {
  return unary(
      "scale", a, [c](real x) { return c * x; }, [c](real, real, real g) { return c * g; });
}

Tensor add_scalar(const Tensor& a, real c) {
  return unary(
      "add_scalar", a, [c](real x) { return x + c; }, [](real, real, real g) { return g; });
}

Tensor neg(const Tensor& a) {
  return unary(
      "neg", a, [](real x) { return -x; }, [](real, real, real g) { return -g; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](real x) { return x > 0.0f ? x : 0.0f; },
      [](real x, real, real g) { return x > 0.0f ? g : 0.0f; });
}

Tensor leaky_relu(const Tensor& a, real slope) {
  return unary(
      "leaky_relu", a, [slope](real x) { return x > 0.0f ? x : slope * x; },
      [slope](real x, real, real g) { return x > 0.0f ? g : slope * g; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](real x) {
        if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
        const real e = std::exp(x);
        return e / (1.0f + e);
      },
      [](real, real y, real g) { return g * y * (1.0f - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](real x) { return std::tanh(x); },
      [](real, real y, real g) { return g * (1.0f - y * y); });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](real x) { return std::exp(x); }, [](real, real y, real g) { return g * y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](real x) { return std::log(std::max(x, kLogEpsilon)); },
      [](real x, real, real g) { return x >= kLogEpsilon ? g / x : 0.0f; });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](real x) { return x * x; },
      [](real x, real, real g) { return 2.0f * x * g; });
}

Tensor clamp(const Tensor& a, real lo, real hi) {
  return unary(
      "clamp", a, [lo, hi](real x) { return std::clamp(x, lo, hi); },
      [lo, hi](real x, real, real g) { return (x >= lo && x <= hi) ? g : 0.0f; });
}

Tensor sum(const Tensor& a) {
  const auto src = a.data();
  double total = 0.0;
  for (real v : src) total += v;
  return make_result("sum", {}, {static_cast<real>(total)}, {a}, [](Node& self) {
    Node& in = *self.inputs[0];
    real* gx = grad_target(in);
    const real g = self.grad[0];
    const auto n = in.size();
    for (std::int64_t k = 0; k < n; ++k) gx[k] += g;
  });
}

Tensor mean(const Tensor& a) {
  const auto src = a.data();
  if (src.empty()) throw ShapeError("mean", "empty tensor " + to_string(a.shape()));
  double total = 0.0;
  for (real v : src) total += v;
  const auto n = static_cast<std::int64_t>(src.size());
  return make_result("mean", {}, {static_cast<real>(total / static_cast<double>(n))}, {a},
                     [n](Node& self) {
                       Node& in = *self.inputs[0];
                       real* gx = grad_target(in);
                       const real g = self.grad[0] / static_cast<real>(n);
                       for (std::int64_t k = 0; k < n; ++k) gx[k] += g;
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) throw ShapeError("matmul", a.shape(), b.shape());
  const auto m = a.dim(0);
  const auto k = a.dim(1);
  const auto n = b.dim(1);
  std::vector<real> out(static_cast<std::size_t>(m * n));
  MatrixMap(out.data(), m, n).noalias() = a.matrix() * b.matrix();
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    ConstMatrixMap g(self.grad.data(), m, n);
    if (real* ga = grad_target(na)) {
      MatrixMap(ga, m, k).noalias() += g * ConstMatrixMap(nb.in(), k, n).transpose();
    }
    if (real* gb = grad_target(nb)) {
      MatrixMap(gb, k, n).noalias() += ConstMatrixMap(na.in(), m, k).transpose() * g;
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat", "axis out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool compatible = s.size() == first.size();
    for (std::size_t d = 0; compatible && d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) compatible = false;
    }
    if (!compatible) throw ShapeError("concat", first, s);
    out_shape[axis] += s[axis];
  }
  std::int64_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  std::int64_t inner = 1;
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<std::int64_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[axis] * inner);
  const std::int64_t row = out_shape[axis] * inner;

  std::vector<real> out(static_cast<std::size_t>(numel(out_shape)));
  std::int64_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const real* src = parts[i].data().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * widths[i], widths[i], out.data() + o * row + offset);
    }
    offset += widths[i];
  }
  return make_result("concat", out_shape, std::move(out), parts, [widths, outer, row](Node& self) {
    std::int64_t offset = 0;
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      if (real* g = grad_target(*self.inputs[i])) {
        for (std::int64_t o = 0; o < outer; ++o) {
          const real* src = self.grad.data() + o * row + offset;
          real* dst = g + o * widths[i];
          for (std::int64_t j = 0; j < widths[i]; ++j) dst[j] += src[j];
        }
      }
      offset += widths[i];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  std::int64_t known = 1;
  int inferred = -1;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (shape[d] == -1) {
      if (inferred >= 0) throw ShapeError("reshape", "more than one inferred extent");
      inferred = static_cast<int>(d);
    } else {
      known *= shape[d];
    }
  }
  if (inferred >= 0 && known > 0) shape[static_cast<std::size_t>(inferred)] = a.numel() / known;
  if (numel(shape) != a.numel()) throw ShapeError("reshape", a.shape(), shape);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = a.node()->values;
  node->op = "reshape";
  node->seq = detail::next_sequence();
  if (a.requires_grad()) {
    node->requires_grad = true;
    node->is_constant = false;
    node->inputs.push_back(a.node());
    node->backward_fn = [](Node& self) {
      real* g = grad_target(*self.inputs[0]);
      const auto n = self.size();
      for (std::int64_t k = 0; k < n; ++k) g[k] += self.grad[k];
    };
  }
  return Tensor(std::move(node));
}

Tensor broadcast(const Tensor& a, const Shape& shape) {
  if (broadcast_shape("broadcast", a.shape(), shape) != shape) throw ShapeError("broadcast", a.shape(), shape);
  auto index = source_index(shape, a.shape());
  std::vector<real> out(index.size());
  const real* src = a.data().data();
  for (std::size_t k = 0; k < index.size(); ++k) out[k] = src[index[k]];
  return make_result("broadcast", shape, std::move(out), {a}, [index = std::move(index)](Node& self) {
    real* g = grad_target(*self.inputs[0]);
    for (std::size_t k = 0; k < index.size(); ++k) g[index[k]] += self.grad[k];
  });
}

}  // namespace idvae
