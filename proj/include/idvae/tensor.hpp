#pragma once

// Reverse-mode automatic differentiation over dense tensors of `real`
// (float32 unless the library is built with IDVAE_REAL=double).
//
// Every op result that depends on a gradient-requiring input records a node
// holding its inputs and a backward closure. Nodes carry a monotonically
// increasing sequence number (the append order of the implicit tape), and
// backward() replays reachable nodes in strictly decreasing sequence order,
// which is a valid reverse topological order because inputs always precede
// results. The graph is rebuilt by every forward pass and released when the
// last Tensor handle referring to it goes away.
//
// Shapes follow row-major layout. Binary elementwise ops (add, sub, mul, div)
// broadcast NumPy-style: shapes are right-aligned and every pair of extents
// must be equal or one of them must be 1. Images are NCHW.

#include "idvae/real.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace idvae {

using Shape = std::vector<std::int64_t>;

using RowMatrixX = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrixX>;
using ConstMatrixMap = Eigen::Map<const RowMatrixX>;

std::string to_string(const Shape& shape);
std::int64_t numel(const Shape& shape);

/// Raised by an op whose operand shapes are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b);
  ShapeError(const std::string& op, const std::string& message);
};

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor();

  /// Constant: never receives a gradient buffer.
  static Tensor constant(Shape shape, std::vector<real> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, real value);
  static Tensor scalar(real value);
  /// Trainable leaf; its gradient accumulates across backward() calls.
  static Tensor parameter(Shape shape, std::vector<real> values);

  const Shape& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const;
  std::int64_t numel() const;

  std::span<const real> data() const;
  /// In-place access for optimizers and initializers. Invalidates any graph
  /// that saved this tensor's values.
  std::span<real> mutable_data();
  real item() const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const real> grad() const;
  std::span<real> mutable_grad();
  void zero_grad();

  ConstMatrixMap matrix() const;

  /// Same storage, cut from the graph.
  Tensor detach() const;
  /// Deep copy as a constant.
  Tensor clone() const;

  bool shares_storage_with(const Tensor& other) const;
  bool same_object(const Tensor& other) const { return node_ == other.node_; }
  const void* identity() const { return node_.get(); }
  const std::string& op_name() const;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Elementwise binary ops with broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Denominator magnitude clamped to at least 1e-7, sign preserved.
Tensor div(const Tensor& a, const Tensor& b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a);
Tensor operator*(real c, const Tensor& a);
Tensor operator+(real c, const Tensor& a);

Tensor scale(const Tensor& a, real c);
Tensor add_scalar(const Tensor& a, real c);
Tensor neg(const Tensor& a);

/// [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// x: [N,C,H,W], weight: [O,C,k,k], bias: [O] or empty Tensor.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);
/// x: [N,C,H,W], weight: [C,O,k,k], bias: [O] or empty Tensor.
/// Output extent (H-1)*stride - 2*padding + k.
Tensor conv2d_transpose(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                        int padding);

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, real slope = 0.2f);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
/// Natural log of max(a, 1e-7); zero gradient where clamped.
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
Tensor clamp(const Tensor& a, real lo, real hi);

/// Full reductions to a rank-0 tensor.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& a, Shape shape);
Tensor broadcast(const Tensor& a, const Shape& shape);

inline constexpr real kLogEpsilon = 1e-7f;

/// Accumulates d(root)/d(leaf) into every gradient-requiring leaf reachable
/// from root. Root must hold exactly one element.
void backward(const Tensor& root);

void zero_grads(std::span<const Tensor> params);

}  // namespace idvae
