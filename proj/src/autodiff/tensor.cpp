#include "idvae/tensor.hpp"

#include "node.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace idvae {

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : std::invalid_argument(op + ": incompatible shapes " + to_string(a) + " and " + to_string(b)) {}

ShapeError::ShapeError(const std::string& op, const std::string& message)
    : std::invalid_argument(op + ": " + message) {}

namespace detail {

std::uint64_t next_sequence() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

real* grad_target(Node& input) {
  if (!input.requires_grad) return nullptr;
  if (input.grad.empty()) input.grad.assign(input.values->size(), 0.0f);
  return input.grad.data();
}

Tensor make_result(std::string op, Shape shape, std::vector<real> values,
                   std::vector<Tensor> inputs, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::make_shared<std::vector<real>>(std::move(values));
  node->op = std::move(op);
  node->seq = next_sequence();
  const bool tracked =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (tracked) {
    node->requires_grad = true;
    node->is_constant = false;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

namespace {

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<real> values, bool trainable) {
  if (numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("tensor", "shape " + to_string(shape) + " does not match " +
                                   std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::make_shared<std::vector<real>>(std::move(values));
  node->requires_grad = trainable;
  node->is_constant = !trainable;
  node->seq = detail::next_sequence();
  node->op = trainable ? "parameter" : "constant";
  return node;
}

}  // namespace

Tensor::Tensor() : node_(make_leaf({}, {0.0f}, false)) {}

Tensor Tensor::constant(Shape shape, std::vector<real> values) {
  return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0f); }

Tensor Tensor::full(Shape shape, real value) {
  const auto n = static_cast<std::size_t>(idvae::numel(shape));
  return constant(std::move(shape), std::vector<real>(n, value));
}

Tensor Tensor::scalar(real value) { return constant({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<real> values) {
  return Tensor(make_leaf(std::move(shape), std::move(values), true));
}

const Shape& Tensor::shape() const { return node_->shape; }

std::int64_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw ShapeError("dim", "axis " + std::to_string(axis) + " out of range for " +
                                to_string(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::rank() const { return node_->shape.size(); }

std::int64_t Tensor::numel() const { return node_->size(); }

std::span<const real> Tensor::data() const { return {node_->values->data(), node_->values->size()}; }

std::span<real> Tensor::mutable_data() { return {node_->values->data(), node_->values->size()}; }

real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item", "tensor " + to_string(shape()) + " is not a scalar");
  return (*node_->values)[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const real> Tensor::grad() const {
  if (node_->grad.empty()) throw std::logic_error("tensor has no gradient buffer");
  return {node_->grad.data(), node_->grad.size()};
}

std::span<real> Tensor::mutable_grad() {
  if (node_->is_constant) throw std::logic_error("constant tensors carry no gradient");
  if (node_->grad.empty()) node_->grad.assign(node_->values->size(), 0.0f);
  return {node_->grad.data(), node_->grad.size()};
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

ConstMatrixMap Tensor::matrix() const {
  if (rank() != 2) throw ShapeError("matrix", "expected rank 2, got " + to_string(shape()));
  return ConstMatrixMap(node_->values->data(), shape()[0], shape()[1]);
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->values = node_->values;
  node->seq = detail::next_sequence();
  node->op = "detach";
  return Tensor(std::move(node));
}

Tensor Tensor::clone() const { return constant(node_->shape, *node_->values); }

bool Tensor::shares_storage_with(const Tensor& other) const {
  return node_->values == other.node_->values;
}

const std::string& Tensor::op_name() const { return node_->op; }

void backward(const Tensor& root) {
  if (root.numel() != 1) {
    throw ShapeError("backward", "root must be a scalar, got " + to_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{root.node().get()};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto* node = stack.back();
    stack.pop_back();
    order.push_back(node);
    for (const auto& in : node->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  for (auto* node : order) {
    if (node->backward_fn) node->grad.assign(node->values->size(), 0.0f);
  }
  if (!root.node()->backward_fn) {
    detail::grad_target(*root.node())[0] += 1.0f;
    return;
  }
  root.node()->grad[0] = 1.0f;
  for (auto* node : order) {
    if (node->backward_fn) node->backward_fn(*node);
  }
  for (auto* node : order) {
    if (node->backward_fn) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

void zero_grads(std::span<const Tensor> params) {
  for (auto t : params) t.zero_grad();
}

}  // namespace idvae
