#pragma once

#include "idvae/tensor.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace idvae::detail {

struct Node {
  Shape shape;
  std::shared_ptr<std::vector<real>> values;
  std::vector<real> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_constant = true;
  std::uint64_t seq = 0;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  std::int64_t size() const { return static_cast<std::int64_t>(values->size()); }
  const real* in() const { return values->data(); }
};

std::uint64_t next_sequence();

/// Gradient buffer of an input, allocated (zeroed) on first use.
/// Returns nullptr for inputs that do not take gradients.
real* grad_target(Node& input);

/// Builds an op result. When any input requires a gradient the node keeps its
/// inputs and backward closure; otherwise it is a plain constant.
Tensor make_result(std::string op, Shape shape, std::vector<real> values,
                   std::vector<Tensor> inputs, std::function<void(Node&)> backward_fn);

}  // namespace idvae::detail
