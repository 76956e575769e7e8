#pragma once

#include <cstdint>
#include <vector>

#include "ndfsr/tensor.hpp"

namespace ndfsr {

// Records every primitive application in forward order; backward() replays
// the rules in reverse and accumulates dLoss/dLeaf into every node that
// (transitively) requires grad. One graph per forward pass, confined to one
// thread; leaves may be shared across graphs.
class Graph {
 public:
  // primitives
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor add_rowvec(const Tensor& x, const Tensor& v);  // (m,k) + (k) per row
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor mul_rowvec(const Tensor& x, const Tensor& v);  // (m,k) * (k) per row
  Tensor scalar_mul(const Tensor& x, double s);
  Tensor sigmoid(const Tensor& x);
  Tensor log(const Tensor& x);
  Tensor softmax_last(const Tensor& x);
  Tensor mean_axis(const Tensor& x, std::size_t axis);  // reduced axis dropped
  Tensor gather_rows(const Tensor& a, std::vector<std::size_t> rows);
  Tensor gather_per_row(const Tensor& x, std::vector<std::size_t> cols);  // out_i = x[i, cols[i]]
  Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);
  Tensor stack_rows(const std::vector<Tensor>& rows);  // m x (k) -> (m,k)
  Tensor reshape(const Tensor& x, Shape shape);
  Tensor transpose(const Tensor& x);
  // masked entries become -inf, which softmax_last maps to exactly 0
  Tensor masked_fill(const Tensor& x, std::vector<std::uint8_t> mask);
  // y_j = v_j < guard ? 1 : v_j^{-1/2}; the guard branch carries no gradient
  Tensor rsqrt_guard(const Tensor& v, double guard);
  // f_j = 1 - shrink/S_j (S_j == 0 passes through as 1); optional clamp at 0
  Tensor js_factor(const Tensor& ssq, double shrink, bool positive_part);
  // s: post-sigmoid split probabilities (m, 2^d - 1), breadth-first node
  // order; returns leaf-reaching probabilities (m, 2^d), leaves left-to-right
  Tensor tree_route(const Tensor& s, std::size_t depth);

  // dLoss/dX for every recorded node reachable from loss; loss must be scalar.
  void backward(const Tensor& loss);

  std::size_t size() const { return steps_.size(); }
  const std::vector<Tensor>& steps() const { return steps_; }

 private:
  Tensor record(std::shared_ptr<TensorNode> n);
  std::vector<Tensor> steps_;
};

}  // namespace ndfsr
