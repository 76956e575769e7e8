#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ndfsr {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + ")";
}

enum class Op : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  AddRowVec,
  Mul,
  MulRowVec,
  ScalarMul,
  Sigmoid,
  Log,
  SoftmaxLast,
  MeanAxis,
  GatherRows,
  GatherPerRow,
  Concat,
  StackRows,
  Reshape,
  Transpose,
  MaskedFill,
  RsqrtGuard,
  JsFactor,
  TreeRoute,
};

const char* op_name(Op op);

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until first backward touches this node

  Op op = Op::Leaf;
  std::vector<std::shared_ptr<TensorNode>> inputs;

  // per-op payloads
  std::vector<std::size_t> indices;  // GatherRows / GatherPerRow
  std::vector<std::uint8_t> mask;    // MaskedFill
  double scalar = 0.0;               // ScalarMul factor, RsqrtGuard threshold, JsFactor m-2
  std::size_t axis = 0;              // MeanAxis / Concat
  std::vector<double> saved;         // TreeRoute internal node probabilities
  bool flag = false;                 // JsFactor positive-part clamp
};

// Value-semantic handle onto a node. Parameters are leaves created once and
// referenced by every per-batch graph; their grad accumulates until zeroed.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

  static Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (values.size() != numel(shape))
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values for shape " + shape_str(shape));
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> v(numel(shape), 0.0);
    return leaf(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor scalar(double v) { return leaf({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->values.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t extent(std::size_t d) const { return node_->shape[d]; }

  std::vector<double>& values() { return node_->values; }
  const std::vector<double>& values() const { return node_->values; }
  double value() const {
    if (node_->values.size() != 1)
      throw std::invalid_argument("value(): tensor not scalar, shape " + shape_str(node_->shape));
    return node_->values[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  const std::vector<double>& grad() const { return node_->grad; }
  std::vector<double>& grad() { return node_->grad; }

  void zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

  std::shared_ptr<TensorNode> node() const { return node_; }
  TensorNode* operator->() const { return node_.get(); }

 private:
  std::shared_ptr<TensorNode> node_;
};

}  // namespace ndfsr
