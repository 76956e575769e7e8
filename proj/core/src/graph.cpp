#include "ndfsr/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ndfsr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                              " and " + shape_str(b));
}

bool any_requires(const std::vector<std::shared_ptr<TensorNode>>& inputs) {
  for (const auto& in : inputs)
    if (in->requires_grad) return true;
  return false;
}

std::vector<double>& ensure_grad(const std::shared_ptr<TensorNode>& n) {
  if (n->grad.size() != n->values.size()) n->grad.assign(n->values.size(), 0.0);
  return n->grad;
}

void softmax_row(const double* x, double* y, std::size_t n) {
  double mx = kNegInf;
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x[i]);
  if (mx == kNegInf)
    throw std::domain_error("softmax: every entry masked to -inf");
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = std::exp(x[i] - mx);
    sum += y[i];
  }
  for (std::size_t i = 0; i < n; ++i) y[i] /= sum;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::AddRowVec: return "add-rowvec";
    case Op::Mul: return "multiply";
    case Op::MulRowVec: return "multiply-rowvec";
    case Op::ScalarMul: return "scalar-multiply";
    case Op::Sigmoid: return "sigmoid";
    case Op::Log: return "log";
    case Op::SoftmaxLast: return "softmax";
    case Op::MeanAxis: return "mean-axis";
    case Op::GatherRows: return "gather-rows";
    case Op::GatherPerRow: return "gather-per-row";
    case Op::Concat: return "concat";
    case Op::StackRows: return "stack-rows";
    case Op::Reshape: return "reshape";
    case Op::Transpose: return "transpose";
    case Op::MaskedFill: return "masked-fill";
    case Op::RsqrtGuard: return "rsqrt-guard";
    case Op::JsFactor: return "js-factor";
    case Op::TreeRoute: return "tree-route";
  }
  return "?";
}

Tensor Graph::record(std::shared_ptr<TensorNode> n) {
  n->requires_grad = any_requires(n->inputs);
  steps_.emplace_back(std::move(n));
  return steps_.back();
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  std::size_t m, k, n;
  Shape out_shape;
  if (sa.size() == 2 && sb.size() == 2) {
    if (sa[1] != sb[0]) shape_error("matmul", sa, sb);
    m = sa[0]; k = sa[1]; n = sb[1];
    out_shape = {m, n};
  } else if (sa.size() == 2 && sb.size() == 1) {
    if (sa[1] != sb[0]) shape_error("matmul", sa, sb);
    m = sa[0]; k = sa[1]; n = 1;
    out_shape = {m};
  } else if (sa.size() == 1 && sb.size() == 2) {
    if (sa[0] != sb[0]) shape_error("matmul", sa, sb);
    m = 1; k = sa[0]; n = sb[1];
    out_shape = {n};
  } else {
    shape_error("matmul", sa, sb);
  }
  auto node = std::make_shared<TensorNode>();
  node->op = Op::MatMul;
  node->inputs = {a.node(), b.node()};
  node->shape = std::move(out_shape);
  node->values.assign(m * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[p * n];
      double* crow = &node->values[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  return record(std::move(node));
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  auto node = std::make_shared<TensorNode>();
  node->op = Op::Add;
  node->inputs = {a.node(), b.node()};
  node->shape = a.shape();
  node->values.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) node->values[i] = a.values()[i] + b.values()[i];
  return record(std::move(node));
}

Tensor Graph::add_rowvec(const Tensor& x, const Tensor& v) {
  if (x.rank() != 2 || v.rank() != 1 || x.extent(1) != v.extent(0))
    shape_error("add-rowvec", x.shape(), v.shape());
  auto node = std::make_shared<TensorNode>();
  node->op = Op::AddRowVec;
  node->inputs = {x.node(), v.node()};
  node->shape = x.shape();
  node->values.resize(x.size());
  std::size_t m = x.extent(0), k = x.extent(1);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j)
      node->values[i * k + j] = x.values()[i * k + j] + v.values()[j];
  return record(std::move(node));
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("multiply", a.shape(), b.shape());
  auto node = std::make_shared<TensorNode>();
  node->op = Op::Mul;
  node->inputs = {a.node(), b.node()};
  node->shape = a.shape();
  node->values.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) node->values[i] = a.values()[i] * b.values()[i];
  return record(std::move(node));
}

Tensor Graph::mul_rowvec(const Tensor& x, const Tensor& v) {
  if (x.rank() != 2 || v.rank() != 1 || x.extent(1) != v.extent(0))
    shape_error("multiply-rowvec", x.shape(), v.shape());
  auto node = std::make_shared<TensorNode>();
  node->op = Op::MulRowVec;
  node->inputs = {x.node(), v.node()};
  node->shape = x.shape();
  node->values.resize(x.size());
  std::size_t m = x.extent(0), k = x.extent(1);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j)
      node->values[i * k + j] = x.values()[i * k + j] * v.values()[j];
  return record(std::move(node));
}

Tensor Graph::scalar_mul(const Tensor& x, double s) {
  auto node = std::make_shared<TensorNode>();
  node->op = Op::ScalarMul;
  node->inputs = {x.node()};
  node->shape = x.shape();
  node->scalar = s;
  node->values.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) node->values[i] = s * x.values()[i];
  return record(std::move(node));
}

Tensor Graph::sigmoid(const Tensor& x) {
  auto node = std::make_shared<TensorNode>();
  node->op = Op::Sigmoid;
  node->inputs = {x.node()};
  node->shape = x.shape();
  node->values.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) node->values[i] = 1.0 / (1.0 + std::exp(-x.values()[i]));
  return record(std::move(node));
}

Tensor Graph::log(const Tensor& x) {
  auto node = std::make_shared<TensorNode>();
  node->op = Op::Log;
  node->inputs = {x.node()};
  node->shape = x.shape();
  node->values.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) node->values[i] = std::log(x.values()[i]);
  return record(std::move(node));
}

Tensor Graph::softmax_last(const Tensor& x) {
  auto node = std::make_shared<TensorNode>();
  node->op = Op::SoftmaxLast;
  node->inputs = {x.node()};
  node->shape = x.shape();
  node->values.resize(x.size());
  std::size_t cols = x.shape().back();
  std::size_t rows = x.size() / cols;
  for (std::size_t r = 0; r < rows; ++r)
    softmax_row(&x.values()[r * cols], &node->values[r * cols], cols);
  return record(std::move(node));
}

Tensor Graph::mean_axis(const Tensor& x, std::size_t axis) {
  auto node = std::make_shared<TensorNode>();
  node->op = Op::MeanAxis;
  node->inputs = {x.node()};
  node->axis = axis;
  if (x.rank() == 1) {
    if (axis != 0) shape_error("mean-axis", x.shape(), {axis});
    node->shape = {1};
    double s = 0.0;
    for (double v : x.values()) s += v;
    node->values = {s / static_cast<double>(x.size())};
  } else if (x.rank() == 2 && axis < 2) {
    std::size_t m = x.extent(0), k = x.extent(1);
    if (axis == 0) {
      node->shape = {k};
      node->values.assign(k, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) node->values[j] += x.values()[i * k + j];
      for (std::size_t j = 0; j < k; ++j) node->values[j] /= static_cast<double>(m);
    } else {
      node->shape = {m};
      node->values.assign(m, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += x.values()[i * k + j];
        node->values[i] = s / static_cast<double>(k);
      }
    }
  } else {
    shape_error("mean-axis", x.shape(), {axis});
  }
  return record(std::move(node));
}

Tensor Graph::gather_rows(const Tensor& a, std::vector<std::size_t> rows) {
  if (a.rank() != 2) shape_error("gather-rows", a.shape(), {rows.size()});
  std::size_t n = a.extent(1);
  for (auto r : rows)
    if (r >= a.extent(0))
      throw std::invalid_argument("gather-rows: index " + std::to_string(r) +
                                  " out of range for " + shape_str(a.shape()));
  auto node = std::make_shared<TensorNode>();
  node->op = Op::GatherRows;
  node->inputs = {a.node()};
  node->shape = {rows.size(), n};
  node->values.resize(rows.size() * n);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(&a.values()[rows[i] * n], n, &node->values[i * n]);
  node->indices = std::move(rows);
  return record(std::move(node));
}

Tensor Graph::gather_per_row(const Tensor& x, std::vector<std::size_t> cols) {
  if (x.rank() != 2 || cols.size() != x.extent(0))
    shape_error("gather-per-row", x.shape(), {cols.size()});
  std::size_t n = x.extent(1);
  auto node = std::make_shared<TensorNode>();
  node->op = Op::GatherPerRow;
  node->inputs = {x.node()};
  node->shape = {cols.size()};
  node->values.resize(cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] >= n)
      throw std::invalid_argument("gather-per-row: index " + std::to_string(cols[i]) +
                                  " out of range for " + shape_str(x.shape()));
    node->values[i] = x.values()[i * n + cols[i]];
  }
  node->indices = std::move(cols);
  return record(std::move(node));
}

Tensor Graph::concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  auto node = std::make_shared<TensorNode>();
  node->op = Op::Concat;
  node->inputs = {a.node(), b.node()};
  node->axis = axis;
  if (a.rank() == 1 && b.rank() == 1 && axis == 0) {
    node->shape = {a.size() + b.size()};
    node->values = a.values();
    node->values.insert(node->values.end(), b.values().begin(), b.values().end());
  } else if (a.rank() == 2 && b.rank() == 2 && axis == 0 && a.extent(1) == b.extent(1)) {
    node->shape = {a.extent(0) + b.extent(0), a.extent(1)};
    node->values = a.values();
    node->values.insert(node->values.end(), b.values().begin(), b.values().end());
  } else if (a.rank() == 2 && b.rank() == 2 && axis == 1 && a.extent(0) == b.extent(0)) {
    std::size_t m = a.extent(0), ka = a.extent(1), kb = b.extent(1);
    node->shape = {m, ka + kb};
    node->values.resize(m * (ka + kb));
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(&a.values()[i * ka], ka, &node->values[i * (ka + kb)]);
      std::copy_n(&b.values()[i * kb], kb, &node->values[i * (ka + kb) + ka]);
    }
  } else {
    shape_error("concat", a.shape(), b.shape());
  }
  return record(std::move(node));
}

Tensor Graph::stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack-rows: no inputs");
  std::size_t k = rows[0].size();
  auto node = std::make_shared<TensorNode>();
  node->op = Op::StackRows;
  node->shape = {rows.size(), k};
  node->values.resize(rows.size() * k);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].rank() != 1 || rows[i].size() != k)
      shape_error("stack-rows", rows[0].shape(), rows[i].shape());
    node->inputs.push_back(rows[i].node());
    std::copy_n(rows[i].values().data(), k, &node->values[i * k]);
  }
  return record(std::move(node));
}

Tensor Graph::reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) shape_error("reshape", x.shape(), shape);
  auto node = std::make_shared<TensorNode>();
  node->op = Op::Reshape;
  node->inputs = {x.node()};
  node->shape = std::move(shape);
  node->values = x.values();
  return record(std::move(node));
}

Tensor Graph::transpose(const Tensor& x) {
  if (x.rank() != 2) shape_error("transpose", x.shape(), x.shape());
  std::size_t m = x.extent(0), n = x.extent(1);
  auto node = std::make_shared<TensorNode>();
  node->op = Op::Transpose;
  node->inputs = {x.node()};
  node->shape = {n, m};
  node->values.resize(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) node->values[j * m + i] = x.values()[i * n + j];
  return record(std::move(node));
}

Tensor Graph::masked_fill(const Tensor& x, std::vector<std::uint8_t> mask) {
  if (mask.size() != x.size())
    shape_error("masked-fill", x.shape(), {mask.size()});
  auto node = std::make_shared<TensorNode>();
  node->op = Op::MaskedFill;
  node->inputs = {x.node()};
  node->shape = x.shape();
  node->values = x.values();
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) node->values[i] = kNegInf;
  node->mask = std::move(mask);
  return record(std::move(node));
}

Tensor Graph::rsqrt_guard(const Tensor& v, double guard) {
  auto node = std::make_shared<TensorNode>();
  node->op = Op::RsqrtGuard;
  node->inputs = {v.node()};
  node->shape = v.shape();
  node->scalar = guard;
  node->values.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    node->values[i] = v.values()[i] < guard ? 1.0 : 1.0 / std::sqrt(v.values()[i]);
  return record(std::move(node));
}

Tensor Graph::js_factor(const Tensor& ssq, double shrink, bool positive_part) {
  auto node = std::make_shared<TensorNode>();
  node->op = Op::JsFactor;
  node->inputs = {ssq.node()};
  node->shape = ssq.shape();
  node->scalar = shrink;
  node->flag = positive_part;
  node->values.resize(ssq.size());
  for (std::size_t i = 0; i < ssq.size(); ++i) {
    double s = ssq.values()[i];
    double f = s == 0.0 ? 1.0 : 1.0 - shrink / s;
    if (positive_part && f < 0.0) f = 0.0;
    node->values[i] = f;
  }
  return record(std::move(node));
}

Tensor Graph::tree_route(const Tensor& s, std::size_t depth) {
  std::size_t splits = (std::size_t{1} << depth) - 1;
  std::size_t leaves = std::size_t{1} << depth;
  if (s.rank() != 2 || s.extent(1) != splits)
    throw std::invalid_argument("tree-route: want (m," + std::to_string(splits) +
                                ") split probabilities, got " + shape_str(s.shape()));
  std::size_t m = s.extent(0);
  auto node = std::make_shared<TensorNode>();
  node->op = Op::TreeRoute;
  node->inputs = {s.node()};
  node->shape = {m, leaves};
  node->axis = depth;
  node->values.resize(m * leaves);
  node->saved.resize(m * splits);  // probabilities of reaching each internal node
  for (std::size_t i = 0; i < m; ++i) {
    const double* si = &s.values()[i * splits];
    double* pin = &node->saved[i * splits];
    double* pl = &node->values[i * leaves];
    // nodes numbered 1.. breadth-first; node j stored at j-1
    pin[0] = 1.0;
    for (std::size_t j = 1; j <= splits; ++j) {
      double pj = pin[j - 1], sj = si[j - 1];
      std::size_t l = 2 * j, r = 2 * j + 1;
      double pleft = pj * sj, pright = pj * (1.0 - sj);
      if (l <= splits) {
        pin[l - 1] = pleft;
        pin[r - 1] = pright;
      } else {
        pl[l - 1 - splits] = pleft;
        pl[r - 1 - splits] = pright;
      }
    }
  }
  return record(std::move(node));
}

void Graph::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  ensure_grad(loss.node());
  loss.node()->grad[0] += 1.0;

  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
    TensorNode* n = it->node().get();
    if (n->op == Op::Leaf || !n->requires_grad) continue;
    if (n->grad.size() != n->values.size()) continue;  // not reached from loss
    const std::vector<double>& g = n->grad;

    switch (n->op) {
      case Op::MatMul: {
        auto& a = n->inputs[0];
        auto& b = n->inputs[1];
        std::size_t m, k, nn;
        if (a->shape.size() == 2) { m = a->shape[0]; k = a->shape[1]; }
        else { m = 1; k = a->shape[0]; }
        nn = (b->shape.size() == 2) ? b->shape[1] : 1;
        if (a->requires_grad) {
          auto& ga = ensure_grad(a);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < nn; ++j) acc += g[i * nn + j] * b->values[p * nn + j];
              ga[i * k + p] += acc;
            }
        }
        if (b->requires_grad) {
          auto& gb = ensure_grad(b);
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t i = 0; i < m; ++i) {
              double apv = a->values[i * k + p];
              if (apv == 0.0) continue;
              for (std::size_t j = 0; j < nn; ++j) gb[p * nn + j] += apv * g[i * nn + j];
            }
        }
        break;
      }
      case Op::Add: {
        for (auto& in : n->inputs)
          if (in->requires_grad) {
            auto& gi = ensure_grad(in);
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
          }
        break;
      }
      case Op::AddRowVec: {
        auto& x = n->inputs[0];
        auto& v = n->inputs[1];
        std::size_t m = n->shape[0], k = n->shape[1];
        if (x->requires_grad) {
          auto& gx = ensure_grad(x);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (v->requires_grad) {
          auto& gv = ensure_grad(v);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j) gv[j] += g[i * k + j];
        }
        break;
      }
      case Op::Mul: {
        auto& a = n->inputs[0];
        auto& b = n->inputs[1];
        if (a->requires_grad) {
          auto& ga = ensure_grad(a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b->values[i];
        }
        if (b->requires_grad) {
          auto& gb = ensure_grad(b);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a->values[i];
        }
        break;
      }
      case Op::MulRowVec: {
        auto& x = n->inputs[0];
        auto& v = n->inputs[1];
        std::size_t m = n->shape[0], k = n->shape[1];
        if (x->requires_grad) {
          auto& gx = ensure_grad(x);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += g[i * k + j] * v->values[j];
        }
        if (v->requires_grad) {
          auto& gv = ensure_grad(v);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j) gv[j] += g[i * k + j] * x->values[i * k + j];
        }
        break;
      }
      case Op::ScalarMul: {
        auto& x = n->inputs[0];
        if (x->requires_grad) {
          auto& gx = ensure_grad(x);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += n->scalar * g[i];
        }
        break;
      }
      case Op::Sigmoid: {
        auto& x = n->inputs[0];
        if (x->requires_grad) {
          auto& gx = ensure_grad(x);
          for (std::size_t i = 0; i < g.size(); ++i) {
            double y = n->values[i];
            gx[i] += g[i] * y * (1.0 - y);
          }
        }
        break;
      }
      case Op::Log: {
        auto& x = n->inputs[0];
        if (x->requires_grad) {
          auto& gx = ensure_grad(x);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / x->values[i];
        }
        break;
      }
      case Op::SoftmaxLast: {
        auto& x = n->inputs[0];
        if (x->requires_grad) {
          auto& gx = ensure_grad(x);
          std::size_t cols = n->shape.back();
          std::size_t rows = g.size() / cols;
          for (std::size_t r = 0; r < rows; ++r) {
            const double* y = &n->values[r * cols];
            const double* gr = &g[r * cols];
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * y[j];
            for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += y[j] * (gr[j] - dot);
          }
        }
        break;
      }
      case Op::MeanAxis: {
        auto& x = n->inputs[0];
        if (!x->requires_grad) break;
        auto& gx = ensure_grad(x);
        if (x->shape.size() == 1) {
          double s = g[0] / static_cast<double>(x->values.size());
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += s;
        } else {
          std::size_t m = x->shape[0], k = x->shape[1];
          if (n->axis == 0) {
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += g[j] / static_cast<double>(m);
          } else {
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += g[i] / static_cast<double>(k);
          }
        }
        break;
      }
      case Op::GatherRows: {
        auto& a = n->inputs[0];
        if (a->requires_grad) {
          auto& ga = ensure_grad(a);
          std::size_t cols = n->shape[1];
          for (std::size_t i = 0; i < n->indices.size(); ++i)
            for (std::size_t j = 0; j < cols; ++j)
              ga[n->indices[i] * cols + j] += g[i * cols + j];
        }
        break;
      }
      case Op::GatherPerRow: {
        auto& x = n->inputs[0];
        if (x->requires_grad) {
          auto& gx = ensure_grad(x);
          std::size_t cols = x->shape[1];
          for (std::size_t i = 0; i < n->indices.size(); ++i)
            gx[i * cols + n->indices[i]] += g[i];
        }
        break;
      }
      case Op::Concat: {
        auto& a = n->inputs[0];
        auto& b = n->inputs[1];
        if (n->axis == 0 || n->shape.size() == 1) {
          if (a->requires_grad) {
            auto& ga = ensure_grad(a);
            for (std::size_t i = 0; i < a->values.size(); ++i) ga[i] += g[i];
          }
          if (b->requires_grad) {
            auto& gb = ensure_grad(b);
            for (std::size_t i = 0; i < b->values.size(); ++i) gb[i] += g[a->values.size() + i];
          }
        } else {
          std::size_t m = n->shape[0], ka = a->shape[1], kb = b->shape[1];
          if (a->requires_grad) {
            auto& ga = ensure_grad(a);
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < ka; ++j) ga[i * ka + j] += g[i * (ka + kb) + j];
          }
          if (b->requires_grad) {
            auto& gb = ensure_grad(b);
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < kb; ++j) gb[i * kb + j] += g[i * (ka + kb) + ka + j];
          }
        }
        break;
      }
      case Op::StackRows: {
        std::size_t k = n->shape[1];
        for (std::size_t i = 0; i < n->inputs.size(); ++i) {
          auto& in = n->inputs[i];
          if (!in->requires_grad) continue;
          auto& gi = ensure_grad(in);
          for (std::size_t j = 0; j < k; ++j) gi[j] += g[i * k + j];
        }
        break;
      }
      case Op::Reshape: {
        auto& x = n->inputs[0];
        if (x->requires_grad) {
          auto& gx = ensure_grad(x);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        break;
      }
      case Op::Transpose: {
        auto& x = n->inputs[0];
        if (x->requires_grad) {
          auto& gx = ensure_grad(x);
          std::size_t m = x->shape[0], k = x->shape[1];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += g[j * m + i];
        }
        break;
      }
      case Op::MaskedFill: {
        auto& x = n->inputs[0];
        if (x->requires_grad) {
          auto& gx = ensure_grad(x);
          for (std::size_t i = 0; i < g.size(); ++i)
            if (!n->mask[i]) gx[i] += g[i];
        }
        break;
      }
      case Op::RsqrtGuard: {
        auto& v = n->inputs[0];
        if (v->requires_grad) {
          auto& gv = ensure_grad(v);
          for (std::size_t i = 0; i < g.size(); ++i) {
            double x = v->values[i];
            if (x >= n->scalar) gv[i] += g[i] * (-0.5) * n->values[i] / x;  // -1/2 x^{-3/2}
          }
        }
        break;
      }
      case Op::JsFactor: {
        auto& ssq = n->inputs[0];
        if (ssq->requires_grad) {
          auto& gs = ensure_grad(ssq);
          for (std::size_t i = 0; i < g.size(); ++i) {
            double s = ssq->values[i];
            if (s == 0.0) continue;
            if (n->flag && n->values[i] == 0.0 && 1.0 - n->scalar / s < 0.0) continue;
            gs[i] += g[i] * n->scalar / (s * s);
          }
        }
        break;
      }
      case Op::TreeRoute: {
        auto& s = n->inputs[0];
        if (s->requires_grad) {
          auto& gs = ensure_grad(s);
          std::size_t depth = n->axis;
          std::size_t splits = (std::size_t{1} << depth) - 1;
          std::size_t leaves = splits + 1;
          std::size_t m = n->shape[0];
          std::vector<double> gp(splits + leaves);  // grads for all node probs
          for (std::size_t i = 0; i < m; ++i) {
            const double* si = &s->values[i * splits];
            const double* pin = &n->saved[i * splits];
            std::fill(gp.begin(), gp.end(), 0.0);
            for (std::size_t l = 0; l < leaves; ++l) gp[splits + l] = g[i * leaves + l];
            for (std::size_t j = splits; j >= 1; --j) {
              double gl = gp[2 * j - 1], gr = gp[2 * j];  // children 2j, 2j+1 at idx-1
              double pj = pin[j - 1], sj = si[j - 1];
              gs[i * splits + j - 1] += pj * (gl - gr);
              gp[j - 1] += gl * sj + gr * (1.0 - sj);
            }
          }
        }
        break;
      }
      case Op::Leaf:
        break;
    }
  }
}

}  // namespace ndfsr
