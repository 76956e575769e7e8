#include "ndfsr/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace ndfsr {

namespace {

void check_finite(const Graph& g) {
  for (const auto& t : g.steps())
    for (double v : t.values())
      if (!std::isfinite(v) && t->op != Op::MaskedFill)
        throw std::runtime_error(std::string("non-finite value in primitive '") +
                                 op_name(t->op) + "'");
}

}  // namespace

GradCheckReport gradient_check(const ForwardFn& forward, const std::vector<Tensor>& leaves,
                               double step) {
  for (const auto& l : leaves) l.node()->grad.assign(l.size(), 0.0);
  Graph g;
  Tensor loss = forward(g);
  check_finite(g);
  g.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& l : leaves) {
    if (l.grad().size() == l.size())
      analytic.push_back(l.grad());
    else
      analytic.emplace_back(l.size(), 0.0);
  }

  GradCheckReport rep;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor leaf = leaves[li];
    for (std::size_t i = 0; i < leaf.size(); ++i) {
      double saved = leaf.values()[i];
      leaf.values()[i] = saved + step;
      Graph gp;
      double fp = forward(gp).value();
      leaf.values()[i] = saved - step;
      Graph gm;
      double fm = forward(gm).value();
      leaf.values()[i] = saved;
      double numeric = (fp - fm) / (2.0 * step);
      double a = analytic[li][i];
      double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst_leaf = li;
        rep.worst_entry = i;
      }
    }
  }
  return rep;
}

double gradient_check_max_err(const ForwardFn& forward, const std::vector<Tensor>& leaves,
                              double step) {
  return gradient_check(forward, leaves, step).max_rel_err;
}

}  // namespace ndfsr
