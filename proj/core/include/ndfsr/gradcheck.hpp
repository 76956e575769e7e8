#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ndfsr/graph.hpp"
#include "ndfsr/tensor.hpp"

namespace ndfsr {

// Builds a fresh graph from the current leaf values and returns the scalar loss.
using ForwardFn = std::function<Tensor(Graph&)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_leaf = 0;
  std::size_t worst_entry = 0;
};

// Central finite differences against the recorded backward pass.
// Error metric per entry: |analytic - numeric| / max(1, |analytic|).
// Throws if any forward intermediate is non-finite, naming the primitive.
GradCheckReport gradient_check(const ForwardFn& forward, const std::vector<Tensor>& leaves,
                               double step = 1e-6);

double gradient_check_max_err(const ForwardFn& forward, const std::vector<Tensor>& leaves,
                              double step = 1e-6);

}  // namespace ndfsr
