#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace ndfsr {

// 1-based rank of `target` in `scores`; ties broken by lower item index first.
std::size_t rank_of_target(const std::vector<double>& scores, std::size_t target);

// Fraction of cases whose target ranks in the top k. Rejects k > N.
double hit_rate_at_k(const std::vector<std::vector<double>>& predictions,
                     const std::vector<std::size_t>& targets, std::size_t k);

// Mean over cases of 1/rank if rank <= k else 0. Rejects k > N.
double mrr_at_k(const std::vector<std::vector<double>>& predictions,
                const std::vector<std::size_t>& targets, std::size_t k);

struct ZTestResult {
  double z = 0.0;
  double p_value = 1.0;
  bool degenerate = false;  // pooled variance was zero
};

// Pooled two-proportion z-test, two-sided p from the standard normal.
ZTestResult two_proportion_z_test(std::size_t hits_a, std::size_t n_a, std::size_t hits_b,
                                  std::size_t n_b);

struct MetricReport {
  double hr = 0.0;
  double mrr = 0.0;
  std::size_t k = 20;
  std::size_t cases = 0;
};

// Plain-text table (metric\tvalue) plus machine-readable HR@k=/MRR@k= lines.
std::string format_metric_report(const MetricReport& r);

}  // namespace ndfsr
