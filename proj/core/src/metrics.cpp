#include "ndfsr/metrics.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ndfsr {

std::size_t rank_of_target(const std::vector<double>& scores, std::size_t target) {
  if (target >= scores.size()) throw std::invalid_argument("rank: target out of range");
  double st = scores[target];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > st || (scores[j] == st && j < target)) ++rank;
  }
  return rank;
}

namespace {

void check_k(const std::vector<std::vector<double>>& predictions, std::size_t k) {
  if (predictions.empty()) throw std::invalid_argument("metrics: no predictions");
  if (k == 0 || k > predictions.front().size())
    throw std::invalid_argument("metrics: k = " + std::to_string(k) +
                                " out of range for N = " +
                                std::to_string(predictions.front().size()));
  if (predictions.size() == 0) throw std::invalid_argument("metrics: empty");
}

}  // namespace

double hit_rate_at_k(const std::vector<std::vector<double>>& predictions,
                     const std::vector<std::size_t>& targets, std::size_t k) {
  check_k(predictions, k);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (rank_of_target(predictions[i], targets[i]) <= k) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double mrr_at_k(const std::vector<std::vector<double>>& predictions,
                const std::vector<std::size_t>& targets, std::size_t k) {
  check_k(predictions, k);
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    std::size_t r = rank_of_target(predictions[i], targets[i]);
    if (r <= k) sum += 1.0 / static_cast<double>(r);
  }
  return sum / static_cast<double>(predictions.size());
}

ZTestResult two_proportion_z_test(std::size_t hits_a, std::size_t n_a, std::size_t hits_b,
                                  std::size_t n_b) {
  if (n_a == 0 || n_b == 0) throw std::invalid_argument("z-test: empty group");
  if (hits_a > n_a || hits_b > n_b) throw std::invalid_argument("z-test: hits exceed n");
  double pa = static_cast<double>(hits_a) / n_a;
  double pb = static_cast<double>(hits_b) / n_b;
  double pool = static_cast<double>(hits_a + hits_b) / (n_a + n_b);
  double var = pool * (1.0 - pool) * (1.0 / n_a + 1.0 / n_b);
  ZTestResult r;
  if (var == 0.0) {
    r.degenerate = true;
    return r;
  }
  r.z = (pa - pb) / std::sqrt(var);
  r.p_value = std::erfc(std::abs(r.z) / std::sqrt(2.0));
  return r;
}

std::string format_metric_report(const MetricReport& r) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "metric\tvalue\n";
  out << "HR@" << r.k << "\t" << r.hr << "\n";
  out << "MRR@" << r.k << "\t" << r.mrr << "\n";
  out << "cases\t" << r.cases << "\n";
  out << "HR@" << r.k << "=" << r.hr << "\n";
  out << "MRR@" << r.k << "=" << r.mrr << "\n";
  return out.str();
}

}  // namespace ndfsr
