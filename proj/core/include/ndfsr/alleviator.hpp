#pragma once

#include <cstdint>

#include "ndfsr/graph.hpp"
#include "ndfsr/tensor.hpp"

namespace ndfsr {

// Column-wise shift/scale to sample mean 0, sample variance 1 (unbiased m-1
// denominator). Zero-variance columns are centered but left unscaled.
// Requires m >= 2 rows.
Tensor normalize_batch(Graph& g, const Tensor& latent_batch);

// James-Stein shrinkage, column-wise: every entry becomes
// (1 - (m-2)/||xi_j||^2) * z_ij. Gradient flows through both the entry and
// the column norm. m < 3 passes the batch through unchanged and sets
// *small_batch; zero-norm columns pass through unshrunken.
Tensor js_shrink(Graph& g, const Tensor& latent_batch, bool positive_part = false,
                 bool* small_batch = nullptr);

struct SteinTrialSpec {
  std::uint64_t seed = 1;
  std::size_t m = 50;
  std::size_t num_trials = 100000;
  double sigma = 1.0;     // noise stddev, >= 1 per the shrinkage assumption
  double prior_sd = 1.0;  // stddev of the prior the truth is drawn from; 0 = origin
};

struct SteinRisk {
  double mle_risk = 0.0;  // Monte-Carlo E[sum_i (mu_i - z_i)^2]
  double js_risk = 0.0;   // same with the shrunken estimate
};

// Draws mu from the prior, z_i ~ Normal(mu_i, sigma^2), applies both
// estimators, averages squared error over trials.
SteinRisk stein_risk_trial(const SteinTrialSpec& spec);

}  // namespace ndfsr
