#include "ndfsr/alleviator.hpp"

#include <stdexcept>

#include "ndfsr/rng.hpp"

namespace ndfsr {

Tensor normalize_batch(Graph& g, const Tensor& latent_batch) {
  if (latent_batch.rank() != 2)
    throw std::invalid_argument("normalize-batch: want a (m,n') batch, got " +
                                shape_str(latent_batch.shape()));
  std::size_t m = latent_batch.extent(0);
  if (m < 2) throw std::invalid_argument("normalize-batch: need m >= 2 rows");
  Tensor mean = g.mean_axis(latent_batch, 0);
  Tensor centered = g.add_rowvec(latent_batch, g.scalar_mul(mean, -1.0));
  Tensor var = g.scalar_mul(g.mean_axis(g.mul(centered, centered), 0),
                            static_cast<double>(m) / static_cast<double>(m - 1));
  Tensor scale = g.rsqrt_guard(var, 1e-12);
  return g.mul_rowvec(centered, scale);
}

Tensor js_shrink(Graph& g, const Tensor& latent_batch, bool positive_part,
                 bool* small_batch) {
  if (latent_batch.rank() != 2)
    throw std::invalid_argument("js-shrink: want a (m,n') batch, got " +
                                shape_str(latent_batch.shape()));
  std::size_t m = latent_batch.extent(0);
  if (small_batch) *small_batch = false;
  if (m < 3) {
    if (small_batch) *small_batch = true;
    return latent_batch;
  }
  Tensor ssq = g.scalar_mul(g.mean_axis(g.mul(latent_batch, latent_batch), 0),
                            static_cast<double>(m));
  Tensor factor = g.js_factor(ssq, static_cast<double>(m - 2), positive_part);
  return g.mul_rowvec(latent_batch, factor);
}

SteinRisk stein_risk_trial(const SteinTrialSpec& spec) {
  if (spec.m < 3) throw std::invalid_argument("stein-risk-trial: need m >= 3");
  if (spec.sigma < 1.0) throw std::invalid_argument("stein-risk-trial: need sigma >= 1");
  Rng rng(derive_seed(spec.seed, "stein"));
  double mle_acc = 0.0, js_acc = 0.0;
  std::vector<double> mu(spec.m), z(spec.m);
  for (std::size_t t = 0; t < spec.num_trials; ++t) {
    double ssq = 0.0;
    for (std::size_t i = 0; i < spec.m; ++i) {
      mu[i] = spec.prior_sd == 0.0 ? 0.0 : rng.normal(0.0, spec.prior_sd);
      z[i] = rng.normal(mu[i], spec.sigma);
      ssq += z[i] * z[i];
    }
    double factor = ssq == 0.0 ? 1.0 : 1.0 - (spec.m - 2) / ssq;
    for (std::size_t i = 0; i < spec.m; ++i) {
      double mle_err = z[i] - mu[i];
      double js_err = factor * z[i] - mu[i];
      mle_acc += mle_err * mle_err;
      js_acc += js_err * js_err;
    }
  }
  SteinRisk r;
  r.mle_risk = mle_acc / static_cast<double>(spec.num_trials);
  r.js_risk = js_acc / static_cast<double>(spec.num_trials);
  return r;
}

}  // namespace ndfsr
