#pragma once

#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ndfsr/alleviator.hpp"
#include "ndfsr/checkpoint.hpp"
#include "ndfsr/config.hpp"
#include "ndfsr/data.hpp"
#include "ndfsr/forest.hpp"
#include "ndfsr/metrics.hpp"
#include "ndfsr/model.hpp"

namespace ndfsr {

// y = q * y_base + (1-q) * y_ndf
Tensor merge(Graph& g, const Tensor& y_base, const Tensor& y_ndf, double q);

// mean over the batch of -log(probs[i, target_i]); probabilities floored at
// 1e-12 inside the log
Tensor cross_entropy(Graph& g, const Tensor& probs, const std::vector<std::size_t>& targets);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::vector<Tensor>& params) = 0;
  static void zero_grads(std::vector<Tensor>& params);
};

class GradientDescent : public Optimizer {
 public:
  explicit GradientDescent(double lr) : lr_(lr) {}
  void step(std::vector<Tensor>& params) override;

 private:
  double lr_;
};

// two bias-corrected moment accumulators per parameter
class Adam : public Optimizer {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(std::vector<Tensor>& params) override;

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(const std::string& name, double lr);

struct TrainDivergence : std::runtime_error {
  TrainDivergence(std::size_t epoch, std::size_t batch)
      : std::runtime_error("training diverged (non-finite loss) at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(batch)),
        epoch(epoch), batch(batch) {}
  std::size_t epoch, batch;
};

// Encoder + linear predictor + NDF head behind one merger.
struct SrPredictAo {
  TrainConfig cfg;
  std::size_t num_items = 0;
  std::shared_ptr<ReferenceEncoder> encoder;
  std::shared_ptr<LinearPredictor> predictor;
  std::shared_ptr<Forest> forest;

  static SrPredictAo create(const TrainConfig& cfg, std::size_t num_items);
  static SrPredictAo from_checkpoint(const Checkpoint& cp);
  Checkpoint to_checkpoint() const;

  std::vector<Tensor> parameters();

  // alleviator-processed latents for a batch (shared by both heads)
  Tensor latents(Graph& g, const std::vector<Session>& batch) const;

  struct Heads {
    Tensor base;  // (m, N)
    Tensor ndf;   // (m, N)
  };
  Heads forward_heads(Graph& g, const std::vector<Session>& batch, bool training,
                      Rng* prune_rng) const;

  // merged probabilities at the configured q
  Tensor forward(Graph& g, const std::vector<Session>& batch, bool training,
                 Rng* prune_rng) const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_hr = 0.0, train_mrr = 0.0;
  double test_hr = 0.0, test_mrr = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochMetrics> epochs;
};

TrainResult train(const SessionDataset& dataset, const TrainConfig& cfg,
                  std::ostream* log = nullptr);

// per-case probability vectors for both heads, batched at eval_batch_size
struct HeadPredictions {
  std::vector<std::vector<double>> base;
  std::vector<std::vector<double>> ndf;
  std::vector<std::size_t> targets;
};
HeadPredictions predict_heads(const SrPredictAo& model, const std::vector<Session>& split,
                              std::size_t eval_batch_size);

MetricReport evaluate(const SrPredictAo& model, const std::vector<Session>& split, double q,
                      std::size_t k, std::size_t eval_batch_size);

struct TuneResult {
  double best_q = 0.0;
  double best_hr = 0.0;
  std::vector<std::pair<double, double>> grid;  // (q, HR@k)
};

// grid-evaluates HR@k and returns the maximizer; ties go to the lowest q
TuneResult tune_q(const SrPredictAo& model, const std::vector<Session>& validation,
                  const std::vector<double>& grid, std::size_t k,
                  std::size_t eval_batch_size);

std::vector<double> default_q_grid();

// batches of batch_size in order; when the alleviator is on, a trailing batch
// smaller than 3 is folded into its predecessor
std::vector<std::pair<std::size_t, std::size_t>> make_batches(std::size_t count,
                                                              std::size_t batch_size,
                                                              bool alleviator);

}  // namespace ndfsr
