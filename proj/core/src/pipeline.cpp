#include "ndfsr/pipeline.hpp"

#include <cmath>
#include <ostream>

namespace ndfsr {

Tensor merge(Graph& g, const Tensor& y_base, const Tensor& y_ndf, double q) {
  if (q < 0.0 || q > 1.0)
    throw std::invalid_argument("merge: q = " + std::to_string(q) + " outside [0,1]");
  if (y_base.shape() != y_ndf.shape())
    throw std::invalid_argument("merge: head shapes differ, " + shape_str(y_base.shape()) +
                                " vs " + shape_str(y_ndf.shape()));
  return g.add(g.scalar_mul(y_base, q), g.scalar_mul(y_ndf, 1.0 - q));
}

Tensor cross_entropy(Graph& g, const Tensor& probs, const std::vector<std::size_t>& targets) {
  Tensor picked = g.gather_per_row(probs, targets);
  Tensor floored = g.add(picked, Tensor::leaf({targets.size()},
                                              std::vector<double>(targets.size(), 1e-12)));
  return g.mean_axis(g.scalar_mul(g.log(floored), -1.0), 0);
}

void Optimizer::zero_grads(std::vector<Tensor>& params) {
  for (auto& p : params) p.zero_grad();
}

void GradientDescent::step(std::vector<Tensor>& params) {
  for (auto& p : params) {
    if (p.grad().size() != p.size()) continue;
    for (std::size_t i = 0; i < p.size(); ++i) p.values()[i] -= lr_ * p.grad()[i];
  }
}

void Adam::step(std::vector<Tensor>& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].size(), 0.0);
      v_[i].assign(params[i].size(), 0.0);
    }
  }
  if (m_.size() != params.size())
    throw std::invalid_argument("adam: parameter list changed between steps");
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.grad().size() != p.size()) continue;
    for (std::size_t j = 0; j < p.size(); ++j) {
      double gj = p.grad()[j];
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * gj;
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * gj * gj;
      double mhat = m_[i][j] / bc1;
      double vhat = v_[i][j] / bc2;
      p.values()[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& name, double lr) {
  if (name == "adam") return std::make_unique<Adam>(lr);
  if (name == "sgd") return std::make_unique<GradientDescent>(lr);
  throw std::invalid_argument("unknown optimizer '" + name + "'");
}

SrPredictAo SrPredictAo::create(const TrainConfig& cfg, std::size_t num_items) {
  cfg.validate();
  SrPredictAo m;
  m.cfg = cfg;
  m.num_items = num_items;
  Rng model_rng(derive_seed(cfg.seed, "model-init"));
  m.encoder = std::make_shared<ReferenceEncoder>(num_items, cfg.embed_dim, cfg.latent_dim,
                                                 model_rng);
  m.predictor = std::make_shared<LinearPredictor>(cfg.latent_dim, cfg.embed_dim,
                                                  m.encoder->embedding(), model_rng);
  Rng forest_rng(derive_seed(cfg.seed, "forest-init"));
  ForestConfig fc = cfg.forest;
  m.forest = std::make_shared<Forest>(fc, cfg.latent_dim, num_items,
                                      /*softmax_leaves=*/true, forest_rng);
  return m;
}

Checkpoint SrPredictAo::to_checkpoint() const {
  Checkpoint cp;
  cp.config = cfg;
  cp.tensors.emplace_back("embedding.A", encoder->embedding());
  cp.tensors.emplace_back("encoder.attn", encoder->attn());
  cp.tensors.emplace_back("encoder.proj", encoder->proj());
  cp.tensors.emplace_back("predictor.linear", predictor->linear());
  const auto& trees = forest->trees();
  for (std::size_t t = 0; t < trees.size(); ++t) {
    std::string base = "forest.tree" + std::to_string(t) + ".";
    cp.tensors.emplace_back(base + "w1", trees[t].w1);
    cp.tensors.emplace_back(base + "b1", trees[t].b1);
    cp.tensors.emplace_back(base + "w2", trees[t].w2);
    cp.tensors.emplace_back(base + "b2", trees[t].b2);
    cp.tensors.emplace_back(base + "pi", trees[t].pi);
    std::vector<double> mask(trees[t].feature_mask.begin(), trees[t].feature_mask.end());
    cp.tensors.emplace_back(base + "mask",
                            Tensor::leaf({mask.size()}, std::move(mask), false));
  }
  return cp;
}

SrPredictAo SrPredictAo::from_checkpoint(const Checkpoint& cp) {
  SrPredictAo m;
  m.cfg = cp.config;
  Tensor a = cp.find("embedding.A");
  m.num_items = a.extent(0);
  m.encoder = std::make_shared<ReferenceEncoder>(a, cp.find("encoder.attn"),
                                                 cp.find("encoder.proj"));
  m.predictor = std::make_shared<LinearPredictor>(cp.find("predictor.linear"), a);
  Rng dummy(0);
  ForestConfig fc = m.cfg.forest;
  m.forest = std::make_shared<Forest>(fc, m.cfg.latent_dim, m.num_items, true, dummy);
  auto& trees = m.forest->trees();
  for (std::size_t t = 0; t < trees.size(); ++t) {
    std::string base = "forest.tree" + std::to_string(t) + ".";
    trees[t].w1 = cp.find(base + "w1");
    trees[t].b1 = cp.find(base + "b1");
    trees[t].w2 = cp.find(base + "w2");
    trees[t].b2 = cp.find(base + "b2");
    trees[t].pi = cp.find(base + "pi");
    Tensor mask = cp.find(base + "mask");
    trees[t].feature_mask.assign(mask.values().begin(), mask.values().end());
  }
  return m;
}

std::vector<Tensor> SrPredictAo::parameters() {
  std::vector<Tensor> out = {encoder->embedding(), encoder->attn(), encoder->proj(),
                             predictor->linear()};
  for (auto& t : forest->parameters()) out.push_back(t);
  return out;
}

Tensor SrPredictAo::latents(Graph& g, const std::vector<Session>& batch) const {
  Tensor z = encoder->encode_batch(g, batch);
  if (cfg.alleviator && batch.size() >= 2) {
    z = normalize_batch(g, z);
    z = js_shrink(g, z, cfg.positive_part_js);  // identity below m = 3
  }
  return z;
}

SrPredictAo::Heads SrPredictAo::forward_heads(Graph& g, const std::vector<Session>& batch,
                                              bool training, Rng* prune_rng) const {
  Tensor z = latents(g, batch);
  Heads h;
  h.base = predictor->predict(g, z);
  h.ndf = cfg.detach_ndf ? h.base : forest->predict(g, z, training, prune_rng);
  return h;
}

Tensor SrPredictAo::forward(Graph& g, const std::vector<Session>& batch, bool training,
                            Rng* prune_rng) const {
  if (cfg.detach_ndf) {
    // base-only arm: the forest neither contributes to the output (q = 1
    // makes its weight exactly zero) nor receives gradient
    Tensor z = latents(g, batch);
    return predictor->predict(g, z);
  }
  Heads h = forward_heads(g, batch, training, prune_rng);
  return merge(g, h.base, h.ndf, cfg.forest.merger_q);
}

std::vector<std::pair<std::size_t, std::size_t>> make_batches(std::size_t count,
                                                              std::size_t batch_size,
                                                              bool alleviator) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t pos = 0;
  while (pos < count) {
    std::size_t end = std::min(count, pos + batch_size);
    if (alleviator && count - end > 0 && count - end < 3) end = count;  // fold tiny tail
    out.emplace_back(pos, end);
    pos = end;
  }
  return out;
}

TrainResult train(const SessionDataset& dataset, const TrainConfig& cfg_in,
                  std::ostream* log) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  if (cfg.detach_ndf && cfg.forest.merger_q != 1.0)
    throw std::invalid_argument("train: detach-ndf requires q = 1");
  const SessionDataset& ds = dataset;
  SessionDataset augmented;
  const std::vector<Session>* train_split = &ds.train;
  if (cfg.augment) {
    augmented = augment_prefixes(ds);
    train_split = &augmented.train;
  }
  if (train_split->empty()) throw std::invalid_argument("train: empty training split");

  SrPredictAo model = SrPredictAo::create(cfg, ds.vocab.size());
  auto params = model.parameters();
  auto opt = make_optimizer(cfg.optimizer, cfg.learning_rate);
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Rng prune_rng(derive_seed(cfg.seed, "prune"));

  std::vector<std::size_t> order(train_split->size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    auto batches = make_batches(order.size(), cfg.batch_size, cfg.alleviator);
    double loss_sum = 0.0;
    std::size_t case_count = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      auto [lo, hi] = batches[b];
      std::vector<Session> batch;
      std::vector<std::size_t> targets;
      batch.reserve(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        batch.push_back((*train_split)[order[i]]);
        targets.push_back(batch.back().target);
      }
      Graph g;
      Tensor merged = model.forward(g, batch, /*training=*/true, &prune_rng);
      Tensor loss = cross_entropy(g, merged, targets);
      if (!std::isfinite(loss.value())) throw TrainDivergence(epoch, b);
      loss_sum += loss.value() * static_cast<double>(batch.size());
      case_count += batch.size();
      Optimizer::zero_grads(params);
      g.backward(loss);
      opt->step(params);
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.loss = loss_sum / static_cast<double>(case_count);
    MetricReport train_m = evaluate(model, ds.train, cfg.forest.merger_q, cfg.metric_k,
                                    cfg.eval_batch_size);
    em.train_hr = train_m.hr;
    em.train_mrr = train_m.mrr;
    if (!ds.test.empty()) {
      MetricReport test_m = evaluate(model, ds.test, cfg.forest.merger_q, cfg.metric_k,
                                     cfg.eval_batch_size);
      em.test_hr = test_m.hr;
      em.test_mrr = test_m.mrr;
    }
    result.epochs.push_back(em);
    if (log) {
      (*log) << "epoch " << epoch << " loss=" << em.loss << " train_hr@" << cfg.metric_k
             << "=" << em.train_hr << " train_mrr@" << cfg.metric_k << "=" << em.train_mrr
             << " test_hr@" << cfg.metric_k << "=" << em.test_hr << " test_mrr@"
             << cfg.metric_k << "=" << em.test_mrr << "\n";
    }
  }
  result.checkpoint = model.to_checkpoint();
  return result;
}

HeadPredictions predict_heads(const SrPredictAo& model, const std::vector<Session>& split,
                              std::size_t eval_batch_size) {
  HeadPredictions out;
  auto batches = make_batches(split.size(), eval_batch_size, model.cfg.alleviator);
  for (auto [lo, hi] : batches) {
    std::vector<Session> batch(split.begin() + lo, split.begin() + hi);
    Graph g;
    auto heads = model.forward_heads(g, batch, /*training=*/false, nullptr);
    std::size_t n = model.num_items;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      out.base.emplace_back(heads.base.values().begin() + i * n,
                            heads.base.values().begin() + (i + 1) * n);
      out.ndf.emplace_back(heads.ndf.values().begin() + i * n,
                           heads.ndf.values().begin() + (i + 1) * n);
      out.targets.push_back(batch[i].target);
    }
  }
  return out;
}

MetricReport evaluate(const SrPredictAo& model, const std::vector<Session>& split, double q,
                      std::size_t k, std::size_t eval_batch_size) {
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("evaluate: q outside [0,1]");
  HeadPredictions hp = predict_heads(model, split, eval_batch_size);
  std::vector<std::vector<double>> merged(hp.base.size());
  for (std::size_t i = 0; i < hp.base.size(); ++i) {
    merged[i].resize(hp.base[i].size());
    for (std::size_t j = 0; j < merged[i].size(); ++j)
      merged[i][j] = q * hp.base[i][j] + (1.0 - q) * hp.ndf[i][j];
  }
  MetricReport r;
  r.k = k;
  r.cases = merged.size();
  r.hr = hit_rate_at_k(merged, hp.targets, k);
  r.mrr = mrr_at_k(merged, hp.targets, k);
  return r;
}

std::vector<double> default_q_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
  return g;
}

TuneResult tune_q(const SrPredictAo& model, const std::vector<Session>& validation,
                  const std::vector<double>& grid, std::size_t k,
                  std::size_t eval_batch_size) {
  if (grid.empty()) throw std::invalid_argument("tune-q: empty grid");
  HeadPredictions hp = predict_heads(model, validation, eval_batch_size);
  TuneResult res;
  bool first = true;
  std::vector<std::vector<double>> merged(hp.base.size());
  for (double q : grid) {
    for (std::size_t i = 0; i < hp.base.size(); ++i) {
      merged[i].resize(hp.base[i].size());
      for (std::size_t j = 0; j < merged[i].size(); ++j)
        merged[i][j] = q * hp.base[i][j] + (1.0 - q) * hp.ndf[i][j];
    }
    double hr = hit_rate_at_k(merged, hp.targets, k);
    res.grid.emplace_back(q, hr);
    if (first || hr > res.best_hr || (hr == res.best_hr && q < res.best_q)) {
      res.best_q = q;
      res.best_hr = hr;
      first = false;
    }
  }
  return res;
}

}  // namespace ndfsr
