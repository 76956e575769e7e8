#include "ndfsr/forest.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ndfsr/model.hpp"

namespace ndfsr {

PruningMode parse_pruning_mode(const std::string& s) {
  if (s == "off") return PruningMode::Off;
  if (s == "exclude") return PruningMode::Exclude;
  if (s == "literal-zero") return PruningMode::LiteralZero;
  throw std::invalid_argument("unknown pruning mode '" + s +
                              "' (want off|exclude|literal-zero)");
}

const char* pruning_mode_name(PruningMode m) {
  switch (m) {
    case PruningMode::Off: return "off";
    case PruningMode::Exclude: return "exclude";
    case PruningMode::LiteralZero: return "literal-zero";
  }
  return "?";
}

void ForestConfig::validate() const {
  if (trees < 1) throw std::invalid_argument("forest: need T >= 1");
  if (depth < 1) throw std::invalid_argument("forest: need depth >= 1");
  if (pruning_rate < 0.0 || pruning_rate >= 1.0)
    throw std::invalid_argument("forest: pruning rate must lie in [0,1)");
  if (keep_fraction <= 0.0 || keep_fraction > 1.0)
    throw std::invalid_argument("forest: keep fraction must lie in (0,1]");
  if (merger_q < 0.0 || merger_q > 1.0)
    throw std::invalid_argument("forest: merger weight q must lie in [0,1]");
}

PruneMask PruneMask::draw(std::size_t rows, std::size_t leaves, double rate, Rng& rng) {
  PruneMask m;
  m.rows = rows;
  m.leaves = leaves;
  m.drop.assign(rows * leaves, 0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (;;) {
      bool all = true;
      for (std::size_t l = 0; l < leaves; ++l) {
        bool d = rng.bernoulli(rate);
        m.drop[i * leaves + l] = d ? 1 : 0;
        if (!d) all = false;
      }
      if (!all) break;  // at least one leaf must survive
    }
  }
  return m;
}

Tensor prune_leaf_probs(Graph& g, const Tensor& p_leaf, PruningMode mode,
                        const PruneMask* mask) {
  if (mode == PruningMode::Off) return p_leaf;
  if (mask == nullptr) return g.softmax_last(p_leaf);  // evaluation: no mask
  if (mask->drop.size() != p_leaf.size())
    throw std::invalid_argument("prune: mask size does not match leaf probabilities");
  if (mode == PruningMode::Exclude) {
    return g.softmax_last(g.masked_fill(p_leaf, mask->drop));
  }
  // literal-zero: masked entries contribute exp(0) to the softmax
  std::vector<double> keep(mask->drop.size());
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = mask->drop[i] ? 0.0 : 1.0;
  Tensor keep_t = Tensor::leaf(p_leaf.shape(), std::move(keep));
  return g.softmax_last(g.mul(p_leaf, keep_t));
}

Forest::Forest(const ForestConfig& cfg, std::size_t latent_dim, std::size_t num_items,
               bool softmax_leaves, Rng& rng)
    : cfg_(cfg), latent_dim_(latent_dim), num_items_(num_items),
      softmax_leaves_(softmax_leaves) {
  cfg_.validate();
  std::size_t gamma = static_cast<std::size_t>(
      std::ceil(cfg_.keep_fraction * static_cast<double>(latent_dim)));
  gamma = std::max<std::size_t>(1, std::min(gamma, latent_dim));
  std::size_t splits = (std::size_t{1} << cfg_.depth) - 1;
  std::size_t leaves = splits + 1;
  trees_.reserve(cfg_.trees);
  for (std::size_t t = 0; t < cfg_.trees; ++t) {
    NeuralDecisionTree tree;
    // sample gamma feature indices without replacement
    std::vector<std::size_t> all(latent_dim);
    for (std::size_t i = 0; i < latent_dim; ++i) all[i] = i;
    for (std::size_t i = 0; i < gamma; ++i) {
      std::size_t j = i + rng.uniform_index(latent_dim - i);
      std::swap(all[i], all[j]);
    }
    tree.feature_mask.assign(all.begin(), all.begin() + gamma);
    std::sort(tree.feature_mask.begin(), tree.feature_mask.end());
    tree.w1 = init_uniform({gamma, 2 * gamma}, gamma, rng);
    tree.b1 = init_uniform({2 * gamma}, gamma, rng);
    tree.w2 = init_uniform({2 * gamma, splits}, 2 * gamma, rng);
    tree.b2 = init_uniform({splits}, 2 * gamma, rng);
    tree.pi = init_uniform({leaves, num_items}, num_items, rng);
    trees_.push_back(std::move(tree));
  }
}

Tensor Forest::select_features(Graph& g, std::size_t tree_index,
                               const Tensor& latent_batch) const {
  const auto& mask = trees_[tree_index].feature_mask;
  if (latent_batch.rank() != 2 || latent_batch.extent(1) != latent_dim_)
    throw std::invalid_argument("forest: want (m," + std::to_string(latent_dim_) +
                                ") latents, got " + shape_str(latent_batch.shape()));
  return g.transpose(g.gather_rows(g.transpose(latent_batch), mask));
}

Tensor Forest::route(Graph& g, std::size_t tree_index, const Tensor& masked_latent) const {
  const auto& tree = trees_[tree_index];
  Tensor h = g.sigmoid(g.add_rowvec(g.matmul(masked_latent, tree.w1), tree.b1));
  Tensor scores = g.add_rowvec(g.matmul(h, tree.w2), tree.b2);
  std::size_t splits = scores.extent(1);
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!std::isfinite(scores.values()[i]))
      throw std::runtime_error("route: non-finite decision score at node " +
                               std::to_string(i % splits + 1));
  return g.tree_route(g.sigmoid(scores), cfg_.depth);
}

Tensor Forest::tree_predict(Graph& g, std::size_t tree_index, const Tensor& latent_batch,
                            const PruneMask* mask) const {
  Tensor p_leaf = route(g, tree_index, select_features(g, tree_index, latent_batch));
  Tensor pruned = prune_leaf_probs(g, p_leaf, cfg_.pruning, mask);
  const Tensor& pi = trees_[tree_index].pi;
  Tensor leaf_dist = softmax_leaves_ ? g.softmax_last(pi) : pi;
  return g.matmul(pruned, leaf_dist);
}

Tensor Forest::predict(Graph& g, const Tensor& latent_batch, bool training,
                       Rng* prune_rng) const {
  bool want_mask = training && cfg_.pruning != PruningMode::Off;
  if (want_mask && prune_rng == nullptr)
    throw std::invalid_argument("forest: training-time pruning needs an rng");
  Tensor sum;
  for (std::size_t t = 0; t < trees_.size(); ++t) {
    PruneMask mask;
    if (want_mask)
      mask = PruneMask::draw(latent_batch.extent(0), num_leaves(), cfg_.pruning_rate,
                             *prune_rng);
    Tensor p = tree_predict(g, t, latent_batch, want_mask ? &mask : nullptr);
    sum = t == 0 ? p : g.add(sum, p);
  }
  return g.scalar_mul(sum, 1.0 / static_cast<double>(trees_.size()));
}

std::vector<Tensor> Forest::parameters() {
  std::vector<Tensor> out;
  for (auto& t : trees_) {
    out.push_back(t.w1);
    out.push_back(t.b1);
    out.push_back(t.w2);
    out.push_back(t.b2);
    out.push_back(t.pi);
  }
  return out;
}

}  // namespace ndfsr
