#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ndfsr/graph.hpp"
#include "ndfsr/rng.hpp"
#include "ndfsr/tensor.hpp"

namespace ndfsr {

enum class PruningMode : std::uint8_t {
  Off,          // leaf-reaching probabilities used as-is
  Exclude,      // masked leaves dropped from the softmax (default)
  LiteralZero,  // masked leaves set to 0, softmax over all entries
};

PruningMode parse_pruning_mode(const std::string& s);
const char* pruning_mode_name(PruningMode m);

struct ForestConfig {
  std::size_t trees = 128;
  std::size_t depth = 5;
  double pruning_rate = 0.3;
  double keep_fraction = 0.8;
  PruningMode pruning = PruningMode::Exclude;
  double merger_q = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
};

// One balanced soft tree: a two-layer decision network scores every split
// (breadth-first node order), sigmoid turns scores into left-routing
// probabilities, and each leaf holds a trainable score row over items.
struct NeuralDecisionTree {
  Tensor w1, b1;  // (gamma, 2*gamma), (2*gamma)
  Tensor w2, b2;  // (2*gamma, 2^d - 1), (2^d - 1)
  Tensor pi;      // (2^d, N)
  std::vector<std::size_t> feature_mask;  // fixed subset of latent indices, ascending
};

// Per-batch pruning decisions; one flag per (row, leaf). Drawn up front so a
// recorded forward pass is replayable (gradient checks, bit-reproducibility).
struct PruneMask {
  std::size_t rows = 0;
  std::size_t leaves = 0;
  std::vector<std::uint8_t> drop;  // rows x leaves

  // each leaf dropped with probability rate; rows that come out fully dropped
  // are redrawn so at least one leaf always survives
  static PruneMask draw(std::size_t rows, std::size_t leaves, double rate, Rng& rng);
};

// Softmax-renormalized leaf probabilities after masking, per the configured
// mode. training=false applies the same transform without any mask.
Tensor prune_leaf_probs(Graph& g, const Tensor& p_leaf, PruningMode mode,
                        const PruneMask* mask);

class Forest {
 public:
  // softmax_leaves: row-softmax pi before mixing (next-item distribution);
  // false = raw leaf values (scalar regression head)
  Forest(const ForestConfig& cfg, std::size_t latent_dim, std::size_t num_items,
         bool softmax_leaves, Rng& rng);

  const ForestConfig& config() const { return cfg_; }
  std::size_t latent_dim() const { return latent_dim_; }
  std::size_t num_items() const { return num_items_; }
  std::size_t num_leaves() const { return std::size_t{1} << cfg_.depth; }
  std::vector<NeuralDecisionTree>& trees() { return trees_; }
  const std::vector<NeuralDecisionTree>& trees() const { return trees_; }

  // leaf-reaching probabilities for one tree, masked latent already selected:
  // X (m, gamma) -> (m, 2^d)
  Tensor route(Graph& g, std::size_t tree_index, const Tensor& masked_latent) const;

  // full single-tree head: (m, n') latents -> (m, N) distribution
  Tensor tree_predict(Graph& g, std::size_t tree_index, const Tensor& latent_batch,
                      const PruneMask* mask) const;

  // average over trees in ascending index order; mask != nullptr means
  // training-time pruning (one mask shared across trees is not allowed --
  // pass per-tree masks via predict())
  Tensor predict(Graph& g, const Tensor& latent_batch, bool training, Rng* prune_rng) const;

  std::vector<Tensor> parameters();

 private:
  Tensor select_features(Graph& g, std::size_t tree_index, const Tensor& latent_batch) const;

  ForestConfig cfg_;
  std::size_t latent_dim_;
  std::size_t num_items_;
  bool softmax_leaves_;
  std::vector<NeuralDecisionTree> trees_;
};

}  // namespace ndfsr
