#pragma once

#include <vector>

#include "ndfsr/data.hpp"
#include "ndfsr/graph.hpp"
#include "ndfsr/rng.hpp"
#include "ndfsr/tensor.hpp"

namespace ndfsr {

// Any session encoder: maps a session to a latent vector of fixed dimension,
// with trainable parameters that participate in backward.
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual std::size_t latent_dim() const = 0;
  virtual Tensor encode(Graph& g, const Session& s) const = 0;
  virtual std::vector<Tensor> parameters() = 0;

  // rows = per-session latents
  Tensor encode_batch(Graph& g, const std::vector<Session>& batch) const {
    std::vector<Tensor> rows;
    rows.reserve(batch.size());
    for (const auto& s : batch) rows.push_back(encode(g, s));
    return g.stack_rows(rows);
  }
};

// Attention-weighted mean of item embeddings concatenated with the last
// item's embedding, then a linear projection. The embedding matrix is shared
// with the scoring step of the linear predictor.
class ReferenceEncoder : public Encoder {
 public:
  ReferenceEncoder(std::size_t num_items, std::size_t embed_dim, std::size_t latent_dim,
                   Rng& rng);
  // wrap existing parameters (checkpoint load)
  ReferenceEncoder(Tensor embedding, Tensor attn, Tensor proj);

  std::size_t latent_dim() const override { return proj_.extent(1); }
  std::size_t embed_dim() const { return embedding_.extent(1); }
  std::size_t num_items() const { return embedding_.extent(0); }

  Tensor encode(Graph& g, const Session& s) const override;
  std::vector<Tensor> parameters() override { return {embedding_, attn_, proj_}; }

  Tensor embedding() const { return embedding_; }
  Tensor attn() const { return attn_; }
  Tensor proj() const { return proj_; }

 private:
  Tensor embedding_;  // A, (N, n)
  Tensor attn_;       // (n)
  Tensor proj_;       // (2n, n')
};

// s_h = Linear(z); c = A s_h; y_base = softmax(c). No bias anywhere.
class LinearPredictor {
 public:
  LinearPredictor(std::size_t latent_dim, std::size_t embed_dim, Tensor tied_embedding,
                  Rng& rng);
  LinearPredictor(Tensor linear, Tensor tied_embedding);

  // Z: (m, n') -> probabilities (m, N)
  Tensor predict(Graph& g, const Tensor& latent_batch) const;
  // scores before the softmax, (m, N)
  Tensor scores(Graph& g, const Tensor& latent_batch) const;

  std::vector<Tensor> parameters() { return {linear_}; }
  Tensor linear() const { return linear_; }

 private:
  Tensor linear_;     // (n', n)
  Tensor embedding_;  // tied A, (N, n)
};

// uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)]
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

}  // namespace ndfsr
