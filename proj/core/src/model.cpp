#include "ndfsr/model.hpp"

#include <cmath>
#include <stdexcept>

namespace ndfsr {

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::leaf(std::move(shape), std::move(v), /*requires_grad=*/true);
}

ReferenceEncoder::ReferenceEncoder(std::size_t num_items, std::size_t embed_dim,
                                   std::size_t latent_dim, Rng& rng)
    : embedding_(init_uniform({num_items, embed_dim}, embed_dim, rng)),
      attn_(init_uniform({embed_dim}, embed_dim, rng)),
      proj_(init_uniform({2 * embed_dim, latent_dim}, 2 * embed_dim, rng)) {}

ReferenceEncoder::ReferenceEncoder(Tensor embedding, Tensor attn, Tensor proj)
    : embedding_(std::move(embedding)), attn_(std::move(attn)), proj_(std::move(proj)) {}

Tensor ReferenceEncoder::encode(Graph& g, const Session& s) const {
  if (s.items.empty()) throw std::invalid_argument("encode: empty session");
  for (auto it : s.items)
    if (it >= num_items())
      throw std::invalid_argument("encode: item index " + std::to_string(it) +
                                  " out of range for N = " + std::to_string(num_items()));
  Tensor emb = g.gather_rows(embedding_, s.items);          // (l, n)
  Tensor att_scores = g.matmul(emb, attn_);                 // (l)
  Tensor alpha = g.softmax_last(att_scores);                // (l)
  Tensor mean = g.matmul(alpha, emb);                       // (n)
  Tensor last = g.reshape(g.gather_rows(embedding_, {s.items.back()}), {embed_dim()});
  Tensor cat = g.concat(mean, last, 0);                     // (2n)
  return g.matmul(cat, proj_);                              // (n')
}

LinearPredictor::LinearPredictor(std::size_t latent_dim, std::size_t embed_dim,
                                 Tensor tied_embedding, Rng& rng)
    : linear_(init_uniform({latent_dim, embed_dim}, latent_dim, rng)),
      embedding_(std::move(tied_embedding)) {}

LinearPredictor::LinearPredictor(Tensor linear, Tensor tied_embedding)
    : linear_(std::move(linear)), embedding_(std::move(tied_embedding)) {}

Tensor LinearPredictor::scores(Graph& g, const Tensor& latent_batch) const {
  Tensor sh = g.matmul(latent_batch, linear_);              // (m, n)
  return g.matmul(sh, g.transpose(embedding_));             // (m, N)
}

Tensor LinearPredictor::predict(Graph& g, const Tensor& latent_batch) const {
  return g.softmax_last(scores(g, latent_batch));
}

}  // namespace ndfsr
