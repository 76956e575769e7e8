#pragma once

#include <cstdint>
#include <string>

#include "ndfsr/forest.hpp"

namespace ndfsr {

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t epochs = 5;
  std::size_t batch_size = 64;       // >= 3 when the alleviator is on
  std::size_t eval_batch_size = 64;  // alleviator statistics at evaluation time
  double learning_rate = 1e-3;
  std::size_t embed_dim = 32;   // n
  std::size_t latent_dim = 32;  // n'
  bool alleviator = true;       // batch-normalize then James-Stein shrink
  bool positive_part_js = false;
  std::string optimizer = "adam";  // adam | sgd
  bool augment = false;            // prefix augmentation of the training split
  bool detach_ndf = false;         // base-only training arm: forest untouched
  std::size_t metric_k = 20;
  ForestConfig forest;

  void validate() const;
};

// Line-oriented `key = value` text; '#' comments and blank lines allowed;
// unknown keys rejected.
TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config(const std::string& path);

// Canonical form: fixed key order, one `key = value` per line. Parsing the
// output reproduces the config exactly.
std::string serialize_config(const TrainConfig& cfg);

// applies a single `key=value` override
void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value);

}  // namespace ndfsr
