#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ndfsr/rng.hpp"

namespace ndfsr {

// Bijection raw item token -> dense index in [0, N). Built from the training
// split only, in first-appearance order.
class ItemVocabulary {
 public:
  std::size_t size() const { return tokens_.size(); }

  std::size_t add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    std::size_t id = tokens_.size();
    index_.emplace(token, id);
    tokens_.push_back(token);
    return id;
  }

  // -1 if unknown
  long long lookup(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? -1 : static_cast<long long>(it->second);
  }

  const std::string& token(std::size_t id) const { return tokens_.at(id); }

 private:
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> tokens_;
};

struct Session {
  std::vector<std::size_t> items;  // dense indices, length >= 1
  std::size_t target = 0;
};

// A raw session straight from a file: tokens, last one the target.
using RawSession = std::vector<std::string>;

struct SessionDataset {
  ItemVocabulary vocab;
  std::vector<Session> train;
  std::vector<Session> test;
  std::size_t dropped_test_items = 0;     // unseen items removed from test sessions
  std::size_t dropped_test_sessions = 0;  // test sessions left unusable
};

// One session per line, single-space-separated raw tokens, final token the
// target. Lines starting with '#' are comments. Malformed lines (fewer than
// two tokens) are reported with their line number.
std::vector<RawSession> load_session_file(const std::string& path);

void save_session_file(const std::string& path, const std::vector<RawSession>& sessions);

// Vocabulary from the training split only; unseen items are dropped from test
// sessions, and test sessions whose target is unseen (or with no items left)
// are dropped, both with counts reported on the dataset.
SessionDataset build_dataset(const std::vector<RawSession>& train,
                             const std::vector<RawSession>& test);

SessionDataset load_dataset(const std::string& train_path, const std::string& test_path);

// [a,b,c]->d yields ([a]->b, [a,b]->c, [a,b,c]->d). Applies to train only;
// test sessions are kept as-is.
SessionDataset augment_prefixes(const SessionDataset& ds);

struct SyntheticSpec {
  std::uint64_t seed = 1;
  std::size_t num_items = 100;      // N >= 10
  std::size_t num_sessions = 2000;  // training sessions
  double test_fraction = 0.2;       // extra sessions generated for the test split
  double noise_rate = 0.2;          // probability a click/target ignores the rule
  std::size_t min_length = 2;
  std::size_t max_length = 8;
};

// Planted second-order Markov rule: the next item is a fixed nonlinear
// function of the two most recent items, with uniform noise clicks mixed in.
std::size_t synthetic_rule(std::size_t a, std::size_t b, std::size_t n, std::uint64_t seed);

SessionDataset generate_synthetic(const SyntheticSpec& spec);

// Raw token form for writing to disk (tokens are the decimal dense indices).
std::vector<RawSession> to_raw(const std::vector<Session>& sessions);

}  // namespace ndfsr
