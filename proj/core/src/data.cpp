#include "ndfsr/data.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ndfsr {

std::vector<RawSession> load_session_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open session file: " + path);
  std::vector<RawSession> sessions;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    RawSession tokens;
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
    if (tokens.empty()) continue;
    if (tokens.size() < 2)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": session needs at least one item and a target");
    sessions.push_back(std::move(tokens));
  }
  if (sessions.empty()) throw std::runtime_error(path + ": empty dataset");
  return sessions;
}

void save_session_file(const std::string& path, const std::vector<RawSession>& sessions) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write session file: " + path);
  for (const auto& s : sessions) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out << ' ';
      out << s[i];
    }
    out << '\n';
  }
}

SessionDataset build_dataset(const std::vector<RawSession>& train,
                             const std::vector<RawSession>& test) {
  SessionDataset ds;
  for (const auto& raw : train) {
    Session s;
    for (std::size_t i = 0; i + 1 < raw.size(); ++i) s.items.push_back(ds.vocab.add(raw[i]));
    s.target = ds.vocab.add(raw.back());
    ds.train.push_back(std::move(s));
  }
  for (const auto& raw : test) {
    Session s;
    for (std::size_t i = 0; i + 1 < raw.size(); ++i) {
      long long id = ds.vocab.lookup(raw[i]);
      if (id < 0) {
        ++ds.dropped_test_items;
        continue;
      }
      s.items.push_back(static_cast<std::size_t>(id));
    }
    long long tgt = ds.vocab.lookup(raw.back());
    if (tgt < 0 || s.items.empty()) {
      ++ds.dropped_test_sessions;
      continue;
    }
    s.target = static_cast<std::size_t>(tgt);
    ds.test.push_back(std::move(s));
  }
  return ds;
}

SessionDataset load_dataset(const std::string& train_path, const std::string& test_path) {
  return build_dataset(load_session_file(train_path), load_session_file(test_path));
}

SessionDataset augment_prefixes(const SessionDataset& ds) {
  SessionDataset out;
  out.vocab = ds.vocab;
  out.test = ds.test;
  out.dropped_test_items = ds.dropped_test_items;
  out.dropped_test_sessions = ds.dropped_test_sessions;
  for (const auto& s : ds.train) {
    for (std::size_t cut = 1; cut < s.items.size(); ++cut) {
      Session p;
      p.items.assign(s.items.begin(), s.items.begin() + cut);
      p.target = s.items[cut];
      out.train.push_back(std::move(p));
    }
    out.train.push_back(s);
  }
  return out;
}

std::size_t synthetic_rule(std::size_t a, std::size_t b, std::size_t n, std::uint64_t seed) {
  // second-order with an interaction term; small multipliers keep the map
  // learnable from embeddings at desk scale
  std::uint64_t mix = splitmix64(seed ^ 0x5eed5eedULL);
  std::size_t c1 = 1 + mix % 7;
  std::size_t c2 = 2 + (mix >> 8) % 7;
  return (c1 * a + c2 * b + (a * b) % 13 + (mix >> 16) % n) % n;
}

SessionDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_items < 10) throw std::invalid_argument("generate-synthetic: need N >= 10");
  std::size_t n_test = static_cast<std::size_t>(spec.num_sessions * spec.test_fraction);
  std::vector<RawSession> train_raw, test_raw;

  auto gen_split = [&](std::size_t count, Rng& rng, std::vector<RawSession>& out) {
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t len = spec.min_length +
                        rng.uniform_index(spec.max_length - spec.min_length + 1);
      std::vector<std::size_t> items;
      items.push_back(rng.uniform_index(spec.num_items));
      items.push_back(rng.uniform_index(spec.num_items));
      while (items.size() < len) {
        std::size_t a = items[items.size() - 2], b = items.back();
        std::size_t next = rng.bernoulli(spec.noise_rate)
                               ? rng.uniform_index(spec.num_items)
                               : synthetic_rule(a, b, spec.num_items, spec.seed);
        items.push_back(next);
      }
      std::size_t a = items[items.size() - 2], b = items.back();
      std::size_t target = rng.bernoulli(spec.noise_rate)
                               ? rng.uniform_index(spec.num_items)
                               : synthetic_rule(a, b, spec.num_items, spec.seed);
      RawSession raw;
      for (auto it : items) raw.push_back(std::to_string(it));
      raw.push_back(std::to_string(target));
      out.push_back(std::move(raw));
    }
  };

  Rng train_rng(derive_seed(spec.seed, "synth-train"));
  Rng test_rng(derive_seed(spec.seed, "synth-test"));
  gen_split(spec.num_sessions, train_rng, train_raw);
  gen_split(n_test, test_rng, test_raw);

  // identity vocabulary (token "i" -> index i) so the planted rule holds on
  // dense indices directly
  SessionDataset ds;
  for (std::size_t i = 0; i < spec.num_items; ++i) ds.vocab.add(std::to_string(i));
  auto densify = [&](const std::vector<RawSession>& raws, std::vector<Session>& out) {
    for (const auto& raw : raws) {
      Session s;
      for (std::size_t i = 0; i + 1 < raw.size(); ++i)
        s.items.push_back(static_cast<std::size_t>(ds.vocab.lookup(raw[i])));
      s.target = static_cast<std::size_t>(ds.vocab.lookup(raw.back()));
      out.push_back(std::move(s));
    }
  };
  densify(train_raw, ds.train);
  densify(test_raw, ds.test);
  return ds;
}

std::vector<RawSession> to_raw(const std::vector<Session>& sessions) {
  std::vector<RawSession> out;
  out.reserve(sessions.size());
  for (const auto& s : sessions) {
    RawSession raw;
    for (auto it : s.items) raw.push_back(std::to_string(it));
    raw.push_back(std::to_string(s.target));
    out.push_back(std::move(raw));
  }
  return out;
}

}  // namespace ndfsr
