#include "ndfsr/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ndfsr {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw std::invalid_argument("config: key '" + key + "' wants on/off, got '" + v + "'");
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    std::uint64_t r = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' wants an integer, got '" + v + "'");
  }
}

double parse_f64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' wants a number, got '" + v + "'");
  }
}

}  // namespace

void TrainConfig::validate() const {
  forest.validate();
  if (epochs == 0) throw std::invalid_argument("config: epochs must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("config: batch-size must be >= 1");
  if (alleviator && batch_size < 3)
    throw std::invalid_argument("config: batch-size must be >= 3 when the alleviator is on");
  if (optimizer != "adam" && optimizer != "sgd")
    throw std::invalid_argument("config: optimizer must be adam or sgd");
  if (embed_dim == 0 || latent_dim == 0)
    throw std::invalid_argument("config: dims must be positive");
  if (metric_k == 0) throw std::invalid_argument("config: metric-k must be >= 1");
}

void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "seed") cfg.seed = parse_u64(value, key);
  else if (key == "epochs") cfg.epochs = parse_u64(value, key);
  else if (key == "batch-size") cfg.batch_size = parse_u64(value, key);
  else if (key == "eval-batch-size") cfg.eval_batch_size = parse_u64(value, key);
  else if (key == "learning-rate") cfg.learning_rate = parse_f64(value, key);
  else if (key == "embed-dim") cfg.embed_dim = parse_u64(value, key);
  else if (key == "latent-dim") cfg.latent_dim = parse_u64(value, key);
  else if (key == "alleviator") cfg.alleviator = parse_bool(value, key);
  else if (key == "positive-part-js") cfg.positive_part_js = parse_bool(value, key);
  else if (key == "optimizer") cfg.optimizer = value;
  else if (key == "augment") cfg.augment = parse_bool(value, key);
  else if (key == "detach-ndf") cfg.detach_ndf = parse_bool(value, key);
  else if (key == "metric-k") cfg.metric_k = parse_u64(value, key);
  else if (key == "trees") cfg.forest.trees = parse_u64(value, key);
  else if (key == "depth") cfg.forest.depth = parse_u64(value, key);
  else if (key == "pruning-rate") cfg.forest.pruning_rate = parse_f64(value, key);
  else if (key == "keep-fraction") cfg.forest.keep_fraction = parse_f64(value, key);
  else if (key == "pruning") cfg.forest.pruning = parse_pruning_mode(value);
  else if (key == "q") cfg.forest.merger_q = parse_f64(value, key);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": want 'key = value', got '" + t + "'");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    apply_override(cfg, key, value);
  }
  // seeds propagate: the forest stream is derived from the root seed
  cfg.forest.seed = cfg.seed;
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const TrainConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  out << "seed = " << cfg.seed << "\n";
  out << "epochs = " << cfg.epochs << "\n";
  out << "batch-size = " << cfg.batch_size << "\n";
  out << "eval-batch-size = " << cfg.eval_batch_size << "\n";
  out << "learning-rate = " << cfg.learning_rate << "\n";
  out << "embed-dim = " << cfg.embed_dim << "\n";
  out << "latent-dim = " << cfg.latent_dim << "\n";
  out << "alleviator = " << (cfg.alleviator ? "on" : "off") << "\n";
  out << "positive-part-js = " << (cfg.positive_part_js ? "on" : "off") << "\n";
  out << "optimizer = " << cfg.optimizer << "\n";
  out << "augment = " << (cfg.augment ? "on" : "off") << "\n";
  out << "detach-ndf = " << (cfg.detach_ndf ? "on" : "off") << "\n";
  out << "metric-k = " << cfg.metric_k << "\n";
  out << "trees = " << cfg.forest.trees << "\n";
  out << "depth = " << cfg.forest.depth << "\n";
  out << "pruning-rate = " << cfg.forest.pruning_rate << "\n";
  out << "keep-fraction = " << cfg.forest.keep_fraction << "\n";
  out << "pruning = " << pruning_mode_name(cfg.forest.pruning) << "\n";
  out << "q = " << cfg.forest.merger_q << "\n";
  return out.str();
}

}  // namespace ndfsr
