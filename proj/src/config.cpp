#include "transrec/config.hpp"

#include <cstdio>
#include <fstream>

namespace transrec {

namespace {

const std::map<std::string, std::string>& default_entries() {
  static const std::map<std::string, std::string> defaults = {
      {"data.split", ""},
      {"model.max_len", "50"},
      {"model.dim", "64"},
      {"model.layers", "2"},
      {"model.heads", "1"},
      {"model.dropout", "0.2"},
      {"loss.name", "trans_bpr"},
      {"loss.gamma", "1.0"},
      {"sampler.mode", "pop"},
      {"sampler.transitivity", "weak"},
      {"sampler.kind", "auto"},
      {"sampler.alpha", "1.0"},
      {"sampler.n_j", "50"},
      {"sampler.n_k", "50"},
      {"sampler.exclude_history", "false"},
      {"sampler.max_retries", "100"},
      {"train.optimizer", "adam"},
      {"train.lr", "0.0003"},
      {"train.weight_decay", "0"},
      {"train.batch_size", "256"},
      {"train.epochs", "200"},
      {"train.eval_every", "1"},
      {"train.patience", "20"},
      {"train.seed", "42"},
      {"eval.k", "10"},
      {"eval.batch", "64"},
      {"eval.exclude_history", "false"},
      {"eval.buckets", "5"},
      {"eval.split", "test"},
  };
  return defaults;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

ExperimentConfig::ExperimentConfig() : entries_(default_entries()) {}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file " + path);
  ExperimentConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw config_error(path + ":" + std::to_string(lineno) + ": expected key=value, got '" +
                         t + "'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    try {
      cfg.set(key, value);
    } catch (const config_error& e) {
      throw config_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

void ExperimentConfig::apply_override(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw config_error("override '" + spec + "' is not of the form key=value");
  set(trim(spec.substr(0, eq)), trim(spec.substr(eq + 1)));
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw config_error("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw config_error("unknown config key '" + key + "'");
  return it->second;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::string ExperimentConfig::digest() const {
  std::string joined;
  for (const auto& [k, v] : entries_) {  // std::map iterates in key order
    joined += k;
    joined += '=';
    joined += v;
    joined += '\n';
  }
  return fnv1a_hex(joined);
}

std::uint64_t ExperimentConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    if (v.empty() || v[0] == '-') throw std::invalid_argument(v);
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error("key " + key + ": expected a non-negative integer, got '" + v + "'");
  }
}

std::size_t ExperimentConfig::get_size(const std::string& key) const {
  return static_cast<std::size_t>(get_u64(key));
}

double ExperimentConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error("key " + key + ": expected a number, got '" + v + "'");
  }
}

bool ExperimentConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw config_error("key " + key + ": expected true/false, got '" + v + "'");
}

LossKind ExperimentConfig::loss() const {
  try {
    return parse_loss_name(get("loss.name"));
  } catch (const loss_error& e) {
    throw config_error(std::string("key loss.name: ") + e.what());
  }
}

EncoderConfig ExperimentConfig::encoder_config(std::size_t num_items) const {
  EncoderConfig cfg;
  cfg.max_len = get_size("model.max_len");
  cfg.dim = get_size("model.dim");
  cfg.layers = get_size("model.layers");
  cfg.heads = get_size("model.heads");
  cfg.dropout = get_double("model.dropout");
  cfg.vocab = num_items + 1;
  try {
    cfg.validate();
  } catch (const encoder_error& e) {
    throw config_error(std::string("model config: ") + e.what());
  }
  return cfg;
}

SamplerConfig ExperimentConfig::sampler_config() const {
  SamplerConfig cfg;
  const std::string& mode = get("sampler.mode");
  if (mode == "pop")
    cfg.mode = SamplerMode::pop;
  else if (mode == "niche")
    cfg.mode = SamplerMode::niche;
  else
    throw config_error("key sampler.mode: expected pop or niche, got '" + mode + "'");

  const std::string& tr = get("sampler.transitivity");
  if (tr == "weak")
    cfg.transitivity = Transitivity::weak;
  else if (tr == "strict")
    cfg.transitivity = Transitivity::strict;
  else if (tr == "disjoint")
    cfg.transitivity = Transitivity::disjoint;
  else
    throw config_error("key sampler.transitivity: expected weak, strict or disjoint, got '" +
                       tr + "'");

  cfg.alpha = get_double("sampler.alpha");
  if (!(cfg.alpha >= 0.0))
    throw config_error("key sampler.alpha: must be non-negative");
  cfg.n_j = get_size("sampler.n_j");
  cfg.n_k = get_size("sampler.n_k");
  if (cfg.n_j == 0 || cfg.n_k == 0)
    throw config_error("sampler set sizes must be positive");
  cfg.exclude_history = get_bool("sampler.exclude_history");
  cfg.max_retries = get_size("sampler.max_retries");
  return cfg;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig cfg;
  cfg.loss = loss();
  cfg.gamma = get_double("loss.gamma");
  if (!(cfg.gamma >= 0.0)) throw config_error("key loss.gamma: must be non-negative");

  const std::string& opt = get("train.optimizer");
  if (opt == "adam")
    cfg.opt.kind = OptimizerKind::adam;
  else if (opt == "sgd")
    cfg.opt.kind = OptimizerKind::sgd;
  else
    throw config_error("key train.optimizer: expected adam or sgd, got '" + opt + "'");
  cfg.opt.lr = get_double("train.lr");
  if (!(cfg.opt.lr > 0.0)) throw config_error("key train.lr: must be positive");
  cfg.opt.weight_decay = get_double("train.weight_decay");
  if (!(cfg.opt.weight_decay >= 0.0))
    throw config_error("key train.weight_decay: must be non-negative");

  cfg.batch_size = get_size("train.batch_size");
  cfg.epochs = get_size("train.epochs");
  cfg.eval_every = get_size("train.eval_every");
  cfg.patience = get_size("train.patience");
  if (cfg.batch_size == 0 || cfg.epochs == 0 || cfg.eval_every == 0)
    throw config_error("train sizes must be positive");
  cfg.seed = get_u64("train.seed");
  cfg.eval_k = eval_k();
  cfg.eval_batch = eval_batch();
  if (cfg.eval_k == 0 || cfg.eval_batch == 0)
    throw config_error("eval sizes must be positive");
  return cfg;
}

std::string ExperimentConfig::eval_split() const {
  const std::string& v = get("eval.split");
  if (v != "valid" && v != "test")
    throw config_error("key eval.split: expected valid or test, got '" + v + "'");
  return v;
}

void ExperimentConfig::validate() const {
  const LossKind kind = loss();
  const std::string& sk = get("sampler.kind");
  const bool needs_sets = uses_sets(kind);
  if (sk == "auto") {
    // trainer picks the right batch shape
  } else if (sk == "quad") {
    if (needs_sets)
      throw config_error("loss.name=" + loss_name(kind) +
                         " needs set batches, but sampler.kind=quad");
  } else if (sk == "set") {
    if (!needs_sets)
      throw config_error("loss.name=" + loss_name(kind) +
                         " needs per-position draws, but sampler.kind=set");
  } else {
    throw config_error("key sampler.kind: expected auto, quad or set, got '" + sk + "'");
  }

  // force-parse everything so bad values surface before any compute
  encoder_config(1);
  sampler_config();
  train_config();
  eval_exclude_history();
  if (eval_buckets() == 0) throw config_error("key eval.buckets: must be positive");
  eval_split();
}

}  // namespace transrec
