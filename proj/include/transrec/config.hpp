#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "transrec/encoder.hpp"
#include "transrec/losses.hpp"
#include "transrec/sampling.hpp"
#include "transrec/trainer.hpp"

namespace transrec {

class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a of the given bytes, as 16 lowercase hex chars.
std::string fnv1a_hex(const std::string& text);

/// Flat key-value experiment configuration. Every key has a default; unknown
/// keys are rejected up front so typos cannot silently fall back. The digest
/// is a 64-bit FNV-1a over the sorted `key=value` lines, so it is stable under
/// reordering and identical whenever the effective settings are identical.
class ExperimentConfig {
 public:
  ExperimentConfig();

  /// Lines of `key = value`; blank lines and lines starting with '#' skipped.
  static ExperimentConfig from_file(const std::string& path);

  /// One `key=value` pair, e.g. a --key=value command-line override.
  void apply_override(const std::string& spec);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

  std::string digest() const;  // 16 hex chars

  /// Cross-key checks, run before any compute: parseable values and a
  /// loss/sampler batch-shape match (set losses need set batches, pairwise
  /// losses need per-position draws).
  void validate() const;

  std::string split_path() const { return get("data.split"); }
  LossKind loss() const;
  EncoderConfig encoder_config(std::size_t num_items) const;
  SamplerConfig sampler_config() const;
  TrainConfig train_config() const;

  std::size_t eval_k() const { return get_size("eval.k"); }
  std::size_t eval_batch() const { return get_size("eval.batch"); }
  bool eval_exclude_history() const { return get_bool("eval.exclude_history"); }
  std::size_t eval_buckets() const { return get_size("eval.buckets"); }
  std::string eval_split() const;  // "valid" or "test"

  std::uint64_t get_u64(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace transrec
