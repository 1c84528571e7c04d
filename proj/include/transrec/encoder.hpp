#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "transrec/corpus.hpp"
#include "transrec/rng.hpp"
#include "transrec/tensor.hpp"

namespace transrec {

struct encoder_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EncoderConfig {
  std::size_t max_len = 50;
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 1;
  double dropout = 0.2;
  std::size_t vocab = 0;  // N+1 including the padding row

  void validate() const;
};

struct LayerParams {
  Tensor wq, wk, wv, wo;      // [d,d], bias-free projections
  Tensor ln1_gain, ln1_bias;  // after attention residual
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln2_gain, ln2_bias;  // after FFN residual
};

/// All learnable arrays. Values live on the float32 grid: initialization and
/// every optimizer step round through float, so checkpoints (stored as f32)
/// round-trip bit-exactly. Item row 0 is the padding row and stays zero.
struct EncoderParameters {
  EncoderConfig config;
  Tensor item_emb;  // [vocab, d]
  Tensor pos_emb;   // [max_len, d]
  std::vector<LayerParams> layers;
  Tensor final_gain, final_bias;

  /// Parameters in checkpoint manifest order; handles share storage.
  std::vector<std::pair<std::string, Tensor>> named() const;
  EncoderParameters clone() const;
};

/// Weights and embeddings ~ Normal(0, 0.02^2) truncated at 2 sigma; biases
/// zero; norm gains one; padding row zero. Deterministic per seed.
EncoderParameters init_encoder(const EncoderConfig& config, std::uint64_t seed);

/// Core forward pass over already-padded rows. padded_ids is row-major
/// [B x max_len]; key_valid marks real positions, so padded slots cannot
/// influence any output regardless of their stored id. Returns [B, max_len, d].
Tensor encode_padded(const EncoderParameters& params,
                     const std::vector<std::uint32_t>& padded_ids,
                     const std::vector<std::uint8_t>& key_valid, bool train_mode,
                     Rng* dropout_rng = nullptr);

/// Left-pads each history (most recent item last, truncated to the most
/// recent max_len items) and runs encode_padded.
Tensor encode(const EncoderParameters& params,
              const std::vector<std::vector<std::uint32_t>>& histories, bool train_mode,
              Rng* dropout_rng = nullptr);

/// Representation of the last position, [B, d] from [B, max_len, d].
Tensor last_position(const Tensor& encoded);

/// Row-wise inner products between reprs [n, d] and the embeddings of ids.
Tensor score_pairs(const Tensor& reprs, const Tensor& item_emb,
                   const std::vector<std::int64_t>& ids);

/// Scores of every item (padding column included), [B, vocab].
Tensor score_all_items(const Tensor& reprs, const Tensor& item_emb);

struct TrainingTarget {
  std::uint32_t user = 0;
  std::vector<std::uint32_t> prefix;  // most recent last, length <= max_len
  std::uint32_t positive = 0;
};

/// Next-item prediction pairs: every position t >= 1 of each train sequence
/// yields (prefix of items before t, item at t).
std::vector<TrainingTarget> training_targets(const SplitDataset& split, std::size_t max_len);

/// Binary format: magic "TRECCKPT1", little-endian u64 header length, JSON
/// header (config, digest, manifest with shapes), then raw little-endian f32
/// arrays in manifest order.
void save_checkpoint(const EncoderParameters& params, const std::string& path,
                     const std::string& config_digest);
EncoderParameters load_checkpoint(const std::string& path, std::string* digest_out = nullptr);

}  // namespace transrec
