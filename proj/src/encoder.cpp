#include "transrec/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace transrec {

namespace {

using nlohmann::json;

double f32_grid(double v) { return static_cast<double>(static_cast<float>(v)); }

Tensor init_tensor(Shape shape, Rng& rng, double stddev) {
  std::vector<double> vals(shape_numel(shape));
  for (double& v : vals) v = f32_grid(rng.truncated_normal(0.0, stddev, 2.0));
  auto t = Tensor::from_values(std::move(shape), std::move(vals));
  t.set_requires_grad(true);
  return t;
}

Tensor const_tensor(Shape shape, double v) {
  auto t = Tensor::full(std::move(shape), v);
  t.set_requires_grad(true);
  return t;
}

Tensor maybe_dropout(const Tensor& x, const EncoderParameters& params, bool train_mode,
                     Rng* rng) {
  if (!train_mode || params.config.dropout == 0.0) return x;
  if (!rng) throw encoder_error("train-mode encode with dropout needs an rng stream");
  return dropout(x, params.config.dropout, true, *rng);
}

}  // namespace

void EncoderConfig::validate() const {
  if (max_len < 1) throw encoder_error("max_len must be >= 1");
  if (dim < 1) throw encoder_error("dim must be >= 1");
  if (heads < 1 || dim % heads != 0) throw encoder_error("dim must be divisible by heads");
  if (layers < 1) throw encoder_error("layers must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw encoder_error("dropout must be in [0, 1)");
  if (vocab < 2) throw encoder_error("vocab must cover the padding row and at least one item");
}

std::vector<std::pair<std::string, Tensor>> EncoderParameters::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("item_emb", item_emb);
  out.emplace_back("pos_emb", pos_emb);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const LayerParams& lp = layers[l];
    out.emplace_back(p + "wq", lp.wq);
    out.emplace_back(p + "wk", lp.wk);
    out.emplace_back(p + "wv", lp.wv);
    out.emplace_back(p + "wo", lp.wo);
    out.emplace_back(p + "ln1_gain", lp.ln1_gain);
    out.emplace_back(p + "ln1_bias", lp.ln1_bias);
    out.emplace_back(p + "ffn_w1", lp.ffn_w1);
    out.emplace_back(p + "ffn_b1", lp.ffn_b1);
    out.emplace_back(p + "ffn_w2", lp.ffn_w2);
    out.emplace_back(p + "ffn_b2", lp.ffn_b2);
    out.emplace_back(p + "ln2_gain", lp.ln2_gain);
    out.emplace_back(p + "ln2_bias", lp.ln2_bias);
  }
  out.emplace_back("final_gain", final_gain);
  out.emplace_back("final_bias", final_bias);
  return out;
}

EncoderParameters EncoderParameters::clone() const {
  EncoderParameters copy;
  copy.config = config;
  auto dup = [](const Tensor& t) {
    auto c = Tensor::from_values(t.shape(), t.value());
    c.set_requires_grad(t.requires_grad());
    return c;
  };
  copy.item_emb = dup(item_emb);
  copy.pos_emb = dup(pos_emb);
  for (const LayerParams& lp : layers) {
    LayerParams cl;
    cl.wq = dup(lp.wq);
    cl.wk = dup(lp.wk);
    cl.wv = dup(lp.wv);
    cl.wo = dup(lp.wo);
    cl.ln1_gain = dup(lp.ln1_gain);
    cl.ln1_bias = dup(lp.ln1_bias);
    cl.ffn_w1 = dup(lp.ffn_w1);
    cl.ffn_b1 = dup(lp.ffn_b1);
    cl.ffn_w2 = dup(lp.ffn_w2);
    cl.ffn_b2 = dup(lp.ffn_b2);
    cl.ln2_gain = dup(lp.ln2_gain);
    cl.ln2_bias = dup(lp.ln2_bias);
    copy.layers.push_back(std::move(cl));
  }
  copy.final_gain = dup(final_gain);
  copy.final_bias = dup(final_bias);
  return copy;
}

EncoderParameters init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  const double sd = 0.02;
  Rng rng = Rng::stream(seed, "init");
  EncoderParameters p;
  p.config = config;
  const std::size_t d = config.dim;

  p.item_emb = init_tensor({config.vocab, d}, rng, sd);
  for (std::size_t c = 0; c < d; ++c) p.item_emb.value_mut()[c] = 0.0;  // padding row
  p.pos_emb = init_tensor({config.max_len, d}, rng, sd);
  for (std::size_t l = 0; l < config.layers; ++l) {
    LayerParams lp;
    lp.wq = init_tensor({d, d}, rng, sd);
    lp.wk = init_tensor({d, d}, rng, sd);
    lp.wv = init_tensor({d, d}, rng, sd);
    lp.wo = init_tensor({d, d}, rng, sd);
    lp.ln1_gain = const_tensor({d}, 1.0);
    lp.ln1_bias = const_tensor({d}, 0.0);
    lp.ffn_w1 = init_tensor({d, d}, rng, sd);
    lp.ffn_b1 = const_tensor({d}, 0.0);
    lp.ffn_w2 = init_tensor({d, d}, rng, sd);
    lp.ffn_b2 = const_tensor({d}, 0.0);
    lp.ln2_gain = const_tensor({d}, 1.0);
    lp.ln2_bias = const_tensor({d}, 0.0);
    p.layers.push_back(std::move(lp));
  }
  p.final_gain = const_tensor({d}, 1.0);
  p.final_bias = const_tensor({d}, 0.0);
  return p;
}

Tensor encode_padded(const EncoderParameters& params,
                     const std::vector<std::uint32_t>& padded_ids,
                     const std::vector<std::uint8_t>& key_valid, bool train_mode,
                     Rng* dropout_rng) {
  const EncoderConfig& cfg = params.config;
  const std::size_t l = cfg.max_len, d = cfg.dim, h = cfg.heads;
  if (padded_ids.empty() || padded_ids.size() % l != 0)
    throw encoder_error("padded ids must form [B x max_len] rows");
  if (key_valid.size() != padded_ids.size())
    throw encoder_error("key_valid size must match padded ids");
  const std::size_t b = padded_ids.size() / l;

  std::vector<std::int64_t> flat(padded_ids.size());
  for (std::size_t i = 0; i < padded_ids.size(); ++i) {
    if (padded_ids[i] >= cfg.vocab)
      throw encoder_error("item id " + std::to_string(padded_ids[i]) + " outside vocab");
    flat[i] = static_cast<std::int64_t>(padded_ids[i]);
  }

  Tensor x = reshape(gather_rows(params.item_emb, flat), {b, l, d});
  x = add(x, params.pos_emb);  // broadcast over the batch
  x = maybe_dropout(x, params, train_mode, dropout_rng);

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(d / h));
  for (const LayerParams& lp : params.layers) {
    Tensor q = matmul(x, lp.wq);
    Tensor k = matmul(x, lp.wk);
    Tensor v = matmul(x, lp.wv);
    if (h > 1) {
      q = split_heads(q, h);
      k = split_heads(k, h);
      v = split_heads(v, h);
    }
    Tensor scores = scale(matmul(q, transpose_last2(k)), inv_sqrt_dh);
    Tensor probs = causal_masked_softmax(scores, key_valid, h);
    Tensor ctx = matmul(probs, v);
    if (h > 1) ctx = merge_heads(ctx, h);
    ctx = matmul(ctx, lp.wo);
    ctx = maybe_dropout(ctx, params, train_mode, dropout_rng);
    x = layer_norm(add(x, ctx), lp.ln1_gain, lp.ln1_bias);

    Tensor f = relu(add(matmul(x, lp.ffn_w1), lp.ffn_b1));
    f = add(matmul(f, lp.ffn_w2), lp.ffn_b2);
    f = maybe_dropout(f, params, train_mode, dropout_rng);
    x = layer_norm(add(x, f), lp.ln2_gain, lp.ln2_bias);
  }
  return layer_norm(x, params.final_gain, params.final_bias);
}

Tensor encode(const EncoderParameters& params,
              const std::vector<std::vector<std::uint32_t>>& histories, bool train_mode,
              Rng* dropout_rng) {
  const std::size_t l = params.config.max_len;
  if (histories.empty()) throw encoder_error("encode needs at least one history");
  std::vector<std::uint32_t> padded(histories.size() * l, 0);
  std::vector<std::uint8_t> valid(histories.size() * l, 0);
  for (std::size_t r = 0; r < histories.size(); ++r) {
    const auto& hist = histories[r];
    if (hist.empty()) throw encoder_error("encode needs non-empty histories");
    const std::size_t keep = std::min(hist.size(), l);
    for (std::size_t t = 0; t < keep; ++t) {
      padded[r * l + (l - keep) + t] = hist[hist.size() - keep + t];
      valid[r * l + (l - keep) + t] = 1;
    }
  }
  return encode_padded(params, padded, valid, train_mode, dropout_rng);
}

Tensor last_position(const Tensor& encoded) {
  if (encoded.dim() != 3) throw encoder_error("last_position expects [B, L, d]");
  const std::size_t b = encoded.shape()[0], l = encoded.shape()[1], d = encoded.shape()[2];
  std::vector<std::int64_t> idx(b);
  for (std::size_t r = 0; r < b; ++r) idx[r] = static_cast<std::int64_t>(r * l + l - 1);
  return gather_rows(reshape(encoded, {b * l, d}), idx);
}

Tensor score_pairs(const Tensor& reprs, const Tensor& item_emb,
                   const std::vector<std::int64_t>& ids) {
  if (reprs.dim() != 2 || reprs.shape()[0] != ids.size())
    throw encoder_error("score_pairs needs one repr row per item id");
  return sum_lastdim(mul(reprs, gather_rows(item_emb, ids)));
}

Tensor score_all_items(const Tensor& reprs, const Tensor& item_emb) {
  return matmul(reprs, transpose_last2(item_emb));
}

std::vector<TrainingTarget> training_targets(const SplitDataset& split, std::size_t max_len) {
  std::vector<TrainingTarget> out;
  for (std::uint32_t u = 0; u < split.num_users; ++u) {
    const auto& seq = split.train[u];
    for (std::size_t t = 1; t < seq.size(); ++t) {
      TrainingTarget tgt;
      tgt.user = u;
      tgt.positive = seq[t];
      const std::size_t start = t > max_len ? t - max_len : 0;
      tgt.prefix.assign(seq.begin() + start, seq.begin() + t);
      out.push_back(std::move(tgt));
    }
  }
  return out;
}

void save_checkpoint(const EncoderParameters& params, const std::string& path,
                     const std::string& config_digest) {
  json header;
  header["config"] = {{"max_len", params.config.max_len}, {"dim", params.config.dim},
                      {"layers", params.config.layers},   {"heads", params.config.heads},
                      {"dropout", params.config.dropout}, {"vocab", params.config.vocab}};
  header["config_digest"] = config_digest;
  json manifest = json::array();
  const auto named = params.named();
  for (const auto& [name, tensor] : named)
    manifest.push_back({{"name", name}, {"shape", tensor.shape()}});
  header["params"] = std::move(manifest);
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw encoder_error("cannot write " + path);
  out.write("TRECCKPT1", 9);
  const std::uint64_t hlen = header_str.size();
  char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((hlen >> (8 * i)) & 0xff);
  out.write(lenbuf, 8);
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  std::vector<float> buf;
  for (const auto& [name, tensor] : named) {
    buf.resize(tensor.numel());
    for (std::size_t i = 0; i < buf.size(); ++i)
      buf[i] = static_cast<float>(tensor.value()[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw encoder_error("write failed for " + path);
}

EncoderParameters load_checkpoint(const std::string& path, std::string* digest_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw encoder_error("cannot open " + path);
  char magic[9];
  in.read(magic, 9);
  if (!in || std::memcmp(magic, "TRECCKPT1", 9) != 0)
    throw encoder_error(path + " is not a checkpoint file");
  char lenbuf[8];
  in.read(lenbuf, 8);
  if (!in) throw encoder_error(path + ": truncated header length");
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i)
    hlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
  std::string header_str(hlen, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw encoder_error(path + ": truncated header");
  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::exception& e) {
    throw encoder_error(path + ": bad header: " + e.what());
  }

  EncoderConfig cfg;
  const auto& jc = header.at("config");
  cfg.max_len = jc.at("max_len").get<std::size_t>();
  cfg.dim = jc.at("dim").get<std::size_t>();
  cfg.layers = jc.at("layers").get<std::size_t>();
  cfg.heads = jc.at("heads").get<std::size_t>();
  cfg.dropout = jc.at("dropout").get<double>();
  cfg.vocab = jc.at("vocab").get<std::size_t>();
  if (digest_out) *digest_out = header.value("config_digest", "");

  EncoderParameters params = init_encoder(cfg, 0);
  auto named = params.named();
  const auto& manifest = header.at("params");
  if (manifest.size() != named.size())
    throw encoder_error(path + ": manifest entry count mismatch");
  for (std::size_t e = 0; e < named.size(); ++e) {
    const auto& entry = manifest[e];
    auto& [name, tensor] = named[e];
    if (entry.at("name").get<std::string>() != name)
      throw encoder_error(path + ": unexpected parameter " +
                          entry.at("name").get<std::string>());
    if (entry.at("shape").get<Shape>() != tensor.shape())
      throw encoder_error(path + ": shape mismatch for " + name);
    std::vector<float> buf(tensor.numel());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw encoder_error(path + ": truncated data for " + name);
    auto& vals = tensor.value_mut();
    for (std::size_t i = 0; i < buf.size(); ++i) vals[i] = static_cast<double>(buf[i]);
  }
  return params;
}

}  // namespace transrec
