#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "doctest.h"
#include "transrec/encoder.hpp"
#include "transrec/gradcheck.hpp"

using namespace transrec;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/transrec_enc_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

// Plain-loop re-evaluation of the forward pass, single head only.
// Written independently of the tensor graph so the two can cross-check.
std::vector<double> ref_matmul(const std::vector<double>& x, std::size_t rows,
                               const std::vector<double>& w, std::size_t d1, std::size_t d2) {
  std::vector<double> out(rows * d2, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d1; ++c) {
      const double xv = x[r * d1 + c];
      for (std::size_t j = 0; j < d2; ++j) out[r * d2 + j] += xv * w[c * d2 + j];
    }
  return out;
}

std::vector<double> ref_layer_norm(const std::vector<double>& x, std::size_t d,
                                   const std::vector<double>& gain,
                                   const std::vector<double>& bias) {
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += x[r * d + c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = x[r * d + c] - mu;
      var += dv * dv;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + 1e-8);
    for (std::size_t c = 0; c < d; ++c)
      out[r * d + c] = (x[r * d + c] - mu) * inv * gain[c] + bias[c];
  }
  return out;
}

std::vector<double> ref_encode_row(const EncoderParameters& p,
                                   const std::vector<std::uint32_t>& ids,
                                   const std::vector<std::uint8_t>& valid) {
  const std::size_t l = p.config.max_len, d = p.config.dim;
  REQUIRE(p.config.heads == 1);
  std::vector<double> x(l * d);
  for (std::size_t t = 0; t < l; ++t)
    for (std::size_t c = 0; c < d; ++c)
      x[t * d + c] = p.item_emb.value()[ids[t] * d + c] + p.pos_emb.value()[t * d + c];

  for (const LayerParams& lp : p.layers) {
    auto q = ref_matmul(x, l, lp.wq.value(), d, d);
    auto k = ref_matmul(x, l, lp.wk.value(), d, d);
    auto v = ref_matmul(x, l, lp.wv.value(), d, d);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> ctx(l * d, 0.0);
    for (std::size_t qp = 0; qp < l; ++qp) {
      std::vector<double> s(l, 0.0);
      double mx = -1e300;
      bool any = false;
      for (std::size_t kp = 0; kp <= qp; ++kp) {
        if (!valid[kp]) continue;
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += q[qp * d + c] * k[kp * d + c];
        s[kp] = dot * inv_sqrt;
        mx = std::max(mx, s[kp]);
        any = true;
      }
      std::vector<double> prob(l, 0.0);
      if (!any) {
        prob[qp] = 1.0;
      } else {
        double z = 0.0;
        for (std::size_t kp = 0; kp <= qp; ++kp) {
          if (!valid[kp]) continue;
          prob[kp] = std::exp(s[kp] - mx);
          z += prob[kp];
        }
        for (std::size_t kp = 0; kp <= qp; ++kp) prob[kp] /= z;
      }
      for (std::size_t kp = 0; kp < l; ++kp)
        for (std::size_t c = 0; c < d; ++c) ctx[qp * d + c] += prob[kp] * v[kp * d + c];
    }
    auto attn = ref_matmul(ctx, l, lp.wo.value(), d, d);
    for (std::size_t i = 0; i < l * d; ++i) attn[i] += x[i];
    x = ref_layer_norm(attn, d, lp.ln1_gain.value(), lp.ln1_bias.value());

    auto f = ref_matmul(x, l, lp.ffn_w1.value(), d, d);
    for (std::size_t t = 0; t < l; ++t)
      for (std::size_t c = 0; c < d; ++c)
        f[t * d + c] = std::max(0.0, f[t * d + c] + lp.ffn_b1.value()[c]);
    f = ref_matmul(f, l, lp.ffn_w2.value(), d, d);
    for (std::size_t t = 0; t < l; ++t)
      for (std::size_t c = 0; c < d; ++c) f[t * d + c] += lp.ffn_b2.value()[c] + x[t * d + c];
    x = ref_layer_norm(f, d, lp.ln2_gain.value(), lp.ln2_bias.value());
  }
  return ref_layer_norm(x, d, p.final_gain.value(), p.final_bias.value());
}

EncoderConfig tiny_config(std::size_t max_len, std::size_t dim, std::size_t layers,
                          std::size_t heads, std::size_t vocab) {
  EncoderConfig cfg;
  cfg.max_len = max_len;
  cfg.dim = dim;
  cfg.layers = layers;
  cfg.heads = heads;
  cfg.dropout = 0.0;
  cfg.vocab = vocab;
  return cfg;
}

}  // namespace

TEST_CASE("config validation rejects bad settings") {
  auto cfg = tiny_config(4, 4, 1, 1, 8);
  CHECK_NOTHROW(cfg.validate());
  cfg.heads = 3;  // 4 % 3 != 0
  CHECK_THROWS_AS(cfg.validate(), encoder_error);
  cfg = tiny_config(4, 4, 1, 1, 8);
  cfg.dropout = 1.0;
  CHECK_THROWS_AS(cfg.validate(), encoder_error);
  cfg = tiny_config(4, 4, 1, 1, 1);
  CHECK_THROWS_AS(cfg.validate(), encoder_error);
  cfg = tiny_config(0, 4, 1, 1, 8);
  CHECK_THROWS_AS(cfg.validate(), encoder_error);
}

TEST_CASE("init is deterministic and leaves the padding row zero") {
  auto cfg = tiny_config(5, 8, 2, 2, 2001);
  auto a = init_encoder(cfg, 42);
  auto b = init_encoder(cfg, 42);
  auto named_a = a.named();
  auto named_b = b.named();
  REQUIRE(named_a.size() == named_b.size());
  for (std::size_t i = 0; i < named_a.size(); ++i) {
    CHECK(named_a[i].first == named_b[i].first);
    CHECK(named_a[i].second.value() == named_b[i].second.value());
  }
  auto c = init_encoder(cfg, 43);
  CHECK(a.item_emb.value() != c.item_emb.value());

  for (std::size_t col = 0; col < cfg.dim; ++col) CHECK(a.item_emb.value()[col] == 0.0);

  // item rows 1..N: clipped normal with stddev 0.02, values on the float grid
  const auto& v = a.item_emb.value();
  double mean = 0.0;
  const std::size_t n = (cfg.vocab - 1) * cfg.dim;
  for (std::size_t i = cfg.dim; i < v.size(); ++i) {
    CHECK(std::abs(v[i]) <= 0.04 + 1e-6);
    CHECK(static_cast<double>(static_cast<float>(v[i])) == v[i]);
    mean += v[i];
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = cfg.dim; i < v.size(); ++i) var += (v[i] - mean) * (v[i] - mean);
  var /= static_cast<double>(n);
  CHECK(std::abs(mean) < 0.002);
  CHECK(var > 0.5 * 0.02 * 0.02);
  CHECK(var < 1.5 * 0.02 * 0.02);

  for (const auto& lp : a.layers) {
    for (double g : lp.ln1_gain.value()) CHECK(g == 1.0);
    for (double g : lp.ln2_gain.value()) CHECK(g == 1.0);
    for (double bval : lp.ln1_bias.value()) CHECK(bval == 0.0);
    for (double bval : lp.ffn_b1.value()) CHECK(bval == 0.0);
  }
  for (double g : a.final_gain.value()) CHECK(g == 1.0);
}

TEST_CASE("forward pass matches a plain-loop reference") {
  auto params = init_encoder(tiny_config(3, 4, 2, 1, 6), 9);

  std::vector<std::uint32_t> ids = {1, 4, 2, 0, 0, 3};
  std::vector<std::uint8_t> valid = {1, 1, 1, 0, 0, 1};
  auto out = encode_padded(params, ids, valid, false);
  REQUIRE(out.shape() == Shape{2, 3, 4});

  for (std::size_t row = 0; row < 2; ++row) {
    std::vector<std::uint32_t> row_ids(ids.begin() + row * 3, ids.begin() + (row + 1) * 3);
    std::vector<std::uint8_t> row_valid(valid.begin() + row * 3, valid.begin() + (row + 1) * 3);
    auto ref = ref_encode_row(params, row_ids, row_valid);
    for (std::size_t i = 0; i < ref.size(); ++i)
      CHECK(std::abs(out.value()[row * 12 + i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("encode left-pads, truncates to the window, and rejects bad input") {
  auto params = init_encoder(tiny_config(3, 4, 1, 1, 8), 5);

  auto long_out = encode(params, {{1, 2, 3, 4, 5}}, false);
  auto tail_out = encode(params, {{3, 4, 5}}, false);
  CHECK(long_out.value() == tail_out.value());

  auto short_out = encode(params, {{6}}, false);
  std::vector<std::uint32_t> padded = {0, 0, 6};
  std::vector<std::uint8_t> mask = {0, 0, 1};
  auto manual = encode_padded(params, padded, mask, false);
  CHECK(short_out.value() == manual.value());

  CHECK_THROWS_AS(encode(params, {}, false), encoder_error);
  CHECK_THROWS_AS(encode(params, {{}}, false), encoder_error);
  CHECK_THROWS_AS(encode(params, {{8}}, false), encoder_error);  // vocab is [0,8)
  CHECK_THROWS_AS(encode_padded(params, {1, 2}, {1, 1}, false), encoder_error);
  CHECK_THROWS_AS(encode_padded(params, {1, 2, 3}, {1, 1}, false), encoder_error);
}

TEST_CASE("outputs at a position ignore later positions") {
  auto params = init_encoder(tiny_config(6, 8, 2, 2, 12), 11);
  std::vector<std::uint8_t> valid(6, 1);
  auto a = encode_padded(params, {1, 2, 3, 4, 5, 6}, valid, false);
  auto b = encode_padded(params, {1, 2, 3, 9, 10, 11}, valid, false);
  const std::size_t d = 8;
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t c = 0; c < d; ++c)
      CHECK(a.value()[t * d + c] == b.value()[t * d + c]);
  bool differs = false;
  for (std::size_t i = 3 * d; i < 6 * d; ++i)
    if (a.value()[i] != b.value()[i]) differs = true;
  CHECK(differs);
}

TEST_CASE("padding slot contents cannot affect outputs or gradients") {
  auto params = init_encoder(tiny_config(4, 4, 2, 1, 10), 13);
  std::vector<std::uint8_t> mask = {0, 0, 0, 1};
  auto a = encode_padded(params, {0, 0, 0, 5}, mask, false);
  auto b = encode_padded(params, {7, 3, 2, 5}, mask, false);
  // only the valid position is contractual; pad slots are never read downstream
  const std::size_t dim = 4;
  for (std::size_t c = 0; c < dim; ++c)
    CHECK(a.value()[3 * dim + c] == b.value()[3 * dim + c]);

  for (auto& [name, t] : params.named()) t.zero_grad();
  auto out = encode_padded(params, {7, 3, 2, 5}, mask, false);
  auto last = last_position(out);
  auto loss = sum_all(mul(last, last));
  backward(loss);
  const auto& g = params.item_emb.grad();
  const std::size_t d = 4;
  auto row_abs_sum = [&](std::size_t r) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += std::abs(g[r * d + c]);
    return s;
  };
  CHECK(row_abs_sum(7) == 0.0);
  CHECK(row_abs_sum(3) == 0.0);
  CHECK(row_abs_sum(2) == 0.0);
  CHECK(row_abs_sum(5) > 0.0);
}

TEST_CASE("eval mode is deterministic and train-mode dropout is seeded") {
  auto cfg = tiny_config(4, 4, 1, 1, 10);
  cfg.dropout = 0.3;
  auto params = init_encoder(cfg, 17);
  std::vector<std::vector<std::uint32_t>> hist = {{1, 2, 3}, {4, 5}};

  auto e1 = encode(params, hist, false);
  auto e2 = encode(params, hist, false);
  CHECK(e1.value() == e2.value());

  Rng r1 = Rng::stream(99, "dropout");
  Rng r2 = Rng::stream(99, "dropout");
  auto t1 = encode(params, hist, true, &r1);
  auto t2 = encode(params, hist, true, &r2);
  CHECK(t1.value() == t2.value());

  Rng r3 = Rng::stream(100, "dropout");
  auto t3 = encode(params, hist, true, &r3);
  CHECK(t1.value() != t3.value());

  CHECK_THROWS_AS(encode(params, hist, true, nullptr), encoder_error);
}

TEST_CASE("tiny encoder end-to-end gradient check") {
  auto params = init_encoder(tiny_config(4, 4, 1, 2, 8), 21);
  std::vector<Tensor> leaves;
  for (auto& [name, t] : params.named()) leaves.push_back(t);

  std::vector<std::vector<std::uint32_t>> hist = {{1, 2, 3}, {4}};
  auto forward = [&]() {
    auto reprs = last_position(encode(params, hist, false));
    auto scores = score_pairs(reprs, params.item_emb, {5, 6});
    return mean_all(mul(scores, scores));
  };
  CHECK(gradcheck_max_err(leaves, forward) < 1e-4);
}

TEST_CASE("score helpers compute dot products against item rows") {
  auto reprs = Tensor::from_values({2, 2}, {1.0, 0.0, 0.0, 1.0});
  auto emb = Tensor::from_values({3, 2}, {0.0, 0.0, 1.0, 0.0, 0.0, 1.0});

  auto aligned = score_pairs(reprs, emb, {1, 2});
  CHECK(aligned.shape() == Shape{2});
  CHECK(aligned.value()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(aligned.value()[1] == doctest::Approx(1.0).epsilon(1e-12));

  auto crossed = score_pairs(reprs, emb, {2, 1});
  CHECK(crossed.value()[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(crossed.value()[1] == doctest::Approx(0.0).epsilon(1e-12));

  auto all = score_all_items(reprs, emb);
  REQUIRE(all.shape() == Shape{2, 3});
  const std::vector<double> want = {0, 1, 0, 0, 0, 1};
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(all.value()[i] == doctest::Approx(want[i]).epsilon(1e-12));

  CHECK_THROWS_AS(score_pairs(reprs, emb, {1}), encoder_error);
}

TEST_CASE("score_pairs gradient check") {
  Rng rng(31);
  std::vector<double> rv(6), ev(8);
  for (auto& x : rv) x = rng.normal(0.0, 1.0);
  for (auto& x : ev) x = rng.normal(0.0, 1.0);
  auto reprs = Tensor::from_values({3, 2}, rv);
  auto emb = Tensor::from_values({4, 2}, ev);
  auto fwd = [&]() { return sum_all(score_pairs(reprs, emb, {2, 0, 2})); };
  CHECK(gradcheck_max_err({reprs, emb}, fwd) < 1e-5);
}

TEST_CASE("training targets cover every next-item prediction in the window") {
  SplitDataset split;
  split.num_users = 3;
  split.num_items = 70;
  split.train = {{1, 2, 3}, {4}, {5, 6}};
  split.valid_item = {7, 8, 9};
  split.test_item = {10, 11, 12};

  auto targets = training_targets(split, 50);
  REQUIRE(targets.size() == 3);
  CHECK(targets[0].user == 0);
  CHECK(targets[0].prefix == std::vector<std::uint32_t>{1});
  CHECK(targets[0].positive == 2);
  CHECK(targets[1].prefix == std::vector<std::uint32_t>{1, 2});
  CHECK(targets[1].positive == 3);
  CHECK(targets[2].user == 2);
  CHECK(targets[2].prefix == std::vector<std::uint32_t>{5});
  CHECK(targets[2].positive == 6);

  SplitDataset long_split;
  long_split.num_users = 1;
  long_split.num_items = 61;
  long_split.train = {{}};
  for (std::uint32_t i = 1; i <= 60; ++i) long_split.train[0].push_back(i);
  auto lt = training_targets(long_split, 50);
  REQUIRE(lt.size() == 59);
  CHECK(lt.back().positive == 60);
  CHECK(lt.back().prefix.size() == 50);
  CHECK(lt.back().prefix.front() == 10);
  CHECK(lt.back().prefix.back() == 59);

  auto clipped = training_targets(split, 1);
  CHECK(clipped[1].prefix == std::vector<std::uint32_t>{2});
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  TempFile f("ckpt.bin");
  auto cfg = tiny_config(5, 6, 2, 2, 20);
  cfg.dropout = 0.1;
  auto params = init_encoder(cfg, 77);
  save_checkpoint(params, f.path, "digest-abc");

  std::string digest;
  auto loaded = load_checkpoint(f.path, &digest);
  CHECK(digest == "digest-abc");
  CHECK(loaded.config.max_len == cfg.max_len);
  CHECK(loaded.config.dim == cfg.dim);
  CHECK(loaded.config.layers == cfg.layers);
  CHECK(loaded.config.heads == cfg.heads);
  CHECK(loaded.config.dropout == cfg.dropout);
  CHECK(loaded.config.vocab == cfg.vocab);

  auto na = params.named();
  auto nb = loaded.named();
  REQUIRE(na.size() == nb.size());
  for (std::size_t i = 0; i < na.size(); ++i) {
    CHECK(na[i].first == nb[i].first);
    CHECK(na[i].second.value() == nb[i].second.value());
  }

  std::vector<std::vector<std::uint32_t>> hist = {{3, 9, 14}, {19}};
  auto a = encode(params, hist, false);
  auto b = encode(loaded, hist, false);
  CHECK(a.value() == b.value());
}

TEST_CASE("checkpoint loader rejects junk") {
  TempFile f("junk.bin");
  {
    std::FILE* fp = std::fopen(f.path.c_str(), "wb");
    REQUIRE(fp != nullptr);
    std::fputs("not a checkpoint at all", fp);
    std::fclose(fp);
  }
  CHECK_THROWS_AS(load_checkpoint(f.path), encoder_error);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/path.bin"), encoder_error);
}

TEST_CASE("clone produces equal values on detached storage") {
  auto params = init_encoder(tiny_config(3, 4, 1, 1, 6), 41);
  auto copy = params.clone();
  CHECK(copy.item_emb.value() == params.item_emb.value());
  copy.item_emb.value_mut()[5] += 1.0;
  CHECK(copy.item_emb.value() != params.item_emb.value());
}

TEST_CASE("bundled gradient-check suite passes at its stated tolerances") {
  auto cases = gradcheck_suite(7);
  CHECK(cases.size() >= 25);  // ops, six losses, tiny encoder
  bool saw_encoder = false;
  for (const auto& c : cases) {
    INFO(c.name, " err ", c.err, " tol ", c.tol);
    CHECK(c.pass);
    if (c.name == "tiny_encoder") saw_encoder = true;
  }
  CHECK(saw_encoder);
}
