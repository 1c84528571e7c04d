#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "transrec/config.hpp"

using namespace transrec;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/transrec_cfg_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
  void write(const std::string& text) {
    std::ofstream out(path);
    out << text;
  }
};

}  // namespace

TEST_CASE("defaults cover every key and unknown keys are rejected") {
  ExperimentConfig cfg;
  CHECK(cfg.get("loss.name") == "trans_bpr");
  CHECK(cfg.get("train.batch_size") == "256");
  CHECK(cfg.get("model.dim") == "64");
  CHECK(cfg.get_double("train.lr") == doctest::Approx(0.0003));
  CHECK(cfg.entries().size() >= 25);

  CHECK_THROWS_AS(cfg.get("loss.nmae"), config_error);
  CHECK_THROWS_AS(cfg.set("loss.nmae", "bpr"), config_error);
  CHECK_THROWS_AS(cfg.apply_override("not_a_pair"), config_error);

  cfg.apply_override("loss.name=ssm");
  CHECK(cfg.get("loss.name") == "ssm");
}

TEST_CASE("config files parse with comments, blanks, and line context on errors") {
  TempFile f("ok.conf");
  f.write(
      "# experiment\n"
      "\n"
      "loss.name = trans_ssm\n"
      "loss.gamma=0.5\n"
      "  model.dim =  32 \n");
  auto cfg = ExperimentConfig::from_file(f.path);
  CHECK(cfg.get("loss.name") == "trans_ssm");
  CHECK(cfg.get_double("loss.gamma") == 0.5);
  CHECK(cfg.get_size("model.dim") == 32);
  // untouched keys keep their defaults
  CHECK(cfg.get("train.optimizer") == "adam");

  TempFile bad("bad.conf");
  bad.write("loss.name = bpr\njust words\n");
  try {
    ExperimentConfig::from_file(bad.path);
    FAIL("expected config_error");
  } catch (const config_error& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }

  TempFile unknown("unknown.conf");
  unknown.write("losss.name = bpr\n");
  CHECK_THROWS_AS(ExperimentConfig::from_file(unknown.path), config_error);
  CHECK_THROWS_AS(ExperimentConfig::from_file("/nonexistent.conf"), config_error);
}

TEST_CASE("digest is order-independent and value-sensitive") {
  TempFile a("a.conf");
  a.write("model.dim = 32\nloss.name = bpr\n");
  TempFile b("b.conf");
  b.write("loss.name = bpr\nmodel.dim = 32\n");
  auto ca = ExperimentConfig::from_file(a.path);
  auto cb = ExperimentConfig::from_file(b.path);
  CHECK(ca.digest() == cb.digest());
  CHECK(ca.digest().size() == 16);
  for (char c : ca.digest()) CHECK(std::isxdigit(static_cast<unsigned char>(c)));

  cb.apply_override("model.dim=33");
  CHECK(ca.digest() != cb.digest());

  // an override that restores the default restores the digest
  ExperimentConfig d;
  ExperimentConfig e;
  e.apply_override("train.seed=43");
  CHECK(d.digest() != e.digest());
  e.apply_override("train.seed=42");
  CHECK(d.digest() == e.digest());
}

TEST_CASE("typed getters reject malformed values with the key in the message") {
  ExperimentConfig cfg;
  cfg.set("model.dim", "abc");
  try {
    cfg.get_size("model.dim");
    FAIL("expected config_error");
  } catch (const config_error& e) {
    CHECK(std::string(e.what()).find("model.dim") != std::string::npos);
  }

  cfg.set("model.dim", "-4");
  CHECK_THROWS_AS(cfg.get_size("model.dim"), config_error);
  cfg.set("model.dim", "12moretext");
  CHECK_THROWS_AS(cfg.get_size("model.dim"), config_error);

  cfg.set("loss.gamma", "1.5x");
  CHECK_THROWS_AS(cfg.get_double("loss.gamma"), config_error);

  cfg.set("eval.exclude_history", "yes");
  CHECK_THROWS_AS(cfg.get_bool("eval.exclude_history"), config_error);
  cfg.set("eval.exclude_history", "1");
  CHECK(cfg.get_bool("eval.exclude_history"));
}

TEST_CASE("typed views map onto the module configs") {
  ExperimentConfig cfg;
  cfg.apply_override("model.max_len=8");
  cfg.apply_override("model.dim=16");
  cfg.apply_override("model.layers=1");
  cfg.apply_override("model.heads=2");
  cfg.apply_override("model.dropout=0.1");
  auto enc = cfg.encoder_config(100);
  CHECK(enc.max_len == 8);
  CHECK(enc.dim == 16);
  CHECK(enc.layers == 1);
  CHECK(enc.heads == 2);
  CHECK(enc.dropout == doctest::Approx(0.1));
  CHECK(enc.vocab == 101);

  cfg.apply_override("sampler.mode=niche");
  cfg.apply_override("sampler.transitivity=disjoint");
  cfg.apply_override("sampler.n_j=7");
  cfg.apply_override("sampler.alpha=0.75");
  auto smp = cfg.sampler_config();
  CHECK(smp.mode == SamplerMode::niche);
  CHECK(smp.transitivity == Transitivity::disjoint);
  CHECK(smp.n_j == 7);
  CHECK(smp.n_k == 50);
  CHECK(smp.alpha == doctest::Approx(0.75));

  cfg.apply_override("loss.name=trans_ssm");
  cfg.apply_override("loss.gamma=2.0");
  cfg.apply_override("train.optimizer=sgd");
  cfg.apply_override("train.lr=0.01");
  cfg.apply_override("train.weight_decay=0.001");
  cfg.apply_override("train.eval_every=5");
  cfg.apply_override("train.seed=7");
  auto tr = cfg.train_config();
  CHECK(tr.loss == LossKind::trans_ssm);
  CHECK(tr.gamma == 2.0);
  CHECK(tr.opt.kind == OptimizerKind::sgd);
  CHECK(tr.opt.lr == doctest::Approx(0.01));
  CHECK(tr.opt.weight_decay == doctest::Approx(0.001));
  CHECK(tr.eval_every == 5);
  CHECK(tr.seed == 7);
  CHECK(tr.eval_k == 10);

  cfg.apply_override("model.dropout=1.5");
  CHECK_THROWS_AS(cfg.encoder_config(100), config_error);
}

TEST_CASE("validate couples loss shape with the sampler kind before any compute") {
  ExperimentConfig cfg;
  cfg.apply_override("loss.name=ssm");
  cfg.apply_override("sampler.kind=quad");
  CHECK_THROWS_AS(cfg.validate(), config_error);

  cfg.apply_override("sampler.kind=set");
  CHECK_NOTHROW(cfg.validate());
  cfg.apply_override("sampler.kind=auto");
  CHECK_NOTHROW(cfg.validate());

  cfg.apply_override("loss.name=trans_bpr");
  cfg.apply_override("sampler.kind=set");
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg.apply_override("sampler.kind=quad");
  CHECK_NOTHROW(cfg.validate());

  cfg.apply_override("sampler.kind=banana");
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg.apply_override("sampler.kind=auto");

  cfg.apply_override("loss.name=nonsense");
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg.apply_override("loss.name=bpr");

  cfg.apply_override("loss.gamma=-1");
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg.apply_override("loss.gamma=0");

  cfg.apply_override("train.optimizer=rmsprop");
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg.apply_override("train.optimizer=adam");

  cfg.apply_override("eval.split=train");
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg.apply_override("eval.split=valid");
  CHECK_NOTHROW(cfg.validate());
}
