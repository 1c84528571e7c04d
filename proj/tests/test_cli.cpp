#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "transrec/cli.hpp"
#include "transrec/eval.hpp"

using namespace transrec;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::path("/tmp") / ("transrec_cli_" + std::to_string(::getpid()) + "_" +
                               std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& rel = "") const {
    return rel.empty() ? path.string() : (path / rel).string();
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

SplitDataset small_split() {
  SplitDataset split;
  split.num_users = 4;
  split.num_items = 8;
  split.train = {{1, 2, 3, 4}, {5, 6, 7}, {2, 4, 6, 8}, {1, 3, 5}};
  split.valid_item = {5, 8, 1, 7};
  split.test_item = {6, 1, 3, 8};
  split.train_counts = count_train_items(split);
  return split;
}

ExperimentConfig tiny_train_config(const std::string& split_path) {
  ExperimentConfig cfg;
  cfg.apply_override("data.split=" + split_path);
  cfg.apply_override("model.max_len=4");
  cfg.apply_override("model.dim=8");
  cfg.apply_override("model.layers=1");
  cfg.apply_override("model.heads=2");
  cfg.apply_override("model.dropout=0.0");
  cfg.apply_override("sampler.n_j=2");
  cfg.apply_override("sampler.n_k=2");
  cfg.apply_override("train.epochs=2");
  cfg.apply_override("train.batch_size=8");
  return cfg;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("interaction density matches the published-scale closed form") {
  // 198,502 events over 22,363 users x 12,101 items
  const double d = interaction_density(198502, 22363, 12101);
  CHECK(d == doctest::Approx(0.00073).epsilon(0.005));
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.5f", d);
  CHECK(std::string(buf) == "0.00073");
  CHECK(interaction_density(1, 0, 5) == 0.0);
}

TEST_CASE("prepare builds a split manifest from a toy TSV") {
  TempDir dir;
  {
    std::ofstream tsv(dir.str("toy.tsv"));
    tsv << "# comment line\n";
    tsv << "alice\tapple\t3\nalice\tbread\t1\nalice\tcorn\t7\nalice\tapple\t9\n";
    tsv << "bob\tbread\t2\nbob\tapple\t4\nbob\tcorn\t6\nbob\tbread\t8\n";
    tsv << "carol\tapple\t1\ncarol\tcorn\t2\ncarol\tbread\t5\ncarol\tapple\t8\n";
  }
  std::ostringstream out, err;
  const int rc = cmd_prepare(dir.str("toy.tsv"), dir.str("prep"), 2, out, err);
  CHECK(rc == 0);
  CHECK(err.str().empty());
  CHECK(out.str().find("users 3") != std::string::npos);
  CHECK(out.str().find("interactions 12") != std::string::npos);
  CHECK(out.str().find("density") != std::string::npos);

  auto split = load_split_json(dir.str("prep/split.json"));
  CHECK(split.num_users == 3);
  CHECK(split.num_items == 3);
  for (const auto& seq : split.train) CHECK(seq.size() == 2);
  CHECK(fs::exists(dir.str("prep/user_map.tsv")));
  CHECK(fs::exists(dir.str("prep/item_map.tsv")));
  CHECK(fs::exists(dir.str("prep/counts.csv")));

  std::ostringstream out2, err2;
  CHECK(cmd_prepare(dir.str("missing.tsv"), dir.str("prep2"), 2, out2, err2) != 0);
  CHECK(err2.str().find("prepare:") != std::string::npos);
}

TEST_CASE("train writes checkpoint, trajectory, and metrics stamped with the digest") {
  TempDir dir;
  save_split_json(small_split(), dir.str("split.json"), "testdigest");
  auto cfg = tiny_train_config(dir.str("split.json"));

  std::ostringstream out, err;
  const int rc = cmd_train(cfg, dir.str("run"), false, out, err);
  CHECK(rc == 0);
  CHECK(err.str().empty());
  REQUIRE(fs::exists(dir.str("run/checkpoint.bin")));
  REQUIRE(fs::exists(dir.str("run/trajectory.csv")));
  REQUIRE(fs::exists(dir.str("run/metrics.json")));

  nlohmann::json m;
  std::ifstream(dir.str("run/metrics.json")) >> m;
  CHECK(m["config_digest"] == cfg.digest());
  CHECK(m["split"] == "test");
  CHECK(m["n_users"] == 4);

  // same config and seed reproduce metrics.json byte for byte
  std::ostringstream out2, err2;
  CHECK(cmd_train(cfg, dir.str("run2"), false, out2, err2) == 0);
  CHECK(read_file(dir.str("run2/metrics.json")) == read_file(dir.str("run/metrics.json")));
  CHECK(read_file(dir.str("run2/checkpoint.bin")) == read_file(dir.str("run/checkpoint.bin")));

  // a saved checkpoint re-evaluates to the identical metrics file
  std::ostringstream out3, err3;
  CHECK(cmd_evaluate(cfg, dir.str("run/checkpoint.bin"), dir.str("m3.json"), out3, err3) == 0);
  nlohmann::json m3;
  std::ifstream(dir.str("m3.json")) >> m3;
  CHECK(m3["hr"] == m["hr"]);
  CHECK(m3["ndcg"] == m["ndcg"]);

  // valid split evaluation is also available
  cfg.apply_override("eval.split=valid");
  std::ostringstream out4, err4;
  CHECK(cmd_evaluate(cfg, dir.str("run/checkpoint.bin"), dir.str("m4.json"), out4, err4) == 0);
  nlohmann::json m4;
  std::ifstream(dir.str("m4.json")) >> m4;
  CHECK(m4["split"] == "valid");
}

TEST_CASE("incompatible loss and sampler batch shapes fail before training") {
  TempDir dir;
  save_split_json(small_split(), dir.str("split.json"), "d");
  auto cfg = tiny_train_config(dir.str("split.json"));
  cfg.apply_override("loss.name=ssm");
  cfg.apply_override("sampler.kind=quad");

  std::ostringstream out, err;
  CHECK(cmd_train(cfg, dir.str("run"), false, out, err) != 0);
  CHECK(err.str().find("set batches") != std::string::npos);
  CHECK_FALSE(fs::exists(dir.str("run/checkpoint.bin")));

  // a missing split path is also caught up front
  auto nosplit = tiny_train_config("");
  std::ostringstream out2, err2;
  CHECK(cmd_train(nosplit, dir.str("run"), false, out2, err2) != 0);
  CHECK(err2.str().find("data.split") != std::string::npos);
}

TEST_CASE("analyze terms summarizes named trajectory logs") {
  TempDir dir;
  for (const char* name : {"weak", "strict"}) {
    std::ofstream csv(dir.str(std::string(name) + ".csv"));
    csv << "step,total,original,preference\n";
    const double scale = std::string(name) == "strict" ? 0.5 : 1.0;
    for (int i = 1; i <= 40; ++i)
      csv << i << "," << 2.0 << "," << 1.0 << "," << scale / i << "\n";
  }
  std::ostringstream out, err;
  const int rc = cmd_analyze_terms(
      {{"weak", dir.str("weak.csv")}, {"strict", dir.str("strict.csv")}},
      dir.str("summary.csv"), out, err);
  CHECK(rc == 0);

  std::ifstream in(dir.str("summary.csv"));
  std::string header, r0, r1, extra;
  std::getline(in, header);
  CHECK(header == "scheme,rows,final_mean,slope");
  CHECK(std::getline(in, r0));
  CHECK(std::getline(in, r1));
  CHECK_FALSE(std::getline(in, extra));
  CHECK(r0.substr(0, 5) == "weak,");
  CHECK(r1.substr(0, 7) == "strict,");

  // mismatched step ranges are rejected
  {
    std::ofstream csv(dir.str("short.csv"));
    csv << "step,total,original,preference\n1,1,1,1\n";
  }
  std::ostringstream out2, err2;
  CHECK(cmd_analyze_terms({{"weak", dir.str("weak.csv")}, {"short", dir.str("short.csv")}},
                          dir.str("s2.csv"), out2, err2) != 0);
  CHECK(err2.str().find("analyze terms:") != std::string::npos);
}

TEST_CASE("analyze buckets emits one row per bucket for a saved checkpoint") {
  TempDir dir;
  auto split = small_split();
  save_split_json(split, dir.str("split.json"), "d");
  auto cfg = tiny_train_config(dir.str("split.json"));
  cfg.apply_override("eval.buckets=4");

  auto params = init_encoder(cfg.encoder_config(split.num_items), 3);
  save_checkpoint(params, dir.str("ckpt.bin"), cfg.digest());

  std::ostringstream out, err;
  const int rc =
      cmd_analyze_buckets(cfg, dir.str("ckpt.bin"), dir.str("buckets.csv"), out, err);
  CHECK(rc == 0);
  std::ifstream in(dir.str("buckets.csv"));
  std::string line;
  std::getline(in, line);
  CHECK(line == "bucket_index,item_count,mean_score");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);

  std::ostringstream out2, err2;
  CHECK(cmd_analyze_buckets(cfg, dir.str("nope.bin"), dir.str("b2.csv"), out2, err2) != 0);
}

TEST_CASE("analyze gradcheck reports every case and exits zero") {
  std::ostringstream out, err;
  CHECK(cmd_analyze_gradcheck(7, out, err) == 0);
  CHECK(out.str().find("tiny_encoder") != std::string::npos);
  CHECK(out.str().find("FAIL") == std::string::npos);
  CHECK(out.str().find("gradient checks passed") != std::string::npos);
}

TEST_CASE("thread cap resolution prefers the flag, then the environment") {
  CHECK(resolve_threads(4) == 4);
  ::setenv("TRANSREC_THREADS", "3", 1);
  CHECK(resolve_threads(0) == 3);
  CHECK(resolve_threads(2) == 2);
  ::setenv("TRANSREC_THREADS", "banana", 1);
  CHECK(resolve_threads(0) == 1);
  ::setenv("TRANSREC_THREADS", "0", 1);
  CHECK(resolve_threads(0) == 1);
  ::unsetenv("TRANSREC_THREADS");
  CHECK(resolve_threads(0) == 1);
}
