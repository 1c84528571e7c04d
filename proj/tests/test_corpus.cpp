#include <cstdio>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "doctest.h"
#include "transrec/corpus.hpp"

using namespace transrec;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& contents) {
    static int counter = 0;
    path = "corpus_test_tmp_" + std::to_string(counter++) + ".tsv";
    std::ofstream out(path);
    out << contents;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

std::vector<RawInteraction> raw(std::initializer_list<RawInteraction> rows) { return rows; }

}  // namespace

TEST_CASE("parse_tsv reads rows in order") {
  TempFile f("u1\ti9\t100\n");
  auto rows = parse_tsv(f.path);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].user_key == "u1");
  CHECK(rows[0].item_key == "i9");
  CHECK(rows[0].timestamp == 100);
}

TEST_CASE("parse_tsv tolerates headers, blanks and extra columns") {
  TempFile f("# user\titem\tts\n\nu1\ta\t5\textra\nu2\tb\t-3\n");
  auto rows = parse_tsv(f.path);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].item_key == "a");
  CHECK(rows[1].timestamp == -3);
}

TEST_CASE("parse_tsv on an empty file gives an empty list") {
  TempFile f("");
  CHECK(parse_tsv(f.path).empty());
}

TEST_CASE("parse_tsv reports malformed input with a line number") {
  TempFile bad_ts("u1\ti9\tabc\n");
  CHECK_THROWS_WITH_AS(parse_tsv(bad_ts.path), doctest::Contains(":1:"), corpus_error);
  TempFile short_row("u1\ti9\n");
  CHECK_THROWS_AS(parse_tsv(short_row.path), corpus_error);
  CHECK_THROWS_AS(parse_tsv("no_such_file.tsv"), corpus_error);
}

TEST_CASE("k_core_filter with k=1 keeps everything") {
  auto events = raw({{"u1", "a", 1}, {"u2", "b", 2}});
  auto kept = k_core_filter(events, 1);
  CHECK(kept.size() == 2);
}

TEST_CASE("k_core_filter cascades to a fixed point") {
  // one user, three items seen once each: items die at k=2, then the user
  auto kept = k_core_filter(raw({{"u1", "a", 1}, {"u1", "b", 2}, {"u1", "c", 3}}), 2);
  CHECK(kept.empty());
}

TEST_CASE("k_core_filter keeps a dense block intact") {
  std::vector<RawInteraction> events;
  for (int u = 0; u < 2; ++u)
    for (int i = 0; i < 5; ++i)
      events.push_back({"u" + std::to_string(u), "i" + std::to_string(i), i});
  auto kept = k_core_filter(events, 2);
  CHECK(kept.size() == 10);
}

TEST_CASE("k_core_filter is idempotent and enforces minimum degree") {
  std::vector<RawInteraction> events;
  for (int u = 0; u < 6; ++u)
    for (int i = 0; i <= u; ++i)
      events.push_back({"u" + std::to_string(u), "i" + std::to_string(i), i});
  auto once = k_core_filter(events, 3);
  auto twice = k_core_filter(once, 3);
  CHECK(once.size() == twice.size());

  std::unordered_map<std::string, int> uc, ic;
  for (const auto& e : once) {
    ++uc[e.user_key];
    ++ic[e.item_key];
  }
  for (const auto& [k, c] : uc) CHECK(c >= 3);
  for (const auto& [k, c] : ic) CHECK(c >= 3);
}

TEST_CASE("build_log assigns dense ids and reserves item id 0") {
  auto log = build_log(raw({{"u1", "i9", 100}}));
  CHECK(log.num_users == 1);
  CHECK(log.num_items == 1);
  REQUIRE(log.events_by_user.size() == 1);
  REQUIRE(log.events_by_user[0].size() == 1);
  CHECK(log.events_by_user[0][0].user == 0);
  CHECK(log.events_by_user[0][0].item == 1);
  CHECK(log.events_by_user[0][0].timestamp == 100);
  CHECK(log.item_keys[1] == "i9");
  CHECK(log.item_counts == std::vector<std::uint64_t>{0, 1});
}

TEST_CASE("build_log sorts per-user events by timestamp, stable on ties") {
  auto log = build_log(raw({{"u1", "late", 30},
                            {"u1", "tie_first", 10},
                            {"u1", "tie_second", 10},
                            {"u1", "early", 5}}));
  const auto& ev = log.events_by_user[0];
  REQUIRE(ev.size() == 4);
  CHECK(log.item_keys[ev[0].item] == "early");
  CHECK(log.item_keys[ev[1].item] == "tie_first");
  CHECK(log.item_keys[ev[2].item] == "tie_second");
  CHECK(log.item_keys[ev[3].item] == "late");
  for (const auto& e : ev) CHECK(e.item != 0);
}

TEST_CASE("build_log counts items across users") {
  auto log = build_log(raw({{"u1", "a", 1}, {"u2", "a", 2}, {"u2", "b", 3}}));
  CHECK(log.num_users == 2);
  CHECK(log.num_items == 2);
  std::uint64_t total = 0;
  for (auto c : log.item_counts) total += c;
  CHECK(total == log.total_events());
  CHECK(log.item_counts[1] == 2);  // "a"
  CHECK(build_log(raw({{"u", "i", 1}})).item_counts[0] == 0);
  CHECK_THROWS_AS(build_log({}), corpus_error);
}

TEST_CASE("leave_one_out splits the last two events") {
  auto log = build_log(raw({{"u1", "a", 1}, {"u1", "b", 2}, {"u1", "c", 3}, {"u1", "d", 4}}));
  auto split = leave_one_out(log);
  REQUIRE(split.num_users == 1);
  CHECK(split.train[0] == std::vector<std::uint32_t>{1, 2});
  CHECK(split.valid_item[0] == 3);
  CHECK(split.test_item[0] == 4);
  CHECK(split.dropped_users == 0);
}

TEST_CASE("leave_one_out handles the minimum-length sequence") {
  auto split = leave_one_out(build_log(raw({{"u", "a", 1}, {"u", "b", 2}, {"u", "c", 3}})));
  REQUIRE(split.num_users == 1);
  CHECK(split.train[0] == std::vector<std::uint32_t>{1});
  CHECK(split.valid_item[0] == 2);
  CHECK(split.test_item[0] == 3);
}

TEST_CASE("leave_one_out drops short users with a warning count") {
  auto log = build_log(raw({{"short", "a", 1},
                            {"short", "b", 2},
                            {"long", "a", 1},
                            {"long", "b", 2},
                            {"long", "c", 3}}));
  auto split = leave_one_out(log);
  CHECK(split.num_users == 1);
  CHECK(split.dropped_users == 1);
  CHECK(split.user_keys[0] == "long");
}

TEST_CASE("train counts come from train sequences only") {
  auto log = build_log(raw({{"u", "a", 1}, {"u", "b", 2}, {"u", "c", 3}, {"u", "d", 4}}));
  auto split = leave_one_out(log);
  // c and d live in valid/test, so only a and b are counted
  CHECK(split.train_counts == std::vector<std::uint64_t>{0, 1, 1, 0, 0});
  std::uint64_t total = 0;
  for (auto c : split.train_counts) total += c;
  std::size_t train_events = 0;
  for (const auto& s : split.train) train_events += s.size();
  CHECK(total == train_events);
}

TEST_CASE("split concatenation restores each user's event order") {
  std::vector<RawInteraction> events;
  for (int t = 0; t < 7; ++t) events.push_back({"u", "i" + std::to_string(t % 5), t});
  auto log = build_log(events);
  auto split = leave_one_out(log);
  std::vector<std::uint32_t> rebuilt = split.train[0];
  rebuilt.push_back(split.valid_item[0]);
  rebuilt.push_back(split.test_item[0]);
  std::vector<std::uint32_t> original;
  for (const auto& e : log.events_by_user[0]) original.push_back(e.item);
  CHECK(rebuilt == original);
}

TEST_CASE("split manifest round-trips through JSON") {
  std::vector<RawInteraction> events;
  for (int u = 0; u < 3; ++u)
    for (int t = 0; t < 5; ++t)
      events.push_back({"u" + std::to_string(u), "i" + std::to_string((u + t) % 4), t});
  auto split = leave_one_out(build_log(events));

  const std::string path = "corpus_test_split.json";
  save_split_json(split, path, "digest123");
  auto loaded = load_split_json(path);
  std::remove(path.c_str());

  CHECK(loaded.num_users == split.num_users);
  CHECK(loaded.num_items == split.num_items);
  CHECK(loaded.train == split.train);
  CHECK(loaded.valid_item == split.valid_item);
  CHECK(loaded.test_item == split.test_item);
  CHECK(loaded.train_counts == split.train_counts);

  CHECK_THROWS_AS(load_split_json("no_such_manifest.json"), corpus_error);
}
