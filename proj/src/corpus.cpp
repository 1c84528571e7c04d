#include "transrec/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <unordered_map>

#include "json.hpp"

namespace transrec {

namespace {

using nlohmann::json;

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

}  // namespace

std::size_t InteractionLog::total_events() const {
  std::size_t n = 0;
  for (const auto& ev : events_by_user) n += ev.size();
  return n;
}

std::vector<RawInteraction> parse_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw corpus_error("cannot open " + path);
  std::vector<RawInteraction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_tabs(line);
    if (fields.size() < 3)
      throw corpus_error(path + ":" + std::to_string(line_no) +
                         ": expected at least 3 tab-separated fields");
    if (fields[0].empty() || fields[1].empty())
      throw corpus_error(path + ":" + std::to_string(line_no) + ": empty user or item key");
    std::int64_t ts = 0;
    const auto [ptr, ec] =
        std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), ts);
    if (ec != std::errc() || ptr != fields[2].data() + fields[2].size())
      throw corpus_error(path + ":" + std::to_string(line_no) + ": malformed timestamp '" +
                         std::string(fields[2]) + "'");
    out.push_back({std::string(fields[0]), std::string(fields[1]), ts});
  }
  return out;
}

std::vector<RawInteraction> k_core_filter(std::vector<RawInteraction> events, std::size_t k) {
  if (k == 0) throw corpus_error("k_core_filter requires k >= 1");
  if (k == 1) return events;
  bool changed = true;
  while (changed && !events.empty()) {
    std::unordered_map<std::string, std::size_t> user_count, item_count;
    for (const auto& e : events) {
      ++user_count[e.user_key];
      ++item_count[e.item_key];
    }
    std::vector<RawInteraction> kept;
    kept.reserve(events.size());
    for (auto& e : events)
      if (user_count[e.user_key] >= k && item_count[e.item_key] >= k)
        kept.push_back(std::move(e));
    changed = kept.size() != events.size();
    events = std::move(kept);
  }
  return events;
}

InteractionLog build_log(const std::vector<RawInteraction>& events) {
  if (events.empty()) throw corpus_error("build_log: no events");
  InteractionLog log;
  std::unordered_map<std::string, std::uint32_t> user_ids, item_ids;
  log.item_keys.push_back("");  // padding slot
  for (const auto& e : events) {
    auto [uit, u_new] = user_ids.try_emplace(e.user_key,
                                             static_cast<std::uint32_t>(log.user_keys.size()));
    if (u_new) {
      log.user_keys.push_back(e.user_key);
      log.events_by_user.emplace_back();
    }
    auto [iit, i_new] = item_ids.try_emplace(e.item_key,
                                             static_cast<std::uint32_t>(log.item_keys.size()));
    if (i_new) log.item_keys.push_back(e.item_key);
    log.events_by_user[uit->second].push_back({uit->second, iit->second, e.timestamp});
  }
  log.num_users = log.user_keys.size();
  log.num_items = log.item_keys.size() - 1;
  log.item_counts.assign(log.num_items + 1, 0);
  for (auto& ev : log.events_by_user) {
    std::stable_sort(ev.begin(), ev.end(),
                     [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; });
    for (const auto& e : ev) ++log.item_counts[e.item];
  }
  return log;
}

SplitDataset leave_one_out(const InteractionLog& log) {
  SplitDataset split;
  split.num_items = log.num_items;
  split.item_keys = log.item_keys;
  for (std::size_t u = 0; u < log.num_users; ++u) {
    const auto& ev = log.events_by_user[u];
    if (ev.size() < 3) {
      ++split.dropped_users;
      continue;
    }
    std::vector<std::uint32_t> seq(ev.size() - 2);
    for (std::size_t t = 0; t + 2 < ev.size(); ++t) seq[t] = ev[t].item;
    split.train.push_back(std::move(seq));
    split.valid_item.push_back(ev[ev.size() - 2].item);
    split.test_item.push_back(ev[ev.size() - 1].item);
    split.user_keys.push_back(log.user_keys[u]);
  }
  split.num_users = split.train.size();
  split.train_counts = count_train_items(split);
  return split;
}

std::vector<std::uint64_t> count_train_items(const SplitDataset& split) {
  std::vector<std::uint64_t> counts(split.num_items + 1, 0);
  for (const auto& seq : split.train)
    for (std::uint32_t it : seq) ++counts[it];
  return counts;
}

void save_split_json(const SplitDataset& split, const std::string& path,
                     const std::string& config_digest) {
  json j;
  j["config_digest"] = config_digest;
  j["num_users"] = split.num_users;
  j["num_items"] = split.num_items;
  j["dropped_users"] = split.dropped_users;
  json users = json::array();
  for (std::size_t u = 0; u < split.num_users; ++u) {
    users.push_back({{"train", split.train[u]},
                     {"valid", split.valid_item[u]},
                     {"test", split.test_item[u]}});
  }
  j["users"] = std::move(users);
  std::ofstream out(path);
  if (!out) throw corpus_error("cannot write " + path);
  out << j.dump(0) << '\n';
}

SplitDataset load_split_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw corpus_error("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw corpus_error(path + ": " + e.what());
  }
  SplitDataset split;
  split.num_users = j.at("num_users").get<std::size_t>();
  split.num_items = j.at("num_items").get<std::size_t>();
  split.dropped_users = j.value("dropped_users", std::size_t{0});
  for (const auto& u : j.at("users")) {
    split.train.push_back(u.at("train").get<std::vector<std::uint32_t>>());
    split.valid_item.push_back(u.at("valid").get<std::uint32_t>());
    split.test_item.push_back(u.at("test").get<std::uint32_t>());
  }
  if (split.train.size() != split.num_users)
    throw corpus_error(path + ": user count does not match manifest entries");
  for (std::size_t u = 0; u < split.num_users; ++u) {
    if (split.train[u].empty()) throw corpus_error(path + ": user with empty train sequence");
    auto check = [&](std::uint32_t it) {
      if (it == 0 || it > split.num_items)
        throw corpus_error(path + ": item id " + std::to_string(it) + " out of range");
    };
    for (std::uint32_t it : split.train[u]) check(it);
    check(split.valid_item[u]);
    check(split.test_item[u]);
  }
  split.train_counts = count_train_items(split);
  return split;
}

void save_id_map(const std::vector<std::string>& keys, std::size_t first_dense_id,
                 const std::string& path) {
  std::ofstream out(path);
  if (!out) throw corpus_error("cannot write " + path);
  for (std::size_t i = first_dense_id; i < keys.size(); ++i)
    out << i << '\t' << keys[i] << '\n';
}

void save_counts(const SplitDataset& split, const std::string& path,
                 const std::string& config_digest) {
  std::ofstream out(path);
  if (!out) throw corpus_error("cannot write " + path);
  out << "# config_digest=" << config_digest << '\n';
  for (std::size_t i = 1; i < split.train_counts.size(); ++i)
    out << i << '\t' << split.train_counts[i] << '\n';
}

}  // namespace transrec
