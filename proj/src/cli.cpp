#include "transrec/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iomanip>

#include "transrec/eval.hpp"
#include "transrec/gradcheck.hpp"

namespace transrec {

namespace {

SplitDataset load_split_for(const ExperimentConfig& cfg) {
  const std::string path = cfg.split_path();
  if (path.empty())
    throw config_error("data.split is empty; run prepare and point data.split at split.json");
  return load_split_json(path);
}

Metrics evaluate_params(const ExperimentConfig& cfg, const EncoderParameters& params,
                        const SplitDataset& split, bool test_half) {
  auto ranked = rank_users(params, split, test_half, cfg.eval_batch(),
                           cfg.eval_exclude_history());
  return topk_metrics(ranked, cfg.eval_k());
}

}  // namespace

double interaction_density(std::size_t interactions, std::size_t users, std::size_t items) {
  if (users == 0 || items == 0) return 0.0;
  return static_cast<double>(interactions) /
         (static_cast<double>(users) * static_cast<double>(items));
}

std::size_t resolve_threads(std::size_t flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("TRANSREC_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

int cmd_prepare(const std::string& input_tsv, const std::string& out_dir, std::size_t k_core,
                std::ostream& out, std::ostream& err) {
  try {
    auto raw = parse_tsv(input_tsv);
    auto filtered = k_core_filter(std::move(raw), k_core);
    auto log = build_log(filtered);
    auto split = leave_one_out(log);
    split.train_counts = count_train_items(split);

    std::filesystem::create_directories(out_dir);
    const std::string digest = fnv1a_hex("prepare.k_core=" + std::to_string(k_core) + "\n" +
                                         "prepare.input=" + input_tsv + "\n");
    save_split_json(split, out_dir + "/split.json", digest);
    save_id_map(split.user_keys, 0, out_dir + "/user_map.tsv");
    save_id_map(split.item_keys, 1, out_dir + "/item_map.tsv");
    save_counts(split, out_dir + "/counts.csv", digest);

    std::size_t interactions = 0;
    for (const auto& seq : split.train) interactions += seq.size();
    interactions += 2 * split.num_users;  // one validation and one test item each

    out << "interactions " << interactions << "\n";
    out << "users " << split.num_users << "\n";
    out << "items " << split.num_items << "\n";
    out << "density " << std::fixed << std::setprecision(5)
        << interaction_density(interactions, split.num_users, split.num_items) << "\n";
    out.unsetf(std::ios::fixed);
    out << "dropped_users " << split.dropped_users << "\n";
    out << "wrote " << out_dir << "/split.json digest " << digest << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "prepare: " << e.what() << "\n";
    return 1;
  }
}

int cmd_train(const ExperimentConfig& cfg, const std::string& out_dir, bool verbose,
              std::ostream& out, std::ostream& err) {
  try {
    cfg.validate();  // config problems surface before any compute
    const std::string digest = cfg.digest();

    auto split = load_split_for(cfg);
    auto encoder_cfg = cfg.encoder_config(split.num_items);
    NegativeSampler sampler(split, cfg.sampler_config());
    TrainConfig train_cfg = cfg.train_config();
    train_cfg.quiet = !verbose;

    auto params = init_encoder(encoder_cfg, train_cfg.seed);
    auto res = train(std::move(params), split, sampler, train_cfg);

    std::filesystem::create_directories(out_dir);
    save_checkpoint(res.best, out_dir + "/checkpoint.bin", digest);
    write_trajectory_csv(out_dir + "/trajectory.csv", res.trajectory);

    const bool test_half = cfg.eval_split() == "test";
    auto metrics = evaluate_params(cfg, res.best, split, test_half);
    write_metrics_json(out_dir + "/metrics.json", metrics, cfg.eval_k(), cfg.eval_split(),
                       digest);

    out << "trained " << loss_name(train_cfg.loss) << " for " << res.epochs_run
        << " epochs, best valid ndcg@" << train_cfg.eval_k << " " << res.best_ndcg
        << " at epoch " << res.best_epoch << "\n";
    if (res.skipped_steps > 0)
      out << "skipped " << res.skipped_steps << " steps with non-finite gradients\n";
    out << cfg.eval_split() << " hr@" << cfg.eval_k() << " " << metrics.hr << " ndcg@"
        << cfg.eval_k() << " " << metrics.ndcg << "\n";
    out << "wrote " << out_dir << "/checkpoint.bin, trajectory.csv, metrics.json digest "
        << digest << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "train: " << e.what() << "\n";
    return 1;
  }
}

int cmd_evaluate(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                 const std::string& metrics_path, std::ostream& out, std::ostream& err) {
  try {
    cfg.validate();
    auto split = load_split_for(cfg);
    auto params = load_checkpoint(checkpoint_path);
    const bool test_half = cfg.eval_split() == "test";
    auto metrics = evaluate_params(cfg, params, split, test_half);
    write_metrics_json(metrics_path, metrics, cfg.eval_k(), cfg.eval_split(), cfg.digest());
    out << cfg.eval_split() << " hr@" << cfg.eval_k() << " " << metrics.hr << " ndcg@"
        << cfg.eval_k() << " " << metrics.ndcg << " over " << metrics.users << " users\n";
    out << "wrote " << metrics_path << " digest " << cfg.digest() << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "evaluate: " << e.what() << "\n";
    return 1;
  }
}

int cmd_analyze_buckets(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                        const std::string& csv_path, std::ostream& out, std::ostream& err) {
  try {
    cfg.validate();
    auto split = load_split_for(cfg);
    auto params = load_checkpoint(checkpoint_path);
    auto reports = bucket_scores(params, split, cfg.eval_buckets(), cfg.eval_batch());
    write_buckets_csv(csv_path, reports);
    for (const auto& r : reports)
      out << "bucket " << r.index << " items " << r.num_items << " mean_score "
          << r.mean_score << " std_error " << r.std_error << "\n";
    out << "wrote " << csv_path << " digest " << cfg.digest() << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "analyze buckets: " << e.what() << "\n";
    return 1;
  }
}

int cmd_analyze_terms(const std::vector<std::pair<std::string, std::string>>& logs,
                      const std::string& csv_path, std::ostream& out, std::ostream& err) {
  try {
    if (logs.empty()) throw eval_error("no trajectory logs given");
    std::vector<NamedSeries> series;
    for (const auto& [scheme, path] : logs) {
      auto [step, value] = read_trajectory_column(path, "preference");
      series.push_back({scheme, std::move(step), std::move(value)});
    }
    auto rows = compare_trajectories(series);
    write_trajectory_summary_csv(csv_path, rows);
    for (const auto& [scheme, summary] : rows)
      out << scheme << " rows " << summary.rows << " final_mean " << summary.final_mean
          << " slope " << summary.slope << "\n";
    out << "wrote " << csv_path << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "analyze terms: " << e.what() << "\n";
    return 1;
  }
}

int cmd_analyze_gradcheck(std::uint64_t seed, std::ostream& out, std::ostream& err) {
  try {
    auto cases = gradcheck_suite(seed);
    std::size_t failed = 0;
    for (const auto& c : cases) {
      out << (c.pass ? "pass" : "FAIL") << " " << c.name << " err " << c.err << " tol "
          << c.tol << "\n";
      if (!c.pass) ++failed;
    }
    out << cases.size() - failed << "/" << cases.size() << " gradient checks passed\n";
    return failed == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    err << "analyze gradcheck: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace transrec
