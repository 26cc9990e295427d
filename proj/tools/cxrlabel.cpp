// SPDX-License-Identifier: Apache-2.0
// cxrlabel: command-line front end for the chest X-ray labeling pipeline.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 stage failure.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <pthread.h>

#include <CLI11.hpp>

#include "cxr/errors.hpp"
#include "cxr/his_ingest.hpp"
#include "cxr/io.hpp"
#include "cxr/label_map.hpp"
#include "cxr/labeler.hpp"
#include "cxr/labels.hpp"
#include "cxr/metrics.hpp"
#include "cxr/pacs_ingest.hpp"
#include "cxr/pipeline.hpp"
#include "cxr/review_server.hpp"
#include "cxr/review_store.hpp"
#include "cxr/splitter.hpp"

namespace fs = std::filesystem;
using namespace cxr;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kStage = 3 };

// Flags left unset fall back to the pipeline config given with --config.
struct Defaults {
  std::optional<PipelineConfig> cfg;

  double threshold() const { return cfg ? cfg->pa_threshold : 0.5; }
  int window() const { return cfg ? cfg->match_window_hours : 24; }
  double ratio() const { return cfg ? cfg->split_ratio : 0.7; }
  std::uint64_t split_seed() const { return cfg ? cfg->split_seed : 13; }
  double tolerance() const { return cfg ? cfg->split_tolerance : 0.01; }
  std::size_t replicates() const { return cfg ? cfg->bootstrap_replicates : 3000; }
  std::uint64_t boot_seed() const { return cfg ? cfg->bootstrap_seed : 17; }
};

std::string need(const std::string& value, const std::string& flag) {
  if (value.empty()) throw CLI::RequiredError(flag);
  return value;
}

std::string or_cfg(const std::string& value, const std::optional<PipelineConfig>& cfg, fs::path PipelineConfig::*field,
                   const std::string& flag) {
  if (!value.empty()) return value;
  if (cfg && !((*cfg).*field).empty()) return ((*cfg).*field).string();
  throw CLI::RequiredError(flag);
}

void write_output(const std::string& path, const std::string& content) {
  if (path == "-") {
    std::cout << content;
    return;
  }
  io::write_file_atomic(path, content);
}

std::vector<LabelRow> read_labels(const std::string& path) {
  auto in = io::open_input(path);
  return read_label_csv(in);
}

void print_counts(const Counts& counts) {
  nlohmann::json j = counts;
  std::cerr << j.dump() << '\n';
}

// Splits "host:port"; a bare port binds to 127.0.0.1.
std::pair<std::string, int> parse_bind(const std::string& s) {
  auto colon = s.rfind(':');
  std::string host = colon == std::string::npos ? "127.0.0.1" : s.substr(0, colon);
  std::string port = colon == std::string::npos ? s : s.substr(colon + 1);
  try {
    std::size_t used = 0;
    int p = std::stoi(port, &used);
    if (used != port.size() || p < 0 || p > 65535) throw std::out_of_range(port);
    return {host, p};
  } catch (const std::exception&) {
    throw CLI::ValidationError("--bind", "expected host:port, got '" + s + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chest X-ray report labeling pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string("cxrlabel ") + CXR_VERSION);

  std::string config_path;
  app.add_option("--config", config_path, "Pipeline config (YAML) supplying defaults")->check(CLI::ExistingFile);
  Defaults d;

  // ingest-his
  auto* his = app.add_subcommand("ingest-his", "Parse HIS session XML into chest report records");
  std::string his_in, his_wl, his_out;
  his->add_option("--in", his_in, "Directory of session XML files");
  his->add_option("--whitelist", his_wl, "Chest service-id whitelist");
  his->add_option("--out", his_out, "Output reports JSONL ('-' for stdout)")->required();

  // ingest-pacs
  auto* pacs = app.add_subcommand("ingest-pacs", "Load the study manifest and keep PA views");
  std::string pacs_manifest, pacs_scorer, pacs_out, pacs_ignored;
  std::optional<double> pacs_threshold;
  int scorer_timeout = 10000;
  unsigned scorer_conc = 4;
  pacs->add_option("--manifest", pacs_manifest, "Study manifest JSONL");
  pacs->add_option("--scorer", pacs_scorer, "View scorer base URL for unscored studies");
  pacs->add_option("--scorer-timeout-ms", scorer_timeout)->check(CLI::PositiveNumber);
  pacs->add_option("--scorer-concurrency", scorer_conc)->check(CLI::Range(1u, 256u));
  pacs->add_option("--threshold", pacs_threshold, "Keep studies with pa_probability above this")->check(CLI::Range(0.0, 1.0));
  pacs->add_option("--out", pacs_out, "Kept studies JSONL")->required();
  pacs->add_option("--ignored", pacs_ignored, "Ignored studies JSONL");

  // match
  auto* match = app.add_subcommand("match", "Link studies to HIS reports");
  std::string m_studies, m_reports, m_out, m_conflicts, m_queue;
  std::optional<int> m_window;
  match->add_option("--studies", m_studies)->required();
  match->add_option("--reports", m_reports)->required();
  match->add_option("--window-hours", m_window)->check(CLI::Range(0, 24 * 365));
  match->add_option("--out", m_out)->required();
  match->add_option("--conflicts", m_conflicts)->required();
  match->add_option("--queue", m_queue, "Review log; conflicts are enqueued there");

  // label
  auto* label = app.add_subcommand("label", "Label matched descriptions with templates and keywords");
  std::string l_matches, l_config, l_keywords, l_out, l_queue;
  label->add_option("--matches", l_matches)->required();
  label->add_option("--config", l_config,
                    "Keyword config, or a pipeline config whose paths.keyword_config is used")
      ->check(CLI::ExistingFile);
  label->add_option("--keywords", l_keywords, "Keyword config")->check(CLI::ExistingFile);
  label->add_option("--out", l_out)->required();
  label->add_option("--queue", l_queue, "Review log for residual descriptions");

  // review-serve
  auto* serve = app.add_subcommand("review-serve", "Serve the review queue over HTTP");
  std::string s_queue, s_bind = "127.0.0.1:8642", s_static;
  serve->add_option("--queue", s_queue);
  serve->add_option("--bind", s_bind, "host:port (port 0 picks a free one)")->capture_default_str();
  serve->add_option("--static", s_static, "Directory with the review UI build")->check(CLI::ExistingDirectory);

  // map-chexpert
  auto* chex = app.add_subcommand("map-chexpert", "Map CheXpert observations onto the five classes");
  std::string c_in, c_out, c_uncertain = "as-negative";
  chex->add_option("--in", c_in)->required();
  chex->add_option("--out", c_out)->required();
  chex->add_option("--uncertain", c_uncertain)->check(CLI::IsMember({"as-negative", "as-positive"}))->capture_default_str();

  // split
  auto* split = app.add_subcommand("split", "Stratified train/validation split");
  std::string sp_labels, sp_train, sp_val, sp_report;
  std::optional<double> sp_ratio, sp_tol;
  std::optional<std::uint64_t> sp_seed;
  split->add_option("--labels", sp_labels)->required();
  split->add_option("--ratio", sp_ratio);
  split->add_option("--seed", sp_seed);
  split->add_option("--tolerance", sp_tol);
  split->add_option("--out-train", sp_train)->required();
  split->add_option("--out-val", sp_val)->required();
  split->add_option("--report", sp_report);

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Score automatic labels against ground truth");
  std::string e_auto, e_truth, e_scores, e_report;
  std::optional<std::size_t> e_boot;
  std::optional<std::uint64_t> e_seed;
  unsigned e_threads = 1;
  eval->add_option("--auto", e_auto)->required();
  eval->add_option("--truth", e_truth)->required();
  eval->add_option("--scores", e_scores, "Per-class scores for AUC");
  eval->add_option("--bootstrap", e_boot, "Bootstrap replicates (0 disables)");
  eval->add_option("--seed", e_seed);
  eval->add_option("--threads", e_threads)->check(CLI::Range(1u, 256u));
  eval->add_option("--report", e_report, "Write the JSON report here");

  // qc-sample
  auto* qc = app.add_subcommand("qc-sample", "Enqueue a QC sample of labeled studies, or export corrections");
  std::string q_labels, q_matches, q_queue, q_overlay;
  double q_rate = 0.05;
  std::uint64_t q_seed = 0;
  int q_round = 1;
  qc->add_option("--labels", q_labels, "Label CSV to sample from");
  qc->add_option("--matches", q_matches, "Matches JSONL supplying descriptions");
  qc->add_option("--rate", q_rate)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  qc->add_option("--seed", q_seed)->capture_default_str();
  qc->add_option("--round", q_round)->check(CLI::PositiveNumber)->capture_default_str();
  qc->add_option("--queue", q_queue);
  qc->add_option("--export-overlay", q_overlay, "Write manual and corrected labels from the queue as CSV");

  // run
  auto* run = app.add_subcommand("run", "Run ingest-his, ingest-pacs, match and label");
  std::string r_out;
  run->add_option("--output-dir", r_out, "Override paths.output_dir");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (!config_path.empty()) d.cfg = validate_config(config_path, false);

    if (*his) {
      const auto& out = his_out;
      auto in_dir = or_cfg(his_in, d.cfg, &PipelineConfig::his_dir, "--in");
      auto wl = or_cfg(his_wl, d.cfg, &PipelineConfig::whitelist, "--whitelist");
      if (out == "-") {
        auto wl_in = io::open_input(wl);
        auto whitelist = read_whitelist(wl_in);
        std::vector<ReportRecord> all;
        for (auto& s : parse_session_dir(in_dir))
          for (auto& r : s.reports) all.push_back(std::move(r));
        for (const auto& r : filter_chest_reports(all, whitelist)) std::cout << to_json(r).dump() << '\n';
      } else {
        print_counts(stage_ingest_his(in_dir, wl, out).counts);
      }
    } else if (*pacs) {
      PacsStageOptions opt;
      opt.threshold = pacs_threshold.value_or(d.threshold());
      std::string endpoint = pacs_scorer.empty() && d.cfg ? d.cfg->scorer_endpoint : pacs_scorer;
      if (!endpoint.empty()) opt.scorer = ViewScorerClient{endpoint, std::chrono::milliseconds(scorer_timeout), scorer_conc};
      auto manifest = or_cfg(pacs_manifest, d.cfg, &PipelineConfig::pacs_manifest, "--manifest");
      auto ignored = pacs_ignored.empty() ? fs::path(pacs_out).replace_extension(".ignored.jsonl").string() : pacs_ignored;
      print_counts(stage_ingest_pacs(manifest, opt, pacs_out, ignored).counts);
    } else if (*match) {
      std::unique_ptr<QueueStore> queue;
      if (!m_queue.empty()) queue = std::make_unique<QueueStore>(m_queue);
      print_counts(stage_match(m_studies, m_reports, m_window.value_or(d.window()), m_out, m_conflicts, queue.get()));
    } else if (*label) {
      std::string kw_path = l_keywords;
      if (kw_path.empty() && !l_config.empty()) {
        // A pipeline config names its keyword file; anything else is the keyword file itself.
        YAML::Node root;
        try {
          root = YAML::Load(read_file_bytes(l_config));
        } catch (const YAML::Exception& e) {
          throw ConfigError(l_config, e.what());
        }
        kw_path = root.IsMap() && root["paths"] ? validate_config(l_config, false).keyword_config.string() : l_config;
      }
      if (kw_path.empty() && d.cfg) kw_path = d.cfg->keyword_config.string();
      need(kw_path, "--keywords");
      auto keywords = load_keyword_config(kw_path);
      std::unique_ptr<QueueStore> queue;
      if (!l_queue.empty()) queue = std::make_unique<QueueStore>(l_queue);
      print_counts(stage_label(l_matches, keywords, l_out, queue.get()));
    } else if (*serve) {
      auto queue_path = or_cfg(s_queue, d.cfg, &PipelineConfig::queue_log, "--queue");
      QueueStore store(queue_path);
      ReviewServer server(store, s_static);
      auto [host, port] = parse_bind(s_bind);
      int bound = server.bind(host, port);
      // Signals are taken synchronously on a dedicated thread; worker
      // threads inherit the blocked mask.
      sigset_t stop_signals;
      sigemptyset(&stop_signals);
      sigaddset(&stop_signals, SIGINT);
      sigaddset(&stop_signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);
      std::thread watcher([&] {
        int sig = 0;
        sigwait(&stop_signals, &sig);
        server.stop();
      });
      std::cerr << "review-serve listening on http://" << host << ':' << bound << " (" << store.size() << " items)\n";
      server.run();
      if (watcher.joinable()) {
        pthread_kill(watcher.native_handle(), SIGTERM);  // no-op if it already fired
        watcher.join();
      }
    } else if (*chex) {
      auto policy = c_uncertain == "as-positive" ? UncertainPolicy::AsPositive : UncertainPolicy::AsNegative;
      auto in = io::open_input(c_in);
      std::ostringstream out;
      auto rows = map_file(in, out, policy, [](const std::string& w) { std::cerr << "warning: " << w << '\n'; });
      write_output(c_out, out.str());
      std::cerr << rows << " rows mapped\n";
    } else if (*split) {
      std::vector<std::pair<std::string, LabelVector>> labels;
      for (auto& r : read_labels(sp_labels)) labels.emplace_back(r.study_uid, r.labels);
      auto result = stratified_split(std::move(labels), sp_ratio.value_or(d.ratio()), sp_seed.value_or(d.split_seed()),
                                     sp_tol.value_or(d.tolerance()));
      auto lines = [](const std::vector<std::string>& uids) {
        std::string s;
        for (const auto& u : uids) s += u + '\n';
        return s;
      };
      write_output(sp_train, lines(result.train_uids));
      write_output(sp_val, lines(result.val_uids));
      auto report = to_json(result.ratio_report);
      report["n_train"] = result.train_uids.size();
      report["n_val"] = result.val_uids.size();
      if (!sp_report.empty()) write_output(sp_report, report.dump(2) + "\n");
      if (!result.ratio_report.tolerance_met)
        std::cerr << "warning: max class-rate deviation " << result.ratio_report.max_deviation() << " exceeds tolerance\n";
    } else if (*eval) {
      auto automatic = read_labels(e_auto);
      auto truth = read_labels(e_truth);
      std::optional<std::vector<ScoreRow>> scores;
      if (!e_scores.empty()) {
        auto in = io::open_input(e_scores);
        scores = read_score_csv(in);
      }
      std::optional<BootstrapOptions> boot;
      auto reps = e_boot.value_or(d.replicates());
      if (reps > 0) boot = BootstrapOptions{reps, e_seed.value_or(d.boot_seed()), e_threads};
      auto report = evaluate_labeler(automatic, truth, scores ? &*scores : nullptr, boot);
      std::cout << format_table(report);
      if (!e_report.empty()) write_output(e_report, to_json(report).dump(2) + "\n");
    } else if (*qc) {
      auto queue_path = or_cfg(q_queue, d.cfg, &PipelineConfig::queue_log, "--queue");
      QueueStore store(queue_path);
      if (!q_overlay.empty()) {
        std::ostringstream out;
        write_label_csv(out, manual_label_overlay(store));
        write_output(q_overlay, out.str());
        return kOk;
      }
      need(q_labels, "--labels");
      std::unordered_map<std::string, std::string> descriptions;
      if (!q_matches.empty()) {
        auto in = io::open_input(q_matches);
        io::for_each_jsonl(in, [&](const nlohmann::json& j, std::size_t) {
          if (j.value("status", "") == "matched") descriptions[j.value("study_uid", "")] = j.value("description", "");
        });
      }
      std::vector<QcCandidate> candidates;
      for (auto& r : read_labels(q_labels)) {
        auto it = descriptions.find(r.study_uid);
        candidates.push_back({r.study_uid, r.labels, it == descriptions.end() ? "" : it->second});
      }
      std::size_t added = 0;
      auto items = qc_sample(std::move(candidates), q_rate, q_seed, q_round);
      for (auto& item : items) {
        bool fresh = !store.get(item.item_id);
        std::cout << store.enqueue(std::move(item)) << '\n';
        added += fresh;
      }
      std::cerr << items.size() << " sampled, " << added << " newly enqueued (round " << q_round << ")\n";
    } else if (*run) {
      if (!d.cfg) throw CLI::RequiredError("--config");
      auto cfg = validate_config(config_path, true);
      if (!r_out.empty()) {
        bool default_queue = cfg.queue_log == cfg.output_dir / "queue.jsonl";
        cfg.output_dir = fs::absolute(r_out);
        if (default_queue) cfg.queue_log = cfg.output_dir / "queue.jsonl";
      }
      auto manifest = run_pipeline(cfg);
      nlohmann::json summary = manifest.summary();
      std::cout << summary.dump(2) << '\n';
    }
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const StageFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kStage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kStage;
  }
  return kOk;
}
