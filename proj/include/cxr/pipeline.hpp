// SPDX-License-Identifier: Apache-2.0
#pragma once

// End-to-end dataset construction:
//
//   ingest-his  -> reports.jsonl
//   ingest-pacs -> studies.jsonl, ignored.jsonl
//   match       -> matches.jsonl, conflicts.jsonl   (+ conflicts queued)
//   label       -> labels.csv                       (+ residuals queued)
//
// Every stage reads and writes plain files, written atomically. Each stage
// is also callable on its own; the CLI verbs are thin wrappers around the
// stage_* functions below.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "cxr/errors.hpp"
#include "cxr/his_ingest.hpp"
#include "cxr/io.hpp"
#include "cxr/labeler.hpp"
#include "cxr/labels.hpp"
#include "cxr/matcher.hpp"
#include "cxr/pacs_ingest.hpp"
#include "cxr/review_store.hpp"
#include "cxr/time.hpp"
#include "cxr/view_scorer_http.hpp"

#ifndef CXR_VERSION
#define CXR_VERSION "0.0.0"
#endif

namespace cxr {

namespace fs = std::filesystem;

// One JSON object per line: {"ts":..,"stage":..,"event":..,...}.
class EventLog {
 public:
  EventLog() = default;
  explicit EventLog(std::ostream* sink) : sink_(sink) {}

  void emit(const std::string& stage, const std::string& event, nlohmann::json fields = nlohmann::json::object()) {
    if (!sink_) return;
    nlohmann::json rec = {{"ts", format_instant(now_instant())}, {"stage", stage}, {"event", event}};
    for (auto& [k, v] : fields.items()) rec[k] = v;
    *sink_ << rec.dump() << '\n';
    sink_->flush();
  }

 private:
  std::ostream* sink_ = nullptr;
};

using Counts = std::map<std::string, std::size_t>;

// ---------------------------------------------------------------------------
// Stages

struct HisStageOutput {
  std::vector<ReportRecord> reports;  // chest reports only
  Counts counts;
};

inline HisStageOutput stage_ingest_his(const fs::path& his_dir, const fs::path& whitelist_path,
                                       const fs::path& out_reports) {
  auto wl_in = io::open_input(whitelist_path);
  auto whitelist = read_whitelist(wl_in);
  auto sessions = parse_session_dir(his_dir);
  std::vector<ReportRecord> all;
  for (auto& s : sessions)
    for (auto& r : s.reports) all.push_back(std::move(r));
  HisStageOutput out;
  out.reports = filter_chest_reports(all, whitelist);
  std::ostringstream ss;
  for (const auto& r : out.reports) ss << to_json(r).dump() << '\n';
  io::write_file_atomic(out_reports, ss.str());
  out.counts = {{"sessions", sessions.size()}, {"reports", all.size()}, {"chest_reports", out.reports.size()}};
  return out;
}

struct PacsStageOptions {
  double threshold = 0.5;
  std::optional<ViewScorerClient> scorer;
};

struct PacsStageOutput {
  PaPartition partition;
  std::vector<ScoreFailure> failures;
  Counts counts;
};

inline PacsStageOutput stage_ingest_pacs(const fs::path& manifest, const PacsStageOptions& opt,
                                         const fs::path& out_studies, const fs::path& out_ignored) {
  auto in = io::open_input(manifest);
  auto studies = parse_study_manifest(in);
  PacsStageOutput out;
  std::size_t scored = 0;
  if (opt.scorer) {
    auto before = std::count_if(studies.begin(), studies.end(), [](const StudyRecord& s) { return !s.pa_probability; });
    auto result = score_views(studies, make_http_scorer(*opt.scorer), opt.scorer->max_concurrency);
    studies = std::move(result.studies);
    out.failures = std::move(result.failures);
    scored = static_cast<std::size_t>(before) - out.failures.size();
  }
  if (!out.failures.empty()) {
    std::string uids;
    for (const auto& f : out.failures) uids += (uids.empty() ? "" : ", ") + f.study_uid;
    throw DataError("view scorer failed for: " + uids);
  }
  out.partition = filter_pa(studies, opt.threshold);
  std::ostringstream kept, ignored;
  write_study_manifest(kept, out.partition.kept);
  write_study_manifest(ignored, out.partition.ignored);
  io::write_file_atomic(out_studies, kept.str());
  io::write_file_atomic(out_ignored, ignored.str());
  out.counts = {{"studies", studies.size()},
                {"scored", scored},
                {"pa_kept", out.partition.kept.size()},
                {"pa_ignored", out.partition.ignored.size()}};
  return out;
}

inline std::vector<StudyRecord> read_studies_file(const fs::path& path) {
  auto in = io::open_input(path);
  return parse_study_manifest(in);
}

inline std::vector<ReportRecord> read_reports_file(const fs::path& path) {
  auto in = io::open_input(path);
  return read_reports_jsonl(in);
}

// Conflicts already resolved in the queue become matches to the chosen
// report; new conflicts are enqueued.
inline Counts stage_match(const fs::path& studies_path, const fs::path& reports_path, int window_hours,
                          const fs::path& out_matches, const fs::path& out_conflicts, QueueStore* queue) {
  auto studies = read_studies_file(studies_path);
  auto reports = read_reports_file(reports_path);
  auto table = match_all(studies, reports, window_hours);
  std::unordered_map<std::string, const ReportRecord*> by_id;
  for (const auto& r : reports) by_id[r.report_id] = &r;

  Counts counts{{"studies", studies.size()}, {"matched", 0}, {"conflicts", 0}, {"unmatched", 0},
                {"conflicts_resolved", 0}, {"conflicts_queued", 0}};
  std::ostringstream matches, conflicts;
  for (std::size_t i = 0; i < studies.size(); ++i) {
    auto outcome = table.outcomes[i];
    const auto& study = studies[i];
    if (outcome.status == MatchStatus::Conflict) {
      auto rec = match_record_json(outcome, study, by_id);
      std::optional<ReviewItem> item;
      if (queue) item = conflict_item(study.study_uid, study.image_ref, rec["candidates"]);
      auto existing = item ? queue->get(item->item_id) : std::nullopt;
      if (existing && existing->status == ItemStatus::Resolved) {
        outcome.status = MatchStatus::Matched;
        outcome.report_id = existing->resolution.value("report_id", "");
        outcome.candidate_ids.clear();
        ++counts["conflicts_resolved"];
      } else {
        conflicts << rec.dump() << '\n';
        ++counts["conflicts"];
        if (item) {
          queue->enqueue(std::move(*item));
          ++counts["conflicts_queued"];
        }
      }
    }
    if (outcome.status == MatchStatus::Matched) ++counts["matched"];
    if (outcome.status == MatchStatus::Unmatched) ++counts["unmatched"];
    matches << match_record_json(outcome, study, by_id).dump() << '\n';
  }
  io::write_file_atomic(out_matches, matches.str());
  io::write_file_atomic(out_conflicts, conflicts.str());
  return counts;
}

// Labels every matched study. Residual descriptions go to the queue; those
// a reviewer has already resolved are emitted with source=manual.
inline Counts stage_label(const fs::path& matches_path, const KeywordConfig& config, const fs::path& out_labels,
                          QueueStore* queue) {
  Counts counts{{"matched", 0}, {"auto_labeled", 0}, {"template_normal", 0}, {"keyword", 0},
                {"residual", 0}, {"residual_queued", 0}, {"residual_resolved", 0}};
  std::ostringstream csv_out;
  write_label_header(csv_out);
  auto in = io::open_input(matches_path);
  io::for_each_jsonl(in, [&](const nlohmann::json& j, std::size_t line) {
    if (j.value("status", "") != "matched") return;
    if (!j.contains("description") || !j["description"].is_string()) throw MalformedLine("matched record lacks description", line);
    ++counts["matched"];
    const auto uid = j.value("study_uid", "");
    const auto description = j["description"].get<std::string>();
    auto result = label_description(description, config);
    if (result.labels) {
      ++counts["auto_labeled"];
      ++counts[result.labels->source == LabelSource::TemplateNormal ? "template_normal" : "keyword"];
      write_label_row(csv_out, {uid, *result.labels});
      return;
    }
    ++counts["residual"];
    if (!queue) return;
    auto item = residual_item(uid, j.value("report_id", ""), description, j.value("image_ref", ""));
    auto existing = queue->get(item.item_id);
    if (existing && existing->status == ItemStatus::Resolved) {
      if (auto labels = labels_from_json(existing->resolution.value("labels", nlohmann::json()))) {
        ++counts["residual_resolved"];
        write_label_row(csv_out, {uid, *labels});
        return;
      }
    }
    queue->enqueue(std::move(item));
    ++counts["residual_queued"];
  });
  io::write_file_atomic(out_labels, csv_out.str());
  return counts;
}

// ---------------------------------------------------------------------------
// Configuration

struct PipelineConfig {
  fs::path his_dir;
  fs::path pacs_manifest;
  fs::path keyword_config;
  fs::path whitelist;
  fs::path output_dir;
  fs::path queue_log;  // defaults to <output_dir>/queue.jsonl

  double pa_threshold = 0.5;
  int match_window_hours = 24;

  std::string scorer_endpoint;  // empty: manifest must be pre-scored
  int scorer_timeout_ms = 10000;
  unsigned scorer_concurrency = 4;

  double split_ratio = 0.7;
  std::uint64_t split_seed = 13;
  double split_tolerance = 0.01;

  std::size_t bootstrap_replicates = 3000;
  std::uint64_t bootstrap_seed = 17;

  nlohmann::json snapshot() const {
    return {{"paths",
             {{"his_dir", his_dir.string()},
              {"pacs_manifest", pacs_manifest.string()},
              {"keyword_config", keyword_config.string()},
              {"whitelist", whitelist.string()},
              {"output_dir", output_dir.string()},
              {"queue_log", queue_log.string()}}},
            {"pa_threshold", pa_threshold},
            {"match_window_hours", match_window_hours},
            {"scorer", {{"endpoint", scorer_endpoint}, {"timeout_ms", scorer_timeout_ms}, {"concurrency", scorer_concurrency}}},
            {"split", {{"ratio", split_ratio}, {"seed", split_seed}, {"tolerance", split_tolerance}}},
            {"bootstrap", {{"replicates", bootstrap_replicates}, {"seed", bootstrap_seed}}}};
  }
};

namespace detail {

template <typename T>
T config_scalar(const YAML::Node& node, const std::string& field, T fallback) {
  if (!node) return fallback;
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(field, "wrong type");
  }
}

}  // namespace detail

// Parses a YAML pipeline config. Relative paths resolve against `base_dir`.
// Required: paths.{his_dir,pacs_manifest,keyword_config,whitelist,output_dir}.
inline PipelineConfig parse_pipeline_config(const std::string& text, const fs::path& base_dir,
                                            bool check_paths = true) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("<document>", e.what());
  }
  if (!root.IsMap()) throw ConfigError("<document>", "expected a mapping");
  PipelineConfig c;
  auto paths = root["paths"];
  if (!paths || !paths.IsMap()) throw ConfigError("paths", "missing");
  auto path_field = [&](const char* key, bool required) -> fs::path {
    auto n = paths[key];
    if (!n) {
      if (required) throw ConfigError(std::string("paths.") + key, "missing");
      return {};
    }
    fs::path p = detail::config_scalar<std::string>(n, std::string("paths.") + key, "");
    if (p.empty()) throw ConfigError(std::string("paths.") + key, "empty");
    return p.is_absolute() ? p : (base_dir / p).lexically_normal();
  };
  c.his_dir = path_field("his_dir", true);
  c.pacs_manifest = path_field("pacs_manifest", true);
  c.keyword_config = path_field("keyword_config", true);
  c.whitelist = path_field("whitelist", true);
  c.output_dir = path_field("output_dir", true);
  c.queue_log = path_field("queue_log", false);
  if (c.queue_log.empty()) c.queue_log = c.output_dir / "queue.jsonl";

  c.pa_threshold = detail::config_scalar(root["pa_threshold"], "pa_threshold", c.pa_threshold);
  if (!(c.pa_threshold >= 0.0 && c.pa_threshold <= 1.0)) throw ConfigError("pa_threshold", "must lie in [0, 1]");
  c.match_window_hours = detail::config_scalar(root["match_window_hours"], "match_window_hours", c.match_window_hours);
  if (c.match_window_hours < 0 || c.match_window_hours > 24 * 365)
    throw ConfigError("match_window_hours", "must lie in [0, 8760]");

  if (auto s = root["scorer"]) {
    c.scorer_endpoint = detail::config_scalar<std::string>(s["endpoint"], "scorer.endpoint", "");
    c.scorer_timeout_ms = detail::config_scalar(s["timeout_ms"], "scorer.timeout_ms", c.scorer_timeout_ms);
    c.scorer_concurrency = detail::config_scalar(s["concurrency"], "scorer.concurrency", c.scorer_concurrency);
    if (c.scorer_timeout_ms <= 0) throw ConfigError("scorer.timeout_ms", "must be positive");
    if (c.scorer_concurrency < 1 || c.scorer_concurrency > 256) throw ConfigError("scorer.concurrency", "must lie in [1, 256]");
  }
  if (auto s = root["split"]) {
    c.split_ratio = detail::config_scalar(s["ratio"], "split.ratio", c.split_ratio);
    c.split_seed = detail::config_scalar(s["seed"], "split.seed", c.split_seed);
    c.split_tolerance = detail::config_scalar(s["tolerance"], "split.tolerance", c.split_tolerance);
    if (!(c.split_ratio > 0.0 && c.split_ratio < 1.0)) throw ConfigError("split.ratio", "must lie in (0, 1)");
    if (!(c.split_tolerance > 0.0 && c.split_tolerance <= 1.0)) throw ConfigError("split.tolerance", "must lie in (0, 1]");
  }
  if (auto b = root["bootstrap"]) {
    c.bootstrap_replicates = detail::config_scalar(b["replicates"], "bootstrap.replicates", c.bootstrap_replicates);
    c.bootstrap_seed = detail::config_scalar(b["seed"], "bootstrap.seed", c.bootstrap_seed);
    if (c.bootstrap_replicates < 1 || c.bootstrap_replicates > 1000000)
      throw ConfigError("bootstrap.replicates", "must lie in [1, 1000000]");
  }

  if (check_paths) {
    if (!fs::is_directory(c.his_dir)) throw ConfigError("paths.his_dir", "not a directory: " + c.his_dir.string());
    if (!fs::is_regular_file(c.pacs_manifest)) throw ConfigError("paths.pacs_manifest", "no such file: " + c.pacs_manifest.string());
    if (!fs::is_regular_file(c.keyword_config)) throw ConfigError("paths.keyword_config", "no such file: " + c.keyword_config.string());
    if (!fs::is_regular_file(c.whitelist)) throw ConfigError("paths.whitelist", "no such file: " + c.whitelist.string());
  }
  return c;
}

inline PipelineConfig validate_config(const fs::path& path, bool check_paths = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_pipeline_config(ss.str(), fs::absolute(path).parent_path(), check_paths);
}

// ---------------------------------------------------------------------------
// Full run

struct RunManifest {
  nlohmann::json config;
  std::map<std::string, Counts> stage_counts;
  std::map<std::string, double> stage_seconds;
  std::string version = CXR_VERSION;

  // Headline counts: parsed, pa_kept, matched, conflicts, auto_labeled, queued, resolved.
  Counts summary() const {
    auto get = [this](const std::string& stage, const std::string& key) -> std::size_t {
      auto s = stage_counts.find(stage);
      if (s == stage_counts.end()) return 0;
      auto k = s->second.find(key);
      return k == s->second.end() ? 0 : k->second;
    };
    return {{"parsed_reports", get("ingest-his", "reports")},
            {"chest_reports", get("ingest-his", "chest_reports")},
            {"studies", get("ingest-pacs", "studies")},
            {"pa_kept", get("ingest-pacs", "pa_kept")},
            {"pa_ignored", get("ingest-pacs", "pa_ignored")},
            {"matched", get("match", "matched")},
            {"conflicts", get("match", "conflicts")},
            {"unmatched", get("match", "unmatched")},
            {"auto_labeled", get("label", "auto_labeled")},
            {"queued", get("label", "residual_queued") + get("match", "conflicts_queued")},
            {"queued_residual", get("label", "residual_queued")},
            {"resolved", get("label", "residual_resolved") + get("match", "conflicts_resolved")}};
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["version"] = version;
    j["config"] = config;
    j["counts"] = summary();
    j["stages"] = nlohmann::json::object();
    for (const auto& [stage, counts] : stage_counts) j["stages"][stage]["counts"] = counts;
    for (const auto& [stage, secs] : stage_seconds) j["stages"][stage]["seconds"] = secs;
    return j;
  }
};

struct StageFiles {
  fs::path reports, studies, ignored, matches, conflicts, labels, manifest, log;

  explicit StageFiles(const fs::path& dir)
      : reports(dir / "reports.jsonl"),
        studies(dir / "studies.jsonl"),
        ignored(dir / "ignored.jsonl"),
        matches(dir / "matches.jsonl"),
        conflicts(dir / "conflicts.jsonl"),
        labels(dir / "labels.csv"),
        manifest(dir / "manifest.json"),
        log(dir / "pipeline.log") {}

  std::vector<fs::path> artifacts() const { return {reports, studies, ignored, matches, conflicts, labels}; }
};

namespace detail {

// Moves whatever the run produced (including temp files) into failed/.
inline void preserve_partial_outputs(const fs::path& output_dir, const StageFiles& files) {
  auto failed = output_dir / "failed";
  fs::create_directories(failed);
  for (const auto& p : files.artifacts()) {
    for (auto candidate : {p, fs::path(p.string() + ".tmp")}) {
      std::error_code ec;
      if (fs::exists(candidate, ec)) fs::rename(candidate, failed / candidate.filename(), ec);
    }
  }
}

}  // namespace detail

inline RunManifest run_pipeline(const PipelineConfig& cfg, std::ostream* log_sink = nullptr) {
  fs::create_directories(cfg.output_dir);
  StageFiles files(cfg.output_dir);
  std::ofstream log_file(files.log, std::ios::trunc);
  EventLog log(log_sink ? log_sink : &log_file);

  RunManifest manifest;
  manifest.config = cfg.snapshot();
  std::unique_ptr<QueueStore> queue;

  auto run_stage = [&](const std::string& name, auto&& body) {
    log.emit(name, "start");
    auto t0 = std::chrono::steady_clock::now();
    try {
      Counts c = body();
      manifest.stage_counts[name] = c;
      manifest.stage_seconds[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log.emit(name, "done", {{"counts", c}});
    } catch (const std::exception& e) {
      log.emit(name, "failed", {{"error", e.what()}});
      detail::preserve_partial_outputs(cfg.output_dir, files);
      throw StageFailure(name, e.what());
    }
  };

  run_stage("ingest-his", [&] { return stage_ingest_his(cfg.his_dir, cfg.whitelist, files.reports).counts; });
  run_stage("ingest-pacs", [&] {
    PacsStageOptions opt;
    opt.threshold = cfg.pa_threshold;
    if (!cfg.scorer_endpoint.empty())
      opt.scorer = ViewScorerClient{cfg.scorer_endpoint, std::chrono::milliseconds(cfg.scorer_timeout_ms),
                                    cfg.scorer_concurrency};
    return stage_ingest_pacs(cfg.pacs_manifest, opt, files.studies, files.ignored).counts;
  });
  run_stage("match", [&] {
    queue = std::make_unique<QueueStore>(cfg.queue_log);
    return stage_match(files.studies, files.reports, cfg.match_window_hours, files.matches, files.conflicts,
                       queue.get());
  });
  run_stage("label", [&] {
    auto keywords = load_keyword_config(cfg.keyword_config);
    return stage_label(files.matches, keywords, files.labels, queue.get());
  });

  io::write_file_atomic(files.manifest, manifest.to_json().dump(2) + "\n");
  log.emit("run", "done", {{"counts", manifest.summary()}});
  return manifest;
}

}  // namespace cxr
