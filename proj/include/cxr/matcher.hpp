// SPDX-License-Identifier: Apache-2.0
#pragma once

// Study-to-report linkage.
//
// A report is a candidate for a study when all three hold:
//   1. same patient id;
//   2. |report_time - study_time| <= window (inclusive);
//   3. check_in_time <= study_time <= check_out_time of the report's session.
// Several candidates with the same normalized description are re-takes of
// one examination and resolve to the earliest report; differing
// descriptions are a conflict for manual review.

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "cxr/errors.hpp"
#include "cxr/his_ingest.hpp"
#include "cxr/pacs_ingest.hpp"
#include "cxr/text.hpp"

namespace cxr {

enum class MatchStatus { Matched, Conflict, Unmatched };

inline constexpr std::string_view status_name(MatchStatus s) {
  switch (s) {
    case MatchStatus::Matched: return "matched";
    case MatchStatus::Conflict: return "conflict";
    case MatchStatus::Unmatched: return "unmatched";
  }
  return "?";
}

struct MatchOutcome {
  std::string study_uid;
  MatchStatus status = MatchStatus::Unmatched;
  std::string report_id;                   // Matched only
  std::vector<std::string> candidate_ids;  // Conflict only

  friend bool operator==(const MatchOutcome&, const MatchOutcome&) = default;
};

struct MatchTable {
  std::vector<MatchOutcome> outcomes;           // input study order
  std::map<std::string, std::size_t> report_usage;  // report_id -> studies assigned
};

using TextNormalizer = std::function<std::string(std::string_view)>;

inline bool report_before(const ReportRecord& a, const ReportRecord& b) {
  if (a.report_time != b.report_time) return a.report_time < b.report_time;
  return a.report_id < b.report_id;
}

inline bool is_candidate(const StudyRecord& study, const ReportRecord& r, std::chrono::hours window) {
  if (r.patient_id != study.patient_id) return false;
  auto gap = r.report_time - study.study_time;
  if (gap < decltype(gap)::zero()) gap = -gap;
  if (gap > window) return false;
  return r.check_in_time <= study.study_time && study.study_time <= r.check_out_time;
}

// Reports satisfying all three predicates, by ascending report_time then
// report_id.
template <typename ReportRange>
std::vector<ReportRecord> match_candidates(const StudyRecord& study, const ReportRange& reports,
                                           int window_hours = 24) {
  std::vector<ReportRecord> out;
  const std::chrono::hours window{window_hours};
  for (const auto& r : reports) {
    const ReportRecord& rec = [&]() -> const ReportRecord& {
      if constexpr (std::is_pointer_v<std::decay_t<decltype(r)>>) return *r;
      else return r;
    }();
    if (is_candidate(study, rec, window)) out.push_back(rec);
  }
  std::sort(out.begin(), out.end(), report_before);
  return out;
}

inline MatchOutcome resolve(const StudyRecord& study, const std::vector<ReportRecord>& candidates,
                            const TextNormalizer& normalizer = normalize_text) {
  MatchOutcome out;
  out.study_uid = study.study_uid;
  if (candidates.empty()) return out;
  if (candidates.size() == 1) {
    out.status = MatchStatus::Matched;
    out.report_id = candidates.front().report_id;
    return out;
  }
  const auto first = normalizer(candidates.front().description);
  bool identical = std::all_of(candidates.begin() + 1, candidates.end(),
                               [&](const ReportRecord& r) { return normalizer(r.description) == first; });
  if (identical) {
    out.status = MatchStatus::Matched;
    out.report_id = candidates.front().report_id;
  } else {
    out.status = MatchStatus::Conflict;
    for (const auto& r : candidates) out.candidate_ids.push_back(r.report_id);
  }
  return out;
}

// Batch driver: indexes reports by patient, then matches and resolves each
// study. Output order is input study order for any thread count.
inline MatchTable match_all(const std::vector<StudyRecord>& studies, const std::vector<ReportRecord>& reports,
                            int window_hours = 24, unsigned threads = 1) {
  std::unordered_set<std::string> uids;
  for (const auto& s : studies)
    if (!uids.insert(s.study_uid).second) throw DuplicateKey(s.study_uid);
  std::unordered_map<std::string, std::vector<const ReportRecord*>> by_patient;
  std::unordered_set<std::string> report_ids;
  for (const auto& r : reports) {
    if (!report_ids.insert(r.report_id).second) throw DuplicateKey(r.report_id);
    by_patient[r.patient_id].push_back(&r);
  }

  MatchTable table;
  table.outcomes.resize(studies.size());
  const std::vector<const ReportRecord*> none;
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto it = by_patient.find(studies[i].patient_id);
      const auto& pool = it == by_patient.end() ? none : it->second;
      table.outcomes[i] = resolve(studies[i], match_candidates(studies[i], pool, window_hours));
    }
  };
  threads = std::max(1u, threads);
  if (threads == 1 || studies.size() < 2 * threads) {
    run(0, studies.size());
  } else {
    std::vector<std::thread> pool;
    std::size_t chunk = (studies.size() + threads - 1) / threads;
    for (std::size_t b = 0; b < studies.size(); b += chunk)
      pool.emplace_back(run, b, std::min(studies.size(), b + chunk));
    for (auto& t : pool) t.join();
  }

  for (const auto& o : table.outcomes)
    if (o.status == MatchStatus::Matched) ++table.report_usage[o.report_id];
  return table;
}

// ---------------------------------------------------------------------------
// matches.jsonl / conflicts.jsonl records

// A match stage output line. Matched lines carry what the labeler needs;
// conflict lines carry every candidate for the reviewer.
inline nlohmann::json match_record_json(const MatchOutcome& o, const StudyRecord& study,
                                        const std::unordered_map<std::string, const ReportRecord*>& reports) {
  nlohmann::json j = {{"study_uid", o.study_uid},
                      {"status", status_name(o.status)},
                      {"patient_id", study.patient_id},
                      {"study_time", format_instant(study.study_time)},
                      {"image_ref", study.image_ref}};
  if (o.status == MatchStatus::Matched) {
    const auto* r = reports.at(o.report_id);
    j["report_id"] = r->report_id;
    j["report_time"] = format_instant(r->report_time);
    j["description"] = r->description;
  } else if (o.status == MatchStatus::Conflict) {
    auto cands = nlohmann::json::array();
    for (const auto& id : o.candidate_ids) {
      const auto* r = reports.at(id);
      cands.push_back({{"report_id", r->report_id},
                       {"report_time", format_instant(r->report_time)},
                       {"description", r->description}});
    }
    j["candidates"] = std::move(cands);
  }
  return j;
}

}  // namespace cxr
