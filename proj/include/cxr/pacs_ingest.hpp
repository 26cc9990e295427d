// SPDX-License-Identifier: Apache-2.0
#pragma once

// PACS study manifest ingestion and PA-view filtering.
//
// The manifest is JSONL, one study per line:
//   {"study_uid": "...", "patient_id": "...", "study_time": "2021-03-01T08:15:00+07:00",
//    "pa_probability": 0.97 | null, "image_ref": "..."}

#include <algorithm>
#include <atomic>
#include <chrono>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "cxr/errors.hpp"
#include "cxr/io.hpp"
#include "cxr/time.hpp"

namespace cxr {

struct StudyRecord {
  std::string study_uid;
  std::string patient_id;
  Instant study_time;
  std::optional<double> pa_probability;
  std::string image_ref;

  friend bool operator==(const StudyRecord&, const StudyRecord&) = default;
};

inline nlohmann::json to_json(const StudyRecord& s) {
  nlohmann::json j = {{"study_uid", s.study_uid},
                      {"patient_id", s.patient_id},
                      {"study_time", format_instant(s.study_time)},
                      {"pa_probability", nullptr},
                      {"image_ref", s.image_ref}};
  if (s.pa_probability) j["pa_probability"] = *s.pa_probability;
  return j;
}

inline StudyRecord study_from_json(const nlohmann::json& j, std::size_t line) {
  auto str = [&](const char* key) {
    if (!j.is_object() || !j.contains(key) || !j[key].is_string())
      throw MalformedLine(std::string("missing or non-string field '") + key + "'", line);
    return j[key].get<std::string>();
  };
  StudyRecord s;
  s.study_uid = str("study_uid");
  s.patient_id = str("patient_id");
  if (s.study_uid.empty() || s.patient_id.empty()) throw MalformedLine("empty identifier", line);
  auto t = parse_instant(str("study_time"));
  if (!t) throw MalformedLine("unparseable study_time", line);
  s.study_time = *t;
  s.image_ref = j.contains("image_ref") && j["image_ref"].is_string() ? j["image_ref"].get<std::string>() : "";
  if (j.contains("pa_probability") && !j["pa_probability"].is_null()) {
    if (!j["pa_probability"].is_number()) throw MalformedLine("pa_probability must be a number", line);
    double p = j["pa_probability"].get<double>();
    if (!(p >= 0.0 && p <= 1.0)) throw MalformedLine("pa_probability outside [0,1]", line);
    s.pa_probability = p;
  }
  return s;
}

inline std::vector<StudyRecord> parse_study_manifest(std::istream& in) {
  std::vector<StudyRecord> out;
  std::unordered_set<std::string> seen;
  io::for_each_jsonl(in, [&](const nlohmann::json& j, std::size_t line) {
    auto s = study_from_json(j, line);
    if (!seen.insert(s.study_uid).second) throw DuplicateStudyUid("duplicate study_uid " + s.study_uid, line);
    out.push_back(std::move(s));
  });
  return out;
}

inline void write_study_manifest(std::ostream& out, const std::vector<StudyRecord>& studies) {
  for (const auto& s : studies) out << to_json(s).dump() << '\n';
}

// ---------------------------------------------------------------------------
// View scoring

struct ViewScorerClient {
  std::string endpoint;
  std::chrono::milliseconds timeout{10000};
  unsigned max_concurrency = 4;
};

// Thrown by a scorer when the service cannot be reached at all.
class ScorerUnavailable : public Error {
 public:
  using Error::Error;
};

// Thrown by a scorer when the service answered with something unusable.
class ScorerBadResponse : public Error {
 public:
  using Error::Error;
};

// Returns the PA probability for one image reference.
using ViewScorer = std::function<double(const std::string& image_ref)>;

struct ScoreFailure {
  std::string study_uid;
  bool unavailable = false;  // otherwise a bad response
  std::string message;
};

struct ScoreResult {
  std::vector<StudyRecord> studies;
  std::vector<ScoreFailure> failures;  // in input order
};

// Fills pa_probability for unscored studies. Already scored studies pass
// through untouched and cost no call. Results are placed by input index so
// the output never depends on completion order.
inline ScoreResult score_views(const std::vector<StudyRecord>& studies, const ViewScorer& scorer,
                               unsigned concurrency = 4) {
  ScoreResult result{studies, {}};
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < studies.size(); ++i)
    if (!studies[i].pa_probability) todo.push_back(i);
  if (todo.empty()) return result;

  std::vector<std::optional<ScoreFailure>> failure_slots(studies.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < todo.size(); k = next++) {
      auto i = todo[k];
      auto& s = result.studies[i];
      try {
        if (s.image_ref.empty()) throw ScorerBadResponse("study has no image_ref");
        double p = scorer(s.image_ref);
        if (!(p >= 0.0 && p <= 1.0)) throw ScorerBadResponse("probability outside [0,1]");
        s.pa_probability = p;
      } catch (const ScorerUnavailable& e) {
        failure_slots[i] = ScoreFailure{s.study_uid, true, e.what()};
      } catch (const std::exception& e) {
        failure_slots[i] = ScoreFailure{s.study_uid, false, e.what()};
      }
    }
  };
  unsigned n_threads = std::max(1u, std::min<unsigned>(concurrency, static_cast<unsigned>(todo.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (auto& f : failure_slots)
    if (f) result.failures.push_back(std::move(*f));
  return result;
}

struct PaPartition {
  std::vector<StudyRecord> kept;
  std::vector<StudyRecord> ignored;
};

// Keeps studies whose PA probability strictly exceeds `threshold`.
inline PaPartition filter_pa(const std::vector<StudyRecord>& studies, double threshold = 0.5) {
  PaPartition out;
  for (const auto& s : studies) {
    if (!s.pa_probability) throw UnscoredStudy(s.study_uid);
    (*s.pa_probability > threshold ? out.kept : out.ignored).push_back(s);
  }
  return out;
}

}  // namespace cxr
