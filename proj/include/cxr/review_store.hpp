// SPDX-License-Identifier: Apache-2.0
#pragma once

// Manual-review queue persisted as an append-only JSONL log.
//
// Each line is one event:
//   {"op":"enqueue","item_id":..,"kind":..,"payload":{..},"created_at":..}
//   {"op":"resolve","item_id":..,"resolution":{..},"annotator":..,"resolved_at":..}
//
// The in-memory view is the fold of the log. A mutation is acknowledged
// only after its line has been written and fsync'ed. On open, a final line
// without its terminating newline is a torn write from a crash: it was
// never acknowledged and is cut off. Any other unreadable line is
// CorruptLog.

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "cxr/errors.hpp"
#include "cxr/labeler.hpp"
#include "cxr/labels.hpp"
#include "cxr/rng.hpp"
#include "cxr/time.hpp"

namespace cxr {

enum class ItemKind { ResidualDescription, MatchConflict, QcAudit };
enum class ItemStatus { Pending, Resolved };

inline constexpr std::string_view kind_name(ItemKind k) {
  switch (k) {
    case ItemKind::ResidualDescription: return "residual_description";
    case ItemKind::MatchConflict: return "match_conflict";
    case ItemKind::QcAudit: return "qc_audit";
  }
  return "?";
}

inline std::optional<ItemKind> parse_kind(std::string_view s) {
  for (auto k : {ItemKind::ResidualDescription, ItemKind::MatchConflict, ItemKind::QcAudit})
    if (kind_name(k) == s) return k;
  return std::nullopt;
}

inline constexpr std::string_view item_status_name(ItemStatus s) {
  return s == ItemStatus::Pending ? "pending" : "resolved";
}

struct ReviewItem {
  std::string item_id;
  ItemKind kind = ItemKind::ResidualDescription;
  nlohmann::json payload;
  Instant created_at{};
  ItemStatus status = ItemStatus::Pending;
  nlohmann::json resolution;  // null while pending
  std::string annotator;
  std::optional<Instant> resolved_at;
};

inline nlohmann::json labels_json(const LabelVector& v) {
  nlohmann::json j;
  for (auto c : kAllClasses) j[std::string(class_name(c))] = v[c];
  return j;
}

// Reads {"chest_wall":0|1,...}; nullopt when a field is missing or not 0/1.
inline std::optional<LabelVector> labels_from_json(const nlohmann::json& j, LabelSource source = LabelSource::Manual) {
  if (!j.is_object()) return std::nullopt;
  LabelVector v;
  v.source = source;
  for (auto c : kAllClasses) {
    auto key = std::string(class_name(c));
    if (!j.contains(key) || !j[key].is_number_integer()) return std::nullopt;
    auto b = j[key].get<int>();
    if (b != 0 && b != 1) return std::nullopt;
    v[c] = static_cast<std::uint8_t>(b);
  }
  return v;
}

inline nlohmann::json to_json(const ReviewItem& item) {
  nlohmann::json j = {{"item_id", item.item_id},
                      {"kind", kind_name(item.kind)},
                      {"payload", item.payload},
                      {"created_at", format_instant(item.created_at)},
                      {"status", item_status_name(item.status)},
                      {"resolution", item.resolution}};
  if (item.status == ItemStatus::Resolved) {
    j["annotator"] = item.annotator;
    if (item.resolved_at) j["resolved_at"] = format_instant(*item.resolved_at);
  }
  return j;
}

// First 16 bytes of SHA-256 over kind and canonical payload, hex encoded.
inline std::string content_item_id(ItemKind kind, const nlohmann::json& payload) {
  std::string material = std::string(kind_name(kind)) + "\n" + payload.dump();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(material.data(), material.size(), digest, &len, EVP_sha256(), nullptr);
  static constexpr char hex[] = "0123456789abcdef";
  std::string id;
  for (unsigned i = 0; i < 16 && i < len; ++i) {
    id += hex[digest[i] >> 4];
    id += hex[digest[i] & 0xf];
  }
  return id;
}

inline ReviewItem make_item(ItemKind kind, nlohmann::json payload, Instant created_at = now_instant()) {
  ReviewItem item;
  item.kind = kind;
  item.payload = std::move(payload);
  item.item_id = content_item_id(item.kind, item.payload);
  item.created_at = created_at;
  return item;
}

// ---------------------------------------------------------------------------
// Log fold

struct LogFold {
  std::map<std::string, ReviewItem> items;
  std::vector<std::string> order;   // enqueue order
  std::uint64_t valid_bytes = 0;    // length of the readable prefix
  bool torn_tail = false;
};

namespace detail {

inline void apply_event(LogFold& fold, const nlohmann::json& ev, std::size_t line) {
  auto str = [&](const char* key) -> std::string {
    if (!ev.contains(key) || !ev[key].is_string()) throw CorruptLog(std::string("missing field ") + key, line);
    return ev[key].get<std::string>();
  };
  auto instant = [&](const char* key) {
    auto t = parse_instant(str(key));
    if (!t) throw CorruptLog(std::string("bad timestamp in ") + key, line);
    return *t;
  };
  if (!ev.is_object()) throw CorruptLog("event is not an object", line);
  auto op = str("op");
  auto id = str("item_id");
  if (op == "enqueue") {
    auto kind = parse_kind(str("kind"));
    if (!kind) throw CorruptLog("unknown item kind", line);
    if (fold.items.count(id)) throw CorruptLog("item enqueued twice: " + id, line);
    ReviewItem item;
    item.item_id = id;
    item.kind = *kind;
    item.payload = ev.value("payload", nlohmann::json::object());
    item.created_at = instant("created_at");
    fold.items.emplace(id, std::move(item));
    fold.order.push_back(id);
  } else if (op == "resolve") {
    auto it = fold.items.find(id);
    if (it == fold.items.end()) throw CorruptLog("resolve for unknown item " + id, line);
    if (it->second.status == ItemStatus::Resolved) throw CorruptLog("item resolved twice: " + id, line);
    it->second.status = ItemStatus::Resolved;
    it->second.resolution = ev.value("resolution", nlohmann::json());
    it->second.annotator = str("annotator");
    it->second.resolved_at = instant("resolved_at");
  } else {
    throw CorruptLog("unknown op '" + op + "'", line);
  }
}

}  // namespace detail

// Replays a log image. Tolerates exactly one torn final line.
inline LogFold fold_log(std::string_view bytes) {
  LogFold fold;
  std::size_t pos = 0, line = 0;
  while (pos < bytes.size()) {
    ++line;
    auto nl = bytes.find('\n', pos);
    bool terminated = nl != std::string_view::npos;
    auto text = bytes.substr(pos, terminated ? nl - pos : std::string_view::npos);
    if (!terminated) {
      // Torn tail: never acknowledged, so dropping it loses nothing.
      fold.torn_tail = true;
      break;
    }
    if (!trim(text).empty()) {
      nlohmann::json ev;
      try {
        ev = nlohmann::json::parse(text);
      } catch (const nlohmann::json::exception& e) {
        throw CorruptLog(e.what(), line);
      }
      detail::apply_event(fold, ev, line);
    }
    pos = nl + 1;
    fold.valid_bytes = pos;
  }
  return fold;
}

// ---------------------------------------------------------------------------

struct QueueStats {
  std::size_t pending = 0;
  std::size_t resolved = 0;
};

class QueueStore {
 public:
  using Clock = std::function<Instant()>;

  explicit QueueStore(std::filesystem::path log_path, Clock clock = now_instant)
      : log_path_(std::move(log_path)), clock_(std::move(clock)) {
    if (log_path_.has_parent_path()) std::filesystem::create_directories(log_path_.parent_path());
    fd_ = ::open(log_path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw StoreWriteFailed("cannot open review log " + log_path_.string() + ": " + std::strerror(errno));
    std::string bytes;
    {
      std::ifstream in(log_path_, std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      bytes = ss.str();
    }
    try {
      fold_ = fold_log(bytes);
    } catch (...) {
      ::close(fd_);
      throw;
    }
    if (fold_.torn_tail) {
      if (::ftruncate(fd_, static_cast<off_t>(fold_.valid_bytes)) != 0 || ::fsync(fd_) != 0) {
        ::close(fd_);
        throw StoreWriteFailed("cannot truncate torn tail of " + log_path_.string());
      }
    }
    ::lseek(fd_, 0, SEEK_END);
  }

  ~QueueStore() {
    if (fd_ >= 0) ::close(fd_);
  }
  QueueStore(const QueueStore&) = delete;
  QueueStore& operator=(const QueueStore&) = delete;

  const std::filesystem::path& log_path() const { return log_path_; }

  // Appends a Pending item. The id is the content hash of (kind, payload),
  // so enqueueing the same content twice is a no-op returning the same id.
  std::string enqueue(ReviewItem item) {
    if (item.status != ItemStatus::Pending) throw InvariantViolation("only pending items can be enqueued");
    item.item_id = content_item_id(item.kind, item.payload);
    std::unique_lock lock(mutex_);
    if (fold_.items.count(item.item_id)) return item.item_id;
    nlohmann::json ev = {{"op", "enqueue"},
                         {"item_id", item.item_id},
                         {"kind", kind_name(item.kind)},
                         {"payload", item.payload},
                         {"created_at", format_instant(item.created_at)}};
    append(ev);
    fold_.order.push_back(item.item_id);
    auto id = item.item_id;
    fold_.items.emplace(id, std::move(item));
    return id;
  }

  // Records a manual label decision for a residual or QC item.
  ReviewItem submit_labels(const std::string& item_id, LabelVector labels, const std::string& annotator) {
    labels.source = LabelSource::Manual;
    labels.evidence.clear();
    if (!labels.valid())
      throw InvariantViolation("abnormal must be 1 when any location class is 1, and labels must be 0/1");
    if (trim(annotator).empty()) throw InvariantViolation("annotator is required");
    std::unique_lock lock(mutex_);
    auto& item = pending_item(item_id);
    if (item.kind == ItemKind::MatchConflict) throw InvariantViolation("match conflicts are resolved by choosing a report");
    nlohmann::json resolution = {{"labels", labels_json(labels)}, {"source", "manual"}};
    if (item.kind == ItemKind::QcAudit) {
      auto original = labels_from_json(item.payload.value("labels", nlohmann::json()));
      resolution["verdict"] = original && original->bits == labels.bits ? "confirmed" : "corrected";
    }
    return resolve(item, std::move(resolution), annotator);
  }

  // Records the reviewer's choice among a conflict's candidate reports.
  ReviewItem submit_match(const std::string& item_id, const std::string& report_id, const std::string& annotator) {
    std::unique_lock lock(mutex_);
    auto& item = pending_item(item_id);
    if (item.kind != ItemKind::MatchConflict) throw InvariantViolation("item is not a match conflict");
    bool known = false;
    for (const auto& c : item.payload.value("candidates", nlohmann::json::array()))
      if (c.value("report_id", "") == report_id) known = true;
    if (!known) throw InvariantViolation("report " + report_id + " is not a candidate of this item");
    return resolve(item, {{"report_id", report_id}}, annotator.empty() ? "unknown" : annotator);
  }

  std::optional<ReviewItem> get(const std::string& item_id) const {
    std::shared_lock lock(mutex_);
    auto it = fold_.items.find(item_id);
    if (it == fold_.items.end()) return std::nullopt;
    return it->second;
  }

  // Items in enqueue order, optionally filtered.
  std::vector<ReviewItem> list(std::optional<ItemStatus> status = std::nullopt,
                               std::optional<ItemKind> kind = std::nullopt) const {
    std::shared_lock lock(mutex_);
    std::vector<ReviewItem> out;
    for (const auto& id : fold_.order) {
      const auto& item = fold_.items.at(id);
      if (status && item.status != *status) continue;
      if (kind && item.kind != *kind) continue;
      out.push_back(item);
    }
    return out;
  }

  QueueStats stats() const {
    std::shared_lock lock(mutex_);
    QueueStats s;
    for (const auto& [id, item] : fold_.items) (item.status == ItemStatus::Pending ? s.pending : s.resolved)++;
    return s;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return fold_.items.size();
  }

 private:
  ReviewItem& pending_item(const std::string& item_id) {
    auto it = fold_.items.find(item_id);
    if (it == fold_.items.end()) throw NotFound(item_id);
    if (it->second.status == ItemStatus::Resolved) throw AlreadyResolved(item_id);
    return it->second;
  }

  ReviewItem resolve(ReviewItem& item, nlohmann::json resolution, const std::string& annotator) {
    auto at = clock_();
    nlohmann::json ev = {{"op", "resolve"},
                         {"item_id", item.item_id},
                         {"resolution", resolution},
                         {"annotator", annotator},
                         {"resolved_at", format_instant(at)}};
    append(ev);
    item.status = ItemStatus::Resolved;
    item.resolution = std::move(resolution);
    item.annotator = annotator;
    item.resolved_at = at;
    return item;
  }

  // Caller holds the write lock.
  void append(const nlohmann::json& ev) {
    std::string line = ev.dump() + "\n";
    const char* p = line.data();
    std::size_t left = line.size();
    const off_t start = ::lseek(fd_, 0, SEEK_END);
    while (left > 0) {
      auto n = ::write(fd_, p, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        std::string why = std::strerror(errno);
        // Drop the partial record so the next append starts on a clean line.
        if (start >= 0 && ::ftruncate(fd_, start) == 0) ::lseek(fd_, start, SEEK_SET);
        throw StoreWriteFailed("append to review log failed: " + why);
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) throw StoreWriteFailed("fsync of review log failed: " + std::string(std::strerror(errno)));
  }

  std::filesystem::path log_path_;
  Clock clock_;
  int fd_ = -1;
  mutable std::shared_mutex mutex_;
  LogFold fold_;
};

// ---------------------------------------------------------------------------
// Payload builders

inline ReviewItem residual_item(const std::string& study_uid, const std::string& report_id,
                                const std::string& description, const std::string& image_ref,
                                Instant created_at = now_instant()) {
  return make_item(ItemKind::ResidualDescription,
                   {{"study_uid", study_uid},
                    {"report_id", report_id},
                    {"description", description},
                    {"image_ref", image_ref},
                    {"reason", reason_name(ReviewReason::NoTemplateNoKeyword)}},
                   created_at);
}

// `candidates` is the conflict record's candidate array
// ([{report_id, report_time, description}, ...]).
inline ReviewItem conflict_item(const std::string& study_uid, const std::string& image_ref,
                                const nlohmann::json& candidates, Instant created_at = now_instant()) {
  return make_item(ItemKind::MatchConflict,
                   {{"study_uid", study_uid},
                    {"image_ref", image_ref},
                    {"candidates", candidates},
                    {"reason", reason_name(ReviewReason::MatchConflict)}},
                   created_at);
}

struct QcCandidate {
  std::string study_uid;
  LabelVector labels;
  std::string description;
};

// Draws ceil(rate * n) items uniformly without replacement. Candidates are
// put in uid order first, so membership depends only on the set and seed.
inline std::vector<ReviewItem> qc_sample(std::vector<QcCandidate> labeled, double rate = 0.05, std::uint64_t seed = 0,
                                         int round = 1, Instant created_at = now_instant()) {
  if (labeled.empty()) throw EmptyInput("no labeled studies to sample");
  if (!(rate > 0.0 && rate <= 1.0)) throw DataError("QC rate must lie in (0, 1]");
  std::sort(labeled.begin(), labeled.end(),
            [](const QcCandidate& a, const QcCandidate& b) { return a.study_uid < b.study_uid; });
  const std::size_t n = labeled.size();
  // Guard against 0.05 * 100 landing a hair above 5.
  auto k = static_cast<std::size_t>(std::ceil(rate * static_cast<double>(n) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, n);

  Xoshiro256ss rng(seed);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    auto j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());

  std::vector<ReviewItem> out;
  for (auto i : idx) {
    const auto& c = labeled[i];
    out.push_back(make_item(ItemKind::QcAudit,
                            {{"study_uid", c.study_uid},
                             {"description", c.description},
                             {"labels", labels_json(c.labels)},
                             {"source", source_name(c.labels.source)},
                             {"round", round}},
                            created_at));
  }
  return out;
}

// Manual labels recorded in the store, keyed by study: every resolved
// residual item, plus QC items whose verdict was "corrected".
inline std::vector<LabelRow> manual_label_overlay(const QueueStore& store) {
  std::map<std::string, LabelRow> rows;
  for (const auto& item : store.list(ItemStatus::Resolved)) {
    if (item.kind == ItemKind::MatchConflict) continue;
    if (item.kind == ItemKind::QcAudit && item.resolution.value("verdict", "") != "corrected") continue;
    auto labels = labels_from_json(item.resolution.value("labels", nlohmann::json()));
    if (!labels) continue;
    auto uid = item.payload.value("study_uid", "");
    rows[uid] = LabelRow{uid, *labels};
  }
  std::vector<LabelRow> out;
  for (auto& [uid, row] : rows) out.push_back(std::move(row));
  return out;
}

}  // namespace cxr
