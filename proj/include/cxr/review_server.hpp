// SPDX-License-Identifier: Apache-2.0
#pragma once

// HTTP JSON API over a QueueStore.
//
//   GET  /api/queue?status=pending|resolved&kind=&page=&page_size=
//   GET  /api/items/{id}
//   POST /api/items/{id}/labels   {"chest_wall":0|1,...,"abnormal":0|1,"annotator":"..."}
//   POST /api/items/{id}/match    {"report_id":"...","annotator":"..."}
//   GET  /api/stats
//
// Errors are {"error": <code>, "message": <text>} with 400 (bad request),
// 404 (not_found), 409 (already_resolved) or 422 (invariant_violation).

#include <algorithm>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cxr/review_store.hpp"
#include "cxr/text.hpp"

namespace cxr {

inline constexpr std::size_t kSnippetChars = 120;

// Normalized description cut to kSnippetChars code points plus an ellipsis.
inline std::string item_snippet(const ReviewItem& item) {
  std::string text;
  if (item.kind == ItemKind::MatchConflict) {
    auto cands = item.payload.value("candidates", nlohmann::json::array());
    if (!cands.empty()) text = cands.front().value("description", "");
  } else {
    text = item.payload.value("description", "");
  }
  text = normalize_text(text);
  std::size_t count = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if ((static_cast<unsigned char>(text[i]) & 0xC0) == 0x80) continue;
    if (count++ == kSnippetChars) return text.substr(0, i) + "…";
  }
  return text;
}

class ReviewServer {
 public:
  explicit ReviewServer(QueueStore& store, std::string static_dir = {}) : store_(store) {
    if (!static_dir.empty()) server_.set_mount_point("/", static_dir);
    // No SO_REUSEPORT: a second server on a busy port must fail to bind.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
    });
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server_.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
    server_.Get("/api/stats", [this](const httplib::Request&, httplib::Response& res) {
      auto s = store_.stats();
      reply(res, 200, {{"pending", s.pending}, {"resolved", s.resolved}});
    });
    server_.Get("/api/queue", [this](const httplib::Request& req, httplib::Response& res) { list(req, res); });
    server_.Get(R"(/api/items/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto item = store_.get(req.matches[1]);
      if (!item) return error(res, 404, "not_found", "no such item");
      reply(res, 200, to_json(*item));
    });
    server_.Post(R"(/api/items/([^/]+)/labels)", [this](const httplib::Request& req, httplib::Response& res) {
      post_labels(req, res);
    });
    server_.Post(R"(/api/items/([^/]+)/match)", [this](const httplib::Request& req, httplib::Response& res) {
      post_match(req, res);
    });
  }

  // Binds to host:port (port 0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port) {
    int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw BindFailed("cannot bind " + host + ":" + std::to_string(port));
    return bound;
  }

  // Blocks serving requests until stop().
  void run() { server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json; charset=utf-8");
  }

  static void error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    reply(res, status, {{"error", code}, {"message", message}});
  }

  static bool parse_positive(const std::string& s, std::size_t& out) {
    if (s.empty() || s.size() > 9 || !std::all_of(s.begin(), s.end(), ::isdigit)) return false;
    out = std::stoul(s);
    return out > 0;
  }

  void list(const httplib::Request& req, httplib::Response& res) {
    ItemStatus status = ItemStatus::Pending;
    if (req.has_param("status")) {
      auto s = req.get_param_value("status");
      if (s == "pending") status = ItemStatus::Pending;
      else if (s == "resolved") status = ItemStatus::Resolved;
      else return error(res, 400, "bad_request", "status must be pending or resolved");
    }
    std::optional<ItemKind> kind;
    if (req.has_param("kind")) {
      kind = parse_kind(req.get_param_value("kind"));
      if (!kind) return error(res, 400, "bad_request", "unknown kind");
    }
    std::size_t page = 1, page_size = 50;
    if (req.has_param("page") && !parse_positive(req.get_param_value("page"), page))
      return error(res, 400, "bad_request", "page must be a positive integer");
    if (req.has_param("page_size") &&
        (!parse_positive(req.get_param_value("page_size"), page_size) || page_size > 500))
      return error(res, 400, "bad_request", "page_size must be in 1..500");

    auto items = store_.list(status, kind);
    // Newest first; ties by id for a stable order.
    std::stable_sort(items.begin(), items.end(), [](const ReviewItem& a, const ReviewItem& b) {
      if (a.created_at != b.created_at) return a.created_at > b.created_at;
      return a.item_id < b.item_id;
    });
    auto rows = nlohmann::json::array();
    for (std::size_t i = (page - 1) * page_size; i < items.size() && i < page * page_size; ++i) {
      const auto& it = items[i];
      rows.push_back({{"item_id", it.item_id},
                      {"kind", kind_name(it.kind)},
                      {"status", item_status_name(it.status)},
                      {"created_at", format_instant(it.created_at)},
                      {"study_uid", it.payload.value("study_uid", "")},
                      {"snippet", item_snippet(it)}});
    }
    reply(res, 200, {{"items", rows}, {"page", page}, {"page_size", page_size}, {"total", items.size()}});
  }

  template <typename Fn>
  void guarded(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const NotFound& e) {
      error(res, 404, "not_found", e.what());
    } catch (const AlreadyResolved& e) {
      error(res, 409, "already_resolved", e.what());
    } catch (const InvariantViolation& e) {
      error(res, 422, "invariant_violation", e.what());
    } catch (const StoreWriteFailed& e) {
      error(res, 500, "store_write_failed", e.what());
    }
  }

  void post_labels(const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) return error(res, 400, "bad_request", "body must be a JSON object");
    auto labels = labels_from_json(body);
    if (!labels) return error(res, 400, "bad_request", "all five labels must be present as 0 or 1");
    if (!body.contains("annotator") || !body["annotator"].is_string())
      return error(res, 400, "bad_request", "annotator is required");
    guarded(res, [&] {
      auto item = store_.submit_labels(req.matches[1], *labels, body["annotator"].get<std::string>());
      reply(res, 200, to_json(item));
    });
  }

  void post_match(const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("report_id") || !body["report_id"].is_string())
      return error(res, 400, "bad_request", "body must be {\"report_id\": \"...\"}");
    std::string annotator = body.contains("annotator") && body["annotator"].is_string() ? body["annotator"].get<std::string>() : "";
    guarded(res, [&] {
      auto item = store_.submit_match(req.matches[1], body["report_id"].get<std::string>(), annotator);
      reply(res, 200, to_json(item));
    });
  }

  QueueStore& store_;
  httplib::Server server_;
};

}  // namespace cxr
