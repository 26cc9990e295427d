// SPDX-License-Identifier: Apache-2.0
#pragma once

// HTTP client for the external PA-view scorer:
//   POST {endpoint}/score  {"image_ref": "..."}  ->  {"pa_probability": 0.93}

#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cxr/pacs_ingest.hpp"

namespace cxr {

inline ViewScorer make_http_scorer(const ViewScorerClient& client) {
  if (client.timeout.count() <= 0) throw ConfigError("scorer.timeout", "must be positive");
  // Split "http://host:port/prefix" into origin and path prefix.
  std::string origin = client.endpoint;
  std::string prefix;
  if (auto scheme = origin.find("://"); scheme != std::string::npos) {
    if (auto slash = origin.find('/', scheme + 3); slash != std::string::npos) {
      prefix = origin.substr(slash);
      origin.erase(slash);
    }
  }
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  std::string path = prefix + "/score";

  return [origin, path, timeout = client.timeout](const std::string& image_ref) -> double {
    httplib::Client cli(origin);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
    cli.set_connection_timeout(secs.count(), usecs.count());
    cli.set_read_timeout(secs.count(), usecs.count());
    nlohmann::json body = {{"image_ref", image_ref}};
    auto res = cli.Post(path, body.dump(), "application/json");
    if (!res) throw ScorerUnavailable("scorer unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) throw ScorerBadResponse("scorer returned HTTP " + std::to_string(res->status));
    auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("pa_probability") || !j["pa_probability"].is_number())
      throw ScorerBadResponse("scorer response lacks pa_probability");
    return j["pa_probability"].get<double>();
  };
}

}  // namespace cxr
