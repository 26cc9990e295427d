// SPDX-License-Identifier: Apache-2.0
#pragma once

// Rule-based report labeler. A description goes through fixed stages:
//
//   1. pattern filtering   - a normality template occurs in the text: all zero;
//   2. keyword detection   - class-scoped keyword sets set the four location flags;
//   3. abnormal interpolation - abnormal = OR(locations, other-abnormality keywords);
//   4. manual review       - nothing matched: the description goes to a human.
//
// All matching is substring containment on normalize_text() output.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "cxr/errors.hpp"
#include "cxr/labels.hpp"
#include "cxr/text.hpp"

namespace cxr {

// Expands "{a|b}" alternation groups into their cartesian product; every
// variant is normalized. Groups may not nest or hold empty alternatives.
inline std::vector<std::string> expand_keyword_pattern(std::string_view pattern) {
  std::vector<std::string> variants{""};
  std::size_t i = 0;
  while (i < pattern.size()) {
    char c = pattern[i];
    if (c == '}') throw BadPattern("unbalanced '}'", std::string(pattern));
    if (c == '|') throw BadPattern("'|' outside a group", std::string(pattern));
    if (c != '{') {
      for (auto& v : variants) v += c;
      ++i;
      continue;
    }
    auto close = pattern.find('}', i + 1);
    if (close == std::string_view::npos) throw BadPattern("unbalanced '{'", std::string(pattern));
    auto body = pattern.substr(i + 1, close - i - 1);
    if (body.find('{') != std::string_view::npos) throw BadPattern("nested group", std::string(pattern));
    std::vector<std::string> alternatives;
    std::size_t start = 0;
    while (true) {
      auto bar = body.find('|', start);
      auto alt = body.substr(start, bar == std::string_view::npos ? std::string_view::npos : bar - start);
      if (trim(alt).empty()) throw BadPattern("empty alternative", std::string(pattern));
      alternatives.emplace_back(alt);
      if (bar == std::string_view::npos) break;
      start = bar + 1;
    }
    std::vector<std::string> next;
    next.reserve(variants.size() * alternatives.size());
    for (const auto& v : variants)
      for (const auto& a : alternatives) next.push_back(v + a);
    variants = std::move(next);
    i = close + 1;
  }
  for (auto& v : variants) v = normalize_text(v);
  return variants;
}

// Labeler configuration after expansion and normalization. Build it with
// KeywordConfig::build() or load_keyword_config(); both validate.
struct KeywordConfig {
  std::vector<std::string> normality_templates;
  std::array<std::vector<std::string>, kNumLocations> keywords;
  std::vector<std::string> other_abnormal;
  std::string version;

  struct Source {
    std::vector<std::string> normality_templates;
    std::map<LabelClass, std::vector<std::string>> keywords;  // location classes only
    std::vector<std::string> other_abnormal;
    std::string version;
  };

  static KeywordConfig build(const Source& src) {
    KeywordConfig cfg;
    cfg.version = src.version;
    for (std::size_t i = 0; i < src.normality_templates.size(); ++i) {
      auto t = normalize_text(src.normality_templates[i]);
      if (t.empty()) throw ConfigError("normality_templates[" + std::to_string(i) + "]", "empty after normalization");
      cfg.normality_templates.push_back(std::move(t));
    }
    std::map<std::string, LabelClass> owner;
    for (const auto& [cls, patterns] : src.keywords) {
      if (cls == LabelClass::Abnormal) throw ConfigError("keywords.abnormal", "use other_abnormal");
      auto field = "keywords." + std::string(class_name(cls));
      auto& dest = cfg.keywords[static_cast<std::size_t>(cls)];
      for (const auto& p : patterns) {
        for (auto& k : expand_keyword_pattern(p)) {
          if (k.empty()) throw ConfigError(field, "keyword empty after normalization");
          auto [it, inserted] = owner.emplace(k, cls);
          if (!inserted && it->second != cls)
            throw ConfigError(field, "keyword '" + k + "' also listed under " + std::string(class_name(it->second)));
          if (inserted) dest.push_back(std::move(k));
        }
      }
    }
    std::set<std::string> seen_other;
    for (const auto& p : src.other_abnormal)
      for (auto& k : expand_keyword_pattern(p)) {
        if (k.empty()) throw ConfigError("other_abnormal", "keyword empty after normalization");
        if (seen_other.insert(k).second) cfg.other_abnormal.push_back(std::move(k));
      }
    return cfg;
  }
};

namespace detail {

inline std::vector<std::string> yaml_strings(const YAML::Node& node, const std::string& field) {
  std::vector<std::string> out;
  if (!node) return out;
  if (!node.IsSequence()) throw ConfigError(field, "expected a list");
  for (std::size_t i = 0; i < node.size(); ++i) {
    if (!node[i].IsScalar()) throw ConfigError(field + "[" + std::to_string(i) + "]", "expected a string");
    out.push_back(node[i].as<std::string>());
  }
  return out;
}

}  // namespace detail

// Parses the YAML keyword document:
//
//   version: "..."
//   normality_templates: [ ... ]
//   keywords:
//     chest_wall: [ ... ]   # "{trái|phải}" alternation allowed
//     pleura: [ ... ]
//     parenchyma: [ ... ]
//     cardio: [ ... ]
//   other_abnormal: [ ... ]
inline KeywordConfig parse_keyword_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("<document>", e.what());
  }
  if (!root.IsMap()) throw ConfigError("<document>", "expected a mapping");
  KeywordConfig::Source src;
  src.version = root["version"] ? root["version"].as<std::string>() : "";
  src.normality_templates = detail::yaml_strings(root["normality_templates"], "normality_templates");
  if (auto kw = root["keywords"]) {
    if (!kw.IsMap()) throw ConfigError("keywords", "expected a mapping");
    for (auto it = kw.begin(); it != kw.end(); ++it) {
      auto name = it->first.as<std::string>();
      auto cls = parse_class(name);
      if (!cls || *cls == LabelClass::Abnormal) throw ConfigError("keywords." + name, "unknown location class");
      src.keywords[*cls] = detail::yaml_strings(it->second, "keywords." + name);
    }
  }
  src.other_abnormal = detail::yaml_strings(root["other_abnormal"], "other_abnormal");
  return KeywordConfig::build(src);
}

inline KeywordConfig load_keyword_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string(), "cannot open keyword config");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_keyword_config(ss.str());
}

// ---------------------------------------------------------------------------

inline bool is_normal_template(std::string_view description, const KeywordConfig& config) {
  auto text = normalize_text(description);
  for (const auto& t : config.normality_templates)
    if (text.find(t) != std::string::npos) return true;
  return false;
}

struct KeywordHits {
  std::array<std::uint8_t, kNumLocations> flags{};
  std::uint8_t other_flag = 0;
  std::vector<Evidence> evidence;

  bool any() const {
    for (auto f : flags)
      if (f) return true;
    return other_flag != 0;
  }
};

inline KeywordHits detect_keywords(std::string_view description, const KeywordConfig& config) {
  KeywordHits hits;
  auto text = normalize_text(description);
  auto segment_of = [&text](std::size_t pos) {
    return static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '-'));
  };
  for (auto cls : kLocationClasses) {
    for (const auto& k : config.keywords[static_cast<std::size_t>(cls)]) {
      auto pos = text.find(k);
      if (pos == std::string::npos) continue;
      hits.flags[static_cast<std::size_t>(cls)] = 1;
      hits.evidence.push_back({cls, k, segment_of(pos)});
    }
  }
  for (const auto& k : config.other_abnormal) {
    auto pos = text.find(k);
    if (pos == std::string::npos) continue;
    hits.other_flag = 1;
    hits.evidence.push_back({LabelClass::Abnormal, k, segment_of(pos)});
  }
  return hits;
}

inline std::uint8_t interpolate_abnormal(const std::array<std::uint8_t, kNumLocations>& flags,
                                         std::uint8_t other_flag) {
  for (auto f : flags)
    if (f) return 1;
  return other_flag ? 1 : 0;
}

enum class ReviewReason { NoTemplateNoKeyword, MatchConflict };

inline constexpr std::string_view reason_name(ReviewReason r) {
  return r == ReviewReason::NoTemplateNoKeyword ? "no_template_no_keyword" : "match_conflict";
}

// Either labels or a review request, never both.
struct LabelResult {
  std::optional<LabelVector> labels;
  bool needs_review = false;
  ReviewReason review_reason = ReviewReason::NoTemplateNoKeyword;

  static LabelResult review(ReviewReason why) {
    LabelResult r;
    r.needs_review = true;
    r.review_reason = why;
    return r;
  }
};

inline LabelResult label_description(std::string_view description, const KeywordConfig& config) {
  LabelResult result;
  if (is_normal_template(description, config)) {
    LabelVector v;
    v.source = LabelSource::TemplateNormal;
    result.labels = std::move(v);
    return result;
  }
  auto hits = detect_keywords(description, config);
  if (!hits.any()) return LabelResult::review(ReviewReason::NoTemplateNoKeyword);

  LabelVector v;
  v.source = LabelSource::Keyword;
  for (auto cls : kLocationClasses) v[cls] = hits.flags[static_cast<std::size_t>(cls)];
  v[LabelClass::Abnormal] = interpolate_abnormal(hits.flags, hits.other_flag);
  v.evidence = std::move(hits.evidence);
  result.labels = std::move(v);
  return result;
}

}  // namespace cxr
