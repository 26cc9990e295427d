// SPDX-License-Identifier: Apache-2.0
#pragma once

// Multi-label train/validation split by greedy iterative stratification
// (rarest class first). Inputs are put in uid order before anything else,
// so the result depends only on the label set and the seed.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "cxr/errors.hpp"
#include "cxr/labels.hpp"
#include "cxr/rng.hpp"

namespace cxr {

struct ClassDistribution {
  LabelClass cls;
  std::size_t positives = 0;
  double full_rate = 0.0, train_rate = 0.0, val_rate = 0.0;
  double train_deviation = 0.0, val_deviation = 0.0;
  bool degenerate = false;  // 0 or n positives: excluded from tolerance checks

  double max_deviation() const { return std::max(train_deviation, val_deviation); }
};

struct DistributionReport {
  std::vector<ClassDistribution> classes;
  double tolerance = 0.0;
  bool tolerance_met = true;

  double max_deviation() const {
    double m = 0.0;
    for (const auto& c : classes)
      if (!c.degenerate) m = std::max(m, c.max_deviation());
    return m;
  }
};

struct SplitResult {
  std::vector<std::string> train_uids;  // uid order
  std::vector<std::string> val_uids;    // uid order
  DistributionReport ratio_report;
};

// Recounts positive rates for the full set and both sides straight from the
// labels; shares nothing with the splitter's bookkeeping.
inline DistributionReport check_distribution(const std::vector<std::string>& train_uids,
                                             const std::vector<std::string>& val_uids,
                                             const std::vector<std::pair<std::string, LabelVector>>& labels,
                                             double tolerance) {
  std::unordered_map<std::string, const LabelVector*> by_uid;
  for (const auto& [uid, v] : labels) by_uid[uid] = &v;
  auto count = [&](const std::vector<std::string>& uids) {
    std::array<std::size_t, kNumClasses> pos{};
    for (const auto& u : uids) {
      auto it = by_uid.find(u);
      if (it == by_uid.end()) throw UnknownUid(u);
      for (auto c : kAllClasses) pos[static_cast<std::size_t>(c)] += (*it->second)[c];
    }
    return pos;
  };
  auto train = count(train_uids);
  auto val = count(val_uids);
  std::array<std::size_t, kNumClasses> full{};
  for (const auto& [uid, v] : labels)
    for (auto c : kAllClasses) full[static_cast<std::size_t>(c)] += v[c];

  DistributionReport rep;
  rep.tolerance = tolerance;
  const double n = static_cast<double>(labels.size());
  auto rate = [](std::size_t k, std::size_t m) { return m ? static_cast<double>(k) / static_cast<double>(m) : 0.0; };
  for (auto cls : kAllClasses) {
    auto c = static_cast<std::size_t>(cls);
    ClassDistribution d;
    d.cls = cls;
    d.positives = full[c];
    d.full_rate = n > 0 ? static_cast<double>(full[c]) / n : 0.0;
    d.train_rate = rate(train[c], train_uids.size());
    d.val_rate = rate(val[c], val_uids.size());
    d.train_deviation = std::abs(d.train_rate - d.full_rate);
    d.val_deviation = std::abs(d.val_rate - d.full_rate);
    d.degenerate = full[c] == 0 || full[c] == labels.size();
    if (!d.degenerate && d.max_deviation() > tolerance) rep.tolerance_met = false;
    rep.classes.push_back(d);
  }
  return rep;
}

inline DistributionReport check_distribution(const SplitResult& result,
                                             const std::vector<std::pair<std::string, LabelVector>>& labels,
                                             double tolerance) {
  return check_distribution(result.train_uids, result.val_uids, labels, tolerance);
}

// |train| = round-half-up(ratio * n). Each pass takes the class with the
// fewest unassigned positives and places its examples one by one on the
// side with the larger remaining demand for that class; ties go to the
// side with more free capacity, then to a seeded coin. Examples with no
// positive label fill the remaining capacity the same way.
inline SplitResult stratified_split(std::vector<std::pair<std::string, LabelVector>> labels, double ratio = 0.7,
                                    std::uint64_t seed = 13, double tolerance = 0.01) {
  const std::size_t n = labels.size();
  if (n < 10) throw DegenerateInput("split needs at least 10 examples, got " + std::to_string(n));
  if (!(ratio > 0.0 && ratio < 1.0)) throw DegenerateInput("split ratio must lie in (0, 1)");
  std::sort(labels.begin(), labels.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 1; i < n; ++i)
    if (labels[i].first == labels[i - 1].first) throw DuplicateKey(labels[i].first);

  const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
  std::array<double, 2> capacity{static_cast<double>(n_train), static_cast<double>(n - n_train)};
  std::array<std::array<double, kNumClasses>, 2> demand{};
  for (auto cls : kAllClasses) {
    auto c = static_cast<std::size_t>(cls);
    double positives = 0;
    for (const auto& [uid, v] : labels) positives += v[cls];
    demand[0][c] = positives * ratio;
    demand[1][c] = positives * (1.0 - ratio);
  }

  Xoshiro256ss rng(seed);
  std::vector<int> side(n, -1);
  auto place = [&](std::size_t i, int s) {
    side[i] = s;
    capacity[s] -= 1.0;
    for (auto cls : kAllClasses)
      if (labels[i].second[cls]) demand[s][static_cast<std::size_t>(cls)] -= 1.0;
  };
  auto choose = [&](std::optional<std::size_t> cls) {
    if (capacity[0] <= 0.0) return 1;
    if (capacity[1] <= 0.0) return 0;
    if (cls) {
      double d0 = demand[0][*cls], d1 = demand[1][*cls];
      if (d0 != d1) return d0 > d1 ? 0 : 1;
    }
    if (capacity[0] != capacity[1]) return capacity[0] > capacity[1] ? 0 : 1;
    return static_cast<int>(rng.below(2));
  };

  std::array<bool, kNumClasses> done{};
  while (true) {
    std::array<std::size_t, kNumClasses> remaining{};
    for (std::size_t i = 0; i < n; ++i)
      if (side[i] < 0)
        for (auto cls : kAllClasses) remaining[static_cast<std::size_t>(cls)] += labels[i].second[cls];
    std::optional<std::size_t> rarest;
    for (std::size_t c = 0; c < kNumClasses; ++c)
      if (!done[c] && remaining[c] > 0 && (!rarest || remaining[c] < remaining[*rarest])) rarest = c;
    if (!rarest) break;
    done[*rarest] = true;
    for (std::size_t i = 0; i < n; ++i)
      if (side[i] < 0 && labels[i].second.bits[*rarest]) place(i, choose(rarest));
  }
  for (std::size_t i = 0; i < n; ++i)
    if (side[i] < 0) place(i, choose(std::nullopt));

  SplitResult result;
  for (std::size_t i = 0; i < n; ++i) (side[i] == 0 ? result.train_uids : result.val_uids).push_back(labels[i].first);
  result.ratio_report = check_distribution(result, labels, tolerance);
  return result;
}

inline nlohmann::json to_json(const DistributionReport& r) {
  nlohmann::json j;
  j["tolerance"] = r.tolerance;
  j["tolerance_met"] = r.tolerance_met;
  j["max_deviation"] = r.max_deviation();
  for (const auto& c : r.classes)
    j["classes"][std::string(class_name(c.cls))] = {
        {"positives", c.positives},         {"full_rate", c.full_rate},
        {"train_rate", c.train_rate},       {"val_rate", c.val_rate},
        {"train_deviation", c.train_deviation}, {"val_deviation", c.val_deviation},
        {"degenerate", c.degenerate}};
  return j;
}

}  // namespace cxr
