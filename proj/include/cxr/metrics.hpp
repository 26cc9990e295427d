// SPDX-License-Identifier: Apache-2.0
#pragma once

// Classification metrics and percentile bootstrap intervals.
//
// Ratios whose denominator is zero evaluate to 0 and raise a degenerate
// flag instead of throwing, so macro averages stay defined.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cxr/csv.hpp"
#include "cxr/errors.hpp"
#include "cxr/labels.hpp"
#include "cxr/rng.hpp"

namespace cxr {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline ConfusionCounts confusion(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth) {
  if (predicted.size() != truth.size()) throw LengthMismatch(predicted.size(), truth.size());
  if (predicted.empty()) throw EmptyInput("confusion needs at least one element");
  ConfusionCounts c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    bool p = predicted[i] != 0, t = truth[i] != 0;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// A ratio plus whether its denominator was zero.
struct Rate {
  double value = 0.0;
  bool degenerate = false;
};

inline Rate safe_ratio(double num, double den) {
  if (den == 0.0) return {0.0, true};
  return {num / den, false};
}

struct Prf1 {
  Rate precision, recall, f1;
};

// F1 is computed as 2tp / (2tp + fp + fn), the harmonic mean of precision
// and recall written over the counts.
inline Prf1 prf1(const ConfusionCounts& c) {
  double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  return {safe_ratio(tp, tp + fp), safe_ratio(tp, tp + fn), safe_ratio(2 * tp, 2 * tp + fp + fn)};
}

struct SensSpec {
  Rate sensitivity, specificity;
};

inline SensSpec sens_spec(const ConfusionCounts& c) {
  return {safe_ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn)),
          safe_ratio(static_cast<double>(c.tn), static_cast<double>(c.tn + c.fp))};
}

// Mann-Whitney AUC with midranks for tied scores.
inline double auc(std::span<const double> scores, std::span<const std::uint8_t> truth) {
  if (scores.size() != truth.size()) throw LengthMismatch(scores.size(), truth.size());
  std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double positive_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (truth[order[k]]) {
        positive_rank_sum += midrank;
        ++n_pos;
      }
    i = j;
  }
  std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw SingleClass();
  double np = static_cast<double>(n_pos);
  return (positive_rank_sum - np * (np + 1) / 2.0) / (np * static_cast<double>(n_neg));
}

template <typename Map>
double macro_average(const Map& values) {
  if (values.empty()) throw EmptyInput("macro average of no classes");
  double sum = 0.0;
  for (const auto& [k, v] : values) sum += v;
  return sum / static_cast<double>(values.size());
}

// ---------------------------------------------------------------------------
// Bootstrap

struct Interval {
  double lo = 0.0, hi = 0.0;
  friend bool operator==(const Interval&, const Interval&) = default;
};

// Percentile with linear interpolation between order statistics
// (h = (n-1)p). `sorted` must be ascending and non-empty.
inline double percentile_sorted(const std::vector<double>& sorted, double p) {
  double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  auto lo = static_cast<std::size_t>(std::floor(h));
  auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct BootstrapOptions {
  std::size_t replicates = 3000;
  std::uint64_t seed = 17;
  unsigned threads = 1;
};

// Runs `replicates` resamples of n row indices with replacement. Replicate
// r draws from Xoshiro256ss::for_stream(seed, r), so results do not depend
// on thread count or scheduling. `statistics` maps the resampled indices to
// one value per tracked statistic; returns replicate values per statistic.
inline std::vector<std::vector<double>> bootstrap_replicates(
    std::size_t n, const BootstrapOptions& opt,
    const std::function<std::vector<double>(const std::vector<std::size_t>&)>& statistics) {
  if (n < 2) throw TooFewSamples(n);
  if (opt.replicates < 1) throw DataError("bootstrap needs at least one replicate");
  std::vector<std::vector<double>> per_replicate(opt.replicates);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    std::vector<std::size_t> idx(n);
    for (std::size_t r = next++; r < opt.replicates; r = next++) {
      auto rng = Xoshiro256ss::for_stream(opt.seed, r);
      for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n));
      per_replicate[r] = statistics(idx);
    }
  };
  unsigned threads = std::max(1u, opt.threads);
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::size_t k = per_replicate.front().size();
  std::vector<std::vector<double>> by_stat(k, std::vector<double>(opt.replicates));
  for (std::size_t r = 0; r < opt.replicates; ++r) {
    if (per_replicate[r].size() != k) throw DataError("statistic arity changed between replicates");
    for (std::size_t s = 0; s < k; ++s) by_stat[s][r] = per_replicate[r][s];
  }
  return by_stat;
}

inline Interval percentile_interval(std::vector<double> values, double level = 0.95) {
  std::sort(values.begin(), values.end());
  double tail = (1.0 - level) / 2.0;
  return {percentile_sorted(values, tail), percentile_sorted(values, 1.0 - tail)};
}

// 95% percentile bootstrap interval of `statistic` over `samples`.
template <typename T>
Interval bootstrap_ci(std::span<const T> samples, const std::function<double(const std::vector<T>&)>& statistic,
                      const BootstrapOptions& opt = {}) {
  auto values = bootstrap_replicates(samples.size(), opt, [&](const std::vector<std::size_t>& idx) {
    std::vector<T> resample;
    resample.reserve(idx.size());
    for (auto i : idx) resample.push_back(samples[i]);
    return std::vector<double>{statistic(resample)};
  });
  return percentile_interval(std::move(values.front()));
}

// ---------------------------------------------------------------------------
// Labeler evaluation

struct ClassMetrics {
  ConfusionCounts counts;
  Rate precision, recall, specificity, f1;
  std::optional<double> auc;
};

struct MetricsReport {
  std::map<LabelClass, ClassMetrics> per_class;
  std::map<std::string, double> macro;         // precision, recall, specificity, f1, auc
  std::map<std::string, Interval> ci;          // e.g. "f1.pleura", "f1.macro"
  std::size_t n = 0;
};

inline ClassMetrics class_metrics(const ConfusionCounts& c) {
  auto p = prf1(c);
  auto s = sens_spec(c);
  return {c, p.precision, p.recall, s.specificity, p.f1, std::nullopt};
}

// Per-class scores for AUC: study_uid,chest_wall,...,abnormal with reals.
struct ScoreRow {
  std::string study_uid;
  std::array<double, kNumClasses> scores{};
};

inline std::vector<ScoreRow> read_score_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!csv::next_line(in, line, line_no)) throw HeaderMismatch("score CSV is empty");
  auto header = csv::split_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  if (!col.count("study_uid")) throw HeaderMismatch("score CSV lacks study_uid column");
  for (auto c : kAllClasses)
    if (!col.count(std::string(class_name(c)))) throw HeaderMismatch("score CSV lacks column " + std::string(class_name(c)));
  std::vector<ScoreRow> rows;
  while (csv::next_line(in, line, line_no)) {
    auto f = csv::split_line(line);
    if (f.size() != header.size()) throw MalformedLine("wrong field count", line_no);
    ScoreRow r;
    r.study_uid = f[col["study_uid"]];
    for (auto c : kAllClasses) {
      const auto& v = f[col[std::string(class_name(c))]];
      try {
        std::size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size() || !(x >= 0.0 && x <= 1.0)) throw std::invalid_argument(v);
        r.scores[static_cast<std::size_t>(c)] = x;
      } catch (const std::exception&) {
        throw BadValue(line_no, std::string(class_name(c)), v);
      }
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace detail {

template <typename Row>
std::unordered_map<std::string, const Row*> index_rows(const std::vector<Row>& rows) {
  std::unordered_map<std::string, const Row*> idx;
  for (const auto& r : rows)
    if (!idx.emplace(r.study_uid, &r).second) throw DuplicateKey(r.study_uid);
  return idx;
}

}  // namespace detail

// Compares automatic labels against ground truth over the five classes.
// Rows are aligned by study_uid; both files must cover the same uids.
// With opt.replicates > 0, adds percentile intervals for per-class and
// macro F1, resampling whole studies.
inline MetricsReport evaluate_labeler(const std::vector<LabelRow>& automatic, const std::vector<LabelRow>& truth,
                                      const std::vector<ScoreRow>* scores = nullptr,
                                      std::optional<BootstrapOptions> bootstrap = std::nullopt) {
  auto auto_idx = detail::index_rows(automatic);
  auto truth_idx = detail::index_rows(truth);
  std::vector<std::string> missing, extra;
  for (const auto& r : truth)
    if (!auto_idx.count(r.study_uid)) missing.push_back(r.study_uid);
  for (const auto& r : automatic)
    if (!truth_idx.count(r.study_uid)) extra.push_back(r.study_uid);
  if (!missing.empty() || !extra.empty()) throw KeyMismatch(std::move(missing), std::move(extra));
  if (truth.empty()) throw EmptyInput("no rows to evaluate");

  const std::size_t n = truth.size();
  // Column-major bits in truth-file order.
  std::array<std::vector<std::uint8_t>, kNumClasses> pred, gold;
  for (auto& v : pred) v.resize(n);
  for (auto& v : gold) v.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = truth[i];
    const auto& a = *auto_idx.at(t.study_uid);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      pred[c][i] = a.labels.bits[c];
      gold[c][i] = t.labels.bits[c];
    }
  }

  MetricsReport report;
  report.n = n;
  std::map<std::string, double> p_vals, r_vals, s_vals, f_vals, auc_vals;
  for (auto cls : kAllClasses) {
    auto c = static_cast<std::size_t>(cls);
    auto m = class_metrics(confusion(pred[c], gold[c]));
    std::string name(class_name(cls));
    p_vals[name] = m.precision.value;
    r_vals[name] = m.recall.value;
    s_vals[name] = m.specificity.value;
    f_vals[name] = m.f1.value;
    report.per_class[cls] = m;
  }
  if (scores) {
    auto score_idx = detail::index_rows(*scores);
    for (auto cls : kAllClasses) {
      auto c = static_cast<std::size_t>(cls);
      std::vector<double> s(n);
      for (std::size_t i = 0; i < n; ++i) {
        auto it = score_idx.find(truth[i].study_uid);
        if (it == score_idx.end()) throw KeyMismatch({truth[i].study_uid}, {});
        s[i] = it->second->scores[c];
      }
      try {
        report.per_class[cls].auc = auc(s, gold[c]);
        auc_vals[std::string(class_name(cls))] = *report.per_class[cls].auc;
      } catch (const SingleClass&) {
        // AUC undefined for this class; left absent.
      }
    }
  }
  report.macro["precision"] = macro_average(p_vals);
  report.macro["recall"] = macro_average(r_vals);
  report.macro["specificity"] = macro_average(s_vals);
  report.macro["f1"] = macro_average(f_vals);
  if (!auc_vals.empty()) report.macro["auc"] = macro_average(auc_vals);

  if (bootstrap && bootstrap->replicates > 0) {
    auto values = bootstrap_replicates(n, *bootstrap, [&](const std::vector<std::size_t>& idx) {
      std::vector<double> out;
      double sum = 0.0;
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        ConfusionCounts cc;
        for (auto i : idx) {
          bool p = pred[c][i], t = gold[c][i];
          if (p && t) ++cc.tp;
          else if (p) ++cc.fp;
          else if (t) ++cc.fn;
          else ++cc.tn;
        }
        double f = prf1(cc).f1.value;
        out.push_back(f);
        sum += f;
      }
      out.push_back(sum / kNumClasses);
      return out;
    });
    for (std::size_t c = 0; c < kNumClasses; ++c)
      report.ci["f1." + std::string(class_name(kAllClasses[c]))] = percentile_interval(values[c]);
    report.ci["f1.macro"] = percentile_interval(values[kNumClasses]);
  }
  return report;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["n"] = r.n;
  for (const auto& [cls, m] : r.per_class) {
    nlohmann::json c = {{"tp", m.counts.tp}, {"fp", m.counts.fp}, {"tn", m.counts.tn}, {"fn", m.counts.fn},
                        {"precision", m.precision.value}, {"recall", m.recall.value},
                        {"sensitivity", m.recall.value}, {"specificity", m.specificity.value},
                        {"f1", m.f1.value}};
    nlohmann::json degenerate = nlohmann::json::array();
    if (m.precision.degenerate) degenerate.push_back("precision");
    if (m.recall.degenerate) degenerate.push_back("recall");
    if (m.specificity.degenerate) degenerate.push_back("specificity");
    if (m.f1.degenerate) degenerate.push_back("f1");
    c["degenerate"] = degenerate;
    if (m.auc) c["auc"] = *m.auc;
    j["per_class"][std::string(class_name(cls))] = c;
  }
  j["macro"] = r.macro;
  for (const auto& [k, iv] : r.ci) j["ci"][k] = {iv.lo, iv.hi};
  return j;
}

inline std::string format_table(const MetricsReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "class" << std::right << std::setw(7) << "TP" << std::setw(7) << "FP"
     << std::setw(7) << "TN" << std::setw(7) << "FN" << std::setw(11) << "precision" << std::setw(9) << "recall"
     << std::setw(9) << "spec" << std::setw(9) << "F1" << std::setw(9) << "AUC" << '\n';
  os << std::fixed << std::setprecision(4);
  for (const auto& [cls, m] : r.per_class) {
    os << std::left << std::setw(12) << class_name(cls) << std::right << std::setw(7) << m.counts.tp << std::setw(7)
       << m.counts.fp << std::setw(7) << m.counts.tn << std::setw(7) << m.counts.fn << std::setw(11)
       << m.precision.value << std::setw(9) << m.recall.value << std::setw(9) << m.specificity.value << std::setw(9)
       << m.f1.value;
    if (m.auc) os << std::setw(9) << *m.auc;
    else os << std::setw(9) << "-";
    os << '\n';
  }
  os << std::left << std::setw(40) << "macro" << std::right << std::setw(11) << r.macro.at("precision")
     << std::setw(9) << r.macro.at("recall") << std::setw(9) << r.macro.at("specificity") << std::setw(9)
     << r.macro.at("f1");
  if (r.macro.count("auc")) os << std::setw(9) << r.macro.at("auc");
  os << '\n';
  for (const auto& [k, iv] : r.ci) os << "95% CI " << k << ": [" << iv.lo << ", " << iv.hi << "]\n";
  return os.str();
}

}  // namespace cxr
