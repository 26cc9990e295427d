// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "cxr/metrics.hpp"
#include "cxr/rng.hpp"
#include "oracles.hpp"

using namespace cxr;

namespace {

struct PrintedRow {
  LabelClass cls;
  std::uint64_t tp, fp, tn, fn;
  double precision, recall, f1;
};

// Published evaluation of the rule-based labeler against radiologist labels.
constexpr PrintedRow kPrinted[] = {
    {LabelClass::ChestWall, 71, 0, 2930, 0, 1, 1, 1},
    {LabelClass::Pleura, 67, 1, 2933, 0, 0.9853, 1, 0.9926},
    {LabelClass::Parenchyma, 652, 1, 2347, 1, 0.9985, 0.9985, 0.9985},
    {LabelClass::Cardio, 235, 0, 2766, 0, 1, 1, 1},
    {LabelClass::Abnormal, 848, 0, 2153, 0, 1, 1, 1},
};

// Expands counts into aligned label rows for one class (others all zero).
std::vector<std::uint8_t> expand(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d, int p1, int p2,
                                 int p3, int p4) {
  std::vector<std::uint8_t> v;
  v.insert(v.end(), a, p1);
  v.insert(v.end(), b, p2);
  v.insert(v.end(), c, p3);
  v.insert(v.end(), d, p4);
  return v;
}

}  // namespace

TEST(Metrics, ConfusionExamples) {
  std::vector<std::uint8_t> p{1, 0}, t{1, 0};
  EXPECT_EQ(confusion(p, t), (ConfusionCounts{1, 0, 1, 0}));
  std::vector<std::uint8_t> one{1}, zero{0};
  EXPECT_EQ(confusion(one, zero).fp, 1u);
  EXPECT_THROW(confusion(one, p), LengthMismatch);
}

TEST(Metrics, ConfusionMatchesElementTally) {
  Xoshiro256ss rng(5);
  std::vector<std::uint8_t> p(1000), t(1000);
  for (auto& x : p) x = rng.below(2);
  for (auto& x : t) x = rng.below(2);
  ConfusionCounts want;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 1 && t[i] == 1) want.tp++;
    if (p[i] == 1 && t[i] == 0) want.fp++;
    if (p[i] == 0 && t[i] == 0) want.tn++;
    if (p[i] == 0 && t[i] == 1) want.fn++;
  }
  EXPECT_EQ(confusion(p, t), want);
}

TEST(Metrics, PrintedTableArithmetic) {
  for (const auto& row : kPrinted) {
    auto m = prf1({row.tp, row.fp, row.tn, row.fn});
    EXPECT_NEAR(m.precision.value, row.precision, 5e-5) << class_name(row.cls);
    EXPECT_NEAR(m.recall.value, row.recall, 5e-5) << class_name(row.cls);
    EXPECT_NEAR(m.f1.value, row.f1, 5e-5) << class_name(row.cls);
    EXPECT_FALSE(m.f1.degenerate);
  }
  auto s = sens_spec({71, 0, 2930, 0});
  EXPECT_EQ(s.sensitivity.value, 1.0);
  EXPECT_EQ(s.specificity.value, 1.0);
}

TEST(Metrics, PrintedTableThroughEvaluator) {
  // Rebuild a 3001-study file pair whose per-class counts are the printed ones.
  std::vector<LabelRow> automatic(3001), truth(3001);
  for (std::size_t i = 0; i < 3001; ++i) automatic[i].study_uid = truth[i].study_uid = "s" + std::to_string(i);
  for (const auto& row : kPrinted) {
    auto pred = expand(row.tp, row.fp, row.tn, row.fn, 1, 1, 0, 0);
    auto gold = expand(row.tp, row.fp, row.tn, row.fn, 1, 0, 0, 1);
    ASSERT_EQ(pred.size(), 3001u);
    for (std::size_t i = 0; i < 3001; ++i) {
      automatic[i].labels[row.cls] = pred[i];
      truth[i].labels[row.cls] = gold[i];
    }
  }
  auto report = evaluate_labeler(automatic, truth);
  for (const auto& row : kPrinted) {
    const auto& m = report.per_class.at(row.cls);
    EXPECT_EQ(m.counts, (ConfusionCounts{row.tp, row.fp, row.tn, row.fn}));
    EXPECT_NEAR(m.precision.value, row.precision, 5e-5);
    EXPECT_NEAR(m.recall.value, row.recall, 5e-5);
    EXPECT_NEAR(m.f1.value, row.f1, 5e-5);
  }
  EXPECT_NEAR(report.macro.at("f1"), (1 + 0.9926 + 0.9985 + 1 + 1) / 5.0, 1e-4);
  auto table = format_table(report);
  EXPECT_NE(table.find("0.9926"), std::string::npos);
  EXPECT_NE(table.find("0.9985"), std::string::npos);
}

TEST(Metrics, RandomCountsMatchFormulas) {
  Xoshiro256ss rng(8);
  for (int k = 0; k < 500; ++k) {
    ConfusionCounts c{rng.below(50) + 1, rng.below(50) + 1, rng.below(50) + 1, rng.below(50) + 1};
    auto want = oracle::prf_from_counts(c.tp, c.fp, c.fn);
    auto got = prf1(c);
    EXPECT_NEAR(got.precision.value, want.precision, 1e-12);
    EXPECT_NEAR(got.recall.value, want.recall, 1e-12);
    EXPECT_NEAR(got.f1.value, want.f1, 1e-12);
    auto s = sens_spec(c);
    EXPECT_EQ(s.sensitivity.value, got.recall.value);
    EXPECT_NEAR(s.specificity.value, double(c.tn) / double(c.tn + c.fp), 1e-15);
  }
}

TEST(Metrics, DegenerateRatios) {
  auto m = prf1({0, 0, 10, 0});
  EXPECT_TRUE(m.precision.degenerate);
  EXPECT_TRUE(m.recall.degenerate);
  EXPECT_TRUE(m.f1.degenerate);
  EXPECT_EQ(m.f1.value, 0.0);
  auto s = sens_spec({1, 5, 0, 0});
  EXPECT_EQ(s.specificity.value, 0.0);
  EXPECT_FALSE(s.specificity.degenerate);
}

TEST(Metrics, AucExamples) {
  std::vector<double> sep{0.1, 0.2, 0.8, 0.9};
  std::vector<std::uint8_t> truth{0, 0, 1, 1};
  EXPECT_EQ(auc(sep, truth), 1.0);
  std::vector<double> flat(4, 0.3);
  EXPECT_EQ(auc(flat, truth), 0.5);
  std::vector<std::uint8_t> ones(4, 1);
  EXPECT_THROW(auc(sep, ones), SingleClass);
  std::vector<double> three{1, 2, 3};
  EXPECT_THROW(auc(three, truth), LengthMismatch);
}

TEST(Metrics, AucMatchesPairOracle) {
  Xoshiro256ss rng(21);
  for (int k = 0; k < 200; ++k) {
    std::size_t n = 2 + rng.below(99);
    std::vector<double> s(n);
    std::vector<std::uint8_t> t(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse grid so ties are common.
      s[i] = static_cast<double>(rng.below(k % 2 ? 5 : 1000)) / 10.0;
      t[i] = rng.below(2);
    }
    t[0] = 0;
    t[1] = 1;
    double a = auc(s, t);
    EXPECT_NEAR(a, oracle::pair_auc(s, t), 1e-12);
    std::vector<double> tr(n), neg(n);
    for (std::size_t i = 0; i < n; ++i) {
      tr[i] = std::exp(3.0 * s[i]) - 7.0;
      neg[i] = -s[i];
    }
    EXPECT_NEAR(auc(tr, t), a, 1e-12);
    EXPECT_NEAR(auc(neg, t), 1.0 - a, 1e-12);
  }
}

TEST(Metrics, MacroAverage) {
  EXPECT_EQ(macro_average(std::map<std::string, double>{{"a", 1}, {"b", 0}}), 0.5);
  EXPECT_EQ(macro_average(std::map<std::string, double>{{"a", 0.25}}), 0.25);
  EXPECT_THROW(macro_average(std::map<std::string, double>{}), EmptyInput);
}

TEST(Metrics, PercentileInterpolates) {
  std::vector<double> v{0, 10, 20, 30, 40};
  EXPECT_EQ(percentile_sorted(v, 0.5), 20.0);
  EXPECT_EQ(percentile_sorted(v, 0.1), 4.0);
  EXPECT_EQ(percentile_sorted(v, 0.0), 0.0);
  EXPECT_EQ(percentile_sorted(v, 1.0), 40.0);
}

TEST(Bootstrap, ConstantStatisticHasZeroWidth) {
  std::vector<int> data(50, 1);
  auto ci = bootstrap_ci<int>(data, [](const std::vector<int>&) { return 0.42; });
  EXPECT_EQ(ci.lo, 0.42);
  EXPECT_EQ(ci.hi, 0.42);
}

TEST(Bootstrap, DeterministicAcrossRunsAndThreads) {
  Xoshiro256ss rng(3);
  std::vector<double> data(400);
  for (auto& x : data) x = rng.uniform01();
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (auto x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  BootstrapOptions one{3000, 17, 1}, four{3000, 17, 4}, other{3000, 18, 1};
  auto a = bootstrap_ci<double>(data, mean, one);
  EXPECT_EQ(a, bootstrap_ci<double>(data, mean, one));
  EXPECT_EQ(a, bootstrap_ci<double>(data, mean, four));
  EXPECT_NE(a, bootstrap_ci<double>(data, mean, other));
  EXPECT_LT(a.lo, a.hi);
}

TEST(Bootstrap, AccuracyWidthNearNormalApproximation) {
  Xoshiro256ss rng(99);
  std::vector<std::uint8_t> correct(3001);
  for (auto& c : correct) c = rng.below(2);  // truth ~ Bernoulli(0.5) against constant prediction 1
  auto accuracy = [](const std::vector<std::uint8_t>& v) {
    double s = 0;
    for (auto x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto ci = bootstrap_ci<std::uint8_t>(correct, accuracy, {3000, 17, 2});
  double expected = 2 * 1.96 * std::sqrt(0.25 / 3001);
  EXPECT_NEAR(ci.hi - ci.lo, expected, 0.3 * expected);
}

TEST(Bootstrap, CoverageOfSmoothStatistic) {
  int covered = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Xoshiro256ss rng(1000 + trial);
    std::vector<double> data(200);
    for (auto& x : data) x = rng.uniform01();
    auto mean = [](const std::vector<double>& v) {
      double s = 0;
      for (auto x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    auto ci = bootstrap_ci<double>(data, mean, {500, trial, 1});
    ASSERT_LE(ci.lo, ci.hi);
    double point = mean(data);
    covered += ci.lo <= point && point <= ci.hi;
  }
  EXPECT_GE(covered, 95);
}

TEST(Bootstrap, TooFewSamples) {
  std::vector<double> one{1.0};
  EXPECT_THROW(bootstrap_ci<double>(one, [](const std::vector<double>&) { return 0.0; }), TooFewSamples);
}

TEST(Evaluate, IdenticalFilesGiveOnes) {
  Xoshiro256ss rng(2);
  std::vector<LabelRow> rows;
  for (int i = 0; i < 300; ++i) {
    auto v = make_labels(rng.below(2), rng.below(2), rng.below(2), rng.below(2), 0);
    if (v.any_location() || rng.below(2)) v[LabelClass::Abnormal] = 1;
    rows.push_back({"u" + std::to_string(i), v});
  }
  auto r = evaluate_labeler(rows, rows, nullptr, BootstrapOptions{200, 1, 1});
  for (const auto& [cls, m] : r.per_class) {
    EXPECT_EQ(m.precision.value, 1.0);
    EXPECT_EQ(m.recall.value, 1.0);
    EXPECT_EQ(m.specificity.value, 1.0);
    EXPECT_EQ(m.f1.value, 1.0);
  }
  EXPECT_EQ(r.ci.at("f1.macro"), (Interval{1.0, 1.0}));
  EXPECT_EQ(r.ci.size(), 6u);
}

TEST(Evaluate, PerturbationAccuracyWithinBinomialBand) {
  Xoshiro256ss rng(6);
  const double rate = 0.1;
  const std::size_t n = 4000;
  std::vector<LabelRow> truth, noisy;
  for (std::size_t i = 0; i < n; ++i) {
    LabelVector t = make_labels(rng.below(2), rng.below(2), rng.below(2), rng.below(2), rng.below(2));
    LabelVector p = t;
    for (auto& b : p.bits)
      if (rng.uniform01() < rate) b ^= 1;
    truth.push_back({"u" + std::to_string(i), t});
    noisy.push_back({"u" + std::to_string(i), p});
  }
  auto r = evaluate_labeler(noisy, truth);
  double sigma = std::sqrt(rate * (1 - rate) / n);
  for (const auto& [cls, m] : r.per_class) {
    const auto& c = m.counts;
    double acc = double(c.tp + c.tn) / double(n);
    EXPECT_NEAR(acc, 1 - rate, 3 * sigma) << class_name(cls);
  }
}

TEST(Evaluate, KeyMismatch) {
  std::vector<LabelRow> a{{"x", {}}, {"y", {}}}, b{{"x", {}}, {"z", {}}};
  try {
    evaluate_labeler(a, b);
    FAIL();
  } catch (const KeyMismatch& e) {
    EXPECT_EQ(e.missing(), std::vector<std::string>{"z"});
    EXPECT_EQ(e.extra(), std::vector<std::string>{"y"});
  }
  std::vector<LabelRow> dup{{"x", {}}, {"x", {}}};
  EXPECT_THROW(evaluate_labeler(dup, dup), DuplicateKey);
}

TEST(Evaluate, ScoresGiveAuc) {
  std::vector<LabelRow> truth;
  std::vector<ScoreRow> scores;
  for (int i = 0; i < 10; ++i) {
    auto v = make_labels(0, 0, i % 2, 0, i % 2);
    truth.push_back({"u" + std::to_string(i), v});
    ScoreRow s{"u" + std::to_string(i), {}};
    s.scores[2] = s.scores[4] = i % 2 ? 0.9 : 0.1;
    scores.push_back(s);
  }
  auto r = evaluate_labeler(truth, truth, &scores);
  EXPECT_EQ(r.per_class.at(LabelClass::Parenchyma).auc, 1.0);
  EXPECT_FALSE(r.per_class.at(LabelClass::Cardio).auc);
  EXPECT_EQ(r.macro.at("auc"), 1.0);
  auto j = to_json(r);
  EXPECT_EQ(j["per_class"]["parenchyma"]["auc"], 1.0);
  EXPECT_FALSE(j["per_class"]["cardio"].contains("auc"));
}

TEST(Evaluate, ScoreCsv) {
  std::istringstream in("study_uid,chest_wall,pleura,parenchyma,cardio,abnormal\na,0.1,0.2,0.3,0.4,0.5\n");
  auto rows = read_score_csv(in);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].scores[4], 0.5);
  std::istringstream bad("study_uid,chest_wall,pleura,parenchyma,cardio,abnormal\na,0.1,0.2,1.3,0.4,0.5\n");
  EXPECT_THROW(read_score_csv(bad), BadValue);
  std::istringstream nouid("x,chest_wall\n");
  EXPECT_THROW(read_score_csv(nouid), HeaderMismatch);
}
