// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "corpus.hpp"
#include "cxr/labeler.hpp"
#include "support.hpp"

using namespace cxr;

namespace {

const KeywordConfig& shipped() {
  static const KeywordConfig cfg = load_keyword_config(cxrtest::data_dir() / "keywords.yaml");
  return cfg;
}

std::array<std::uint8_t, 5> bits(const LabelVector& v) { return v.bits; }

}  // namespace

TEST(ExpandPattern, Examples) {
  EXPECT_EQ(expand_keyword_pattern("dày màng phổi {trái|phải}"),
            (std::vector<std::string>{"dày màng phổi trái", "dày màng phổi phải"}));
  EXPECT_EQ(expand_keyword_pattern("Gãy  Xương"), std::vector<std::string>{"gãy xương"});
  EXPECT_EQ(expand_keyword_pattern("{a|b} x {c|d}"), (std::vector<std::string>{"a x c", "a x d", "b x c", "b x d"}));
}

TEST(ExpandPattern, Errors) {
  for (const char* bad : {"a {b|c", "a b|c", "a }", "{a|{b}}", "{a||b}", "{ |b}", "{}"})
    EXPECT_THROW(expand_keyword_pattern(bad), BadPattern) << bad;
}

TEST(KeywordConfig, ShippedFile) {
  const auto& cfg = shipped();
  EXPECT_EQ(cfg.version, "vn-cxr-sample-1");
  EXPECT_EQ(cfg.normality_templates.size(), 11u);
  EXPECT_EQ(cfg.keywords[static_cast<std::size_t>(LabelClass::ChestWall)].size(), 3u);
  EXPECT_EQ(cfg.keywords[static_cast<std::size_t>(LabelClass::Pleura)].size(), 6u);
  EXPECT_EQ(cfg.keywords[static_cast<std::size_t>(LabelClass::Parenchyma)].size(), 4u);
  EXPECT_EQ(cfg.keywords[static_cast<std::size_t>(LabelClass::Cardio)].size(), 5u);
  EXPECT_EQ(cfg.other_abnormal.size(), 2u);
}

TEST(KeywordConfig, Validation) {
  KeywordConfig::Source src;
  src.keywords[LabelClass::Pleura] = {"tràn dịch"};
  src.keywords[LabelClass::Parenchyma] = {"TRÀN  dịch"};
  EXPECT_THROW(KeywordConfig::build(src), ConfigError);
  src.keywords[LabelClass::Parenchyma] = {"  "};
  EXPECT_THROW(KeywordConfig::build(src), ConfigError);
  src.keywords.erase(LabelClass::Parenchyma);
  src.normality_templates = {"\t"};
  EXPECT_THROW(KeywordConfig::build(src), ConfigError);
  EXPECT_THROW(parse_keyword_config("keywords:\n  spleen: [a]\n"), ConfigError);
  EXPECT_THROW(parse_keyword_config("keywords: [a]\n"), ConfigError);
  EXPECT_THROW(parse_keyword_config("normality_templates: {a: 1}\n"), ConfigError);
  EXPECT_THROW(parse_keyword_config("[unclosed\n"), ConfigError);
}

TEST(Template, SubstringMatch) {
  EXPECT_TRUE(is_normal_template("Tim phổi bình thường", shipped()));
  EXPECT_TRUE(is_normal_template("Kết luận: TIM PHỔI   bình thường.", shipped()));
  EXPECT_FALSE(is_normal_template("Tim to, phổi mờ", shipped()));
}

TEST(Keywords, TableExamples) {
  auto h = detect_keywords("Xương đòn: gãy xương đòn trái", shipped());
  EXPECT_EQ(h.flags, (std::array<std::uint8_t, 4>{1, 0, 0, 0}));
  EXPECT_EQ(h.other_flag, 0);

  h = detect_keywords("tù góc sườn hoành trái", shipped());
  EXPECT_EQ(h.flags, (std::array<std::uint8_t, 4>{0, 1, 0, 0}));

  h = detect_keywords("liềm hơi dưới vòm hoành phải", shipped());
  EXPECT_EQ(h.flags, (std::array<std::uint8_t, 4>{0, 0, 0, 0}));
  EXPECT_EQ(h.other_flag, 1);

  h = detect_keywords("", shipped());
  EXPECT_FALSE(h.any());
  EXPECT_TRUE(h.evidence.empty());
}

TEST(Keywords, EvidenceRecordsSegment) {
  auto h = detect_keywords("- Xương: bình thường - Tim: hình tim trái to", shipped());
  ASSERT_EQ(h.evidence.size(), 1u);
  EXPECT_EQ(h.evidence[0].cls, LabelClass::Cardio);
  EXPECT_EQ(h.evidence[0].keyword, "hình tim trái to");
  EXPECT_EQ(h.evidence[0].segment, 2u);
}

TEST(Interpolate, Truth) {
  EXPECT_EQ(interpolate_abnormal({0, 0, 0, 0}, 0), 0);
  EXPECT_EQ(interpolate_abnormal({0, 0, 1, 0}, 0), 1);
  EXPECT_EQ(interpolate_abnormal({0, 0, 0, 0}, 1), 1);
  for (int m = 0; m < 32; ++m) {
    std::array<std::uint8_t, 4> f{};
    for (int c = 0; c < 4; ++c) f[c] = (m >> c) & 1;
    EXPECT_EQ(interpolate_abnormal(f, (m >> 4) & 1), m != 0 ? 1 : 0);
  }
}

TEST(Label, Stages) {
  auto r = label_description("tim phổi bình thường", shipped());
  ASSERT_TRUE(r.labels);
  EXPECT_FALSE(r.needs_review);
  EXPECT_EQ(bits(*r.labels), (std::array<std::uint8_t, 5>{0, 0, 0, 0, 0}));
  EXPECT_EQ(r.labels->source, LabelSource::TemplateNormal);

  r = label_description("- Xương: thưa xương. - Tim: hình tim trái to.", shipped());
  ASSERT_TRUE(r.labels);
  EXPECT_EQ(bits(*r.labels), (std::array<std::uint8_t, 5>{1, 0, 0, 1, 1}));
  EXPECT_EQ(r.labels->source, LabelSource::Keyword);
  EXPECT_EQ(r.labels->evidence.size(), 2u);

  r = label_description("Dầy thanh phê quan hai bên", shipped());
  EXPECT_FALSE(r.labels);
  EXPECT_TRUE(r.needs_review);
  EXPECT_EQ(r.review_reason, ReviewReason::NoTemplateNoKeyword);
}

TEST(Label, TemplateWinsOverKeyword) {
  auto r = label_description("Tim phổi bình thường. Gãy xương sườn cũ.", shipped());
  ASSERT_TRUE(r.labels);
  EXPECT_EQ(r.labels->source, LabelSource::TemplateNormal);
  EXPECT_EQ(bits(*r.labels), (std::array<std::uint8_t, 5>{0, 0, 0, 0, 0}));
}

TEST(Label, DecomposedInputMatches) {
  // "gãy" written as g + a + combining tilde + y.
  auto r = label_description("ga\xCC\x83y xương sườn", shipped());
  ASSERT_TRUE(r.labels);
  EXPECT_EQ(r.labels->bits[0], 1);
}

TEST(Label, GeneratedCorpusProperties) {
  auto corpus = cxrtest::generate_corpus(shipped(), 2000, 99, 50);
  std::size_t queued = 0, corrupted = 0;
  for (const auto& g : corpus) {
    auto r = label_description(g.description, shipped());
    EXPECT_NE(r.labels.has_value(), r.needs_review);
    // Normalization invariance.
    auto n = label_description(normalize_text(g.description), shipped());
    EXPECT_EQ(r.needs_review, n.needs_review);
    if (r.labels && n.labels) {
      EXPECT_EQ(r.labels->bits, n.labels->bits);
    }

    corrupted += g.corrupted;
    if (r.needs_review) {
      ++queued;
      EXPECT_TRUE(g.corrupted) << g.description;
      continue;
    }
    EXPECT_FALSE(g.corrupted) << g.description;
    EXPECT_EQ(r.labels->bits, g.labels) << g.description;
    EXPECT_EQ(r.labels->source, g.normal ? LabelSource::TemplateNormal : LabelSource::Keyword);
    for (auto c : kLocationClasses) EXPECT_GE(r.labels->bits[4], r.labels->bits[static_cast<std::size_t>(c)]);
  }
  EXPECT_EQ(queued, corrupted);
  EXPECT_EQ(corrupted, 40u);
}

TEST(Label, CorruptedPhrasesReallyMatchNothing) {
  // Checks the generator itself with plain string search.
  const auto& cfg = shipped();
  for (const auto& g : cxrtest::generate_corpus(cfg, 500, 5, 1)) {
    for (const auto& t : cfg.normality_templates) EXPECT_FALSE(cxrtest::contains_collapsed(g.description, t));
    for (const auto& set : cfg.keywords)
      for (const auto& k : set) EXPECT_FALSE(cxrtest::contains_collapsed(g.description, k)) << g.description;
    for (const auto& k : cfg.other_abnormal) EXPECT_FALSE(cxrtest::contains_collapsed(g.description, k));
  }
}

TEST(Label, FillerIsNeutral) {
  const auto& cfg = shipped();
  for (const auto& f : cxrtest::filler_phrases()) {
    auto r = label_description(f, cfg);
    EXPECT_TRUE(r.needs_review) << f;
  }
}
