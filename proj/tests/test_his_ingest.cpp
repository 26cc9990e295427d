// SPDX-License-Identifier: Apache-2.0
#include <set>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "cxr/his_ingest.hpp"
#include "cxr/rng.hpp"
#include "support.hpp"

using namespace cxr;
using cxrtest::at;

namespace {

std::string session_xml(const std::string& reports, const std::string& check_out = "2021-03-01T11:00:00+07:00") {
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
         "<Session><Header><SessionId>S1</SessionId><PatientId>P1</PatientId>"
         "<CheckInTime>2021-03-01T07:30:00+07:00</CheckInTime><CheckOutTime>" +
         check_out + "</CheckOutTime></Header><Reports>" + reports + "</Reports></Session>";
}

std::string report_xml(const std::string& body) { return "<Report>" + body + "</Report>"; }

const std::string kGoodReport =
    "<ServiceId>18.0075.0028</ServiceId><ReportTime>2021-03-01T08:20:00+07:00</ReportTime>"
    "<Description>Tim phổi bình thường.</Description>";

template <typename E>
std::string thrown_path(const std::string& xml) {
  try {
    parse_session_file(xml);
  } catch (const E& e) {
    return e.path();
  }
  return "<no throw>";
}

void expect_same(const ReportRecord& a, const ReportRecord& b) {
  EXPECT_EQ(a.report_id, b.report_id);
  EXPECT_EQ(a.session_id, b.session_id);
  EXPECT_EQ(a.patient_id, b.patient_id);
  EXPECT_EQ(a.service_id, b.service_id);
  EXPECT_EQ(a.report_time, b.report_time);
  EXPECT_EQ(a.description, b.description);
  EXPECT_EQ(a.check_in_time, b.check_in_time);
  EXPECT_EQ(a.check_out_time, b.check_out_time);
}

}  // namespace

TEST(ParseSession, SingleReport) {
  auto f = parse_session_file(session_xml(report_xml(kGoodReport)));
  EXPECT_EQ(f.session.session_id, "S1");
  EXPECT_EQ(f.session.patient_id, "P1");
  ASSERT_EQ(f.reports.size(), 1u);
  const auto& r = f.reports[0];
  EXPECT_EQ(r.session_id, "S1");
  EXPECT_EQ(r.patient_id, "P1");
  EXPECT_EQ(r.report_id, "S1#0");
  EXPECT_EQ(r.service_id, "18.0075.0028");
  EXPECT_EQ(r.report_time, at("2021-03-01T01:20:00Z"));
  EXPECT_EQ(r.description, "Tim phổi bình thường.");
  EXPECT_EQ(r.check_in_time, at("2021-03-01T00:30:00Z"));
  EXPECT_EQ(r.check_out_time, at("2021-03-01T04:00:00Z"));
}

TEST(ParseSession, NoReports) {
  auto f = parse_session_file(session_xml(""));
  EXPECT_EQ(f.session.session_id, "S1");
  EXPECT_TRUE(f.reports.empty());
}

TEST(ParseSession, ReportIdsKeptOrSynthesizedByIndex) {
  auto f = parse_session_file(session_xml(report_xml(kGoodReport) + report_xml("<ReportId>R-9</ReportId>" + kGoodReport) +
                                          report_xml(kGoodReport)));
  ASSERT_EQ(f.reports.size(), 3u);
  EXPECT_EQ(f.reports[0].report_id, "S1#0");
  EXPECT_EQ(f.reports[1].report_id, "R-9");
  EXPECT_EQ(f.reports[2].report_id, "S1#2");
}

TEST(ParseSession, CheckOutBeforeCheckIn) {
  EXPECT_EQ(thrown_path<SchemaViolation>(session_xml("", "2021-03-01T07:00:00+07:00")), "/Session/Header/CheckOutTime");
}

TEST(ParseSession, MissingElementsCarryPaths) {
  EXPECT_EQ(thrown_path<SchemaViolation>(session_xml(report_xml(
                "<ServiceId>x</ServiceId><ReportTime>2021-03-01T08:20:00Z</ReportTime>"))),
            "/Session/Reports/Report[1]/Description");
  EXPECT_EQ(thrown_path<SchemaViolation>(session_xml(report_xml(kGoodReport) + report_xml(
                "<ReportTime>2021-03-01T08:20:00Z</ReportTime><Description>d</Description>"))),
            "/Session/Reports/Report[2]/ServiceId");
  EXPECT_EQ(thrown_path<SchemaViolation>("<Session><Reports/></Session>"), "/Session/Header");
  EXPECT_EQ(thrown_path<SchemaViolation>("<Visit/>"), "/Visit");
}

TEST(ParseSession, EmptyDescriptionRejected) {
  EXPECT_EQ(thrown_path<SchemaViolation>(session_xml(report_xml(
                "<ServiceId>x</ServiceId><ReportTime>2021-03-01T08:20:00Z</ReportTime><Description>  \n </Description>"))),
            "/Session/Reports/Report[1]/Description");
}

TEST(ParseSession, BadTimestamps) {
  EXPECT_EQ(thrown_path<BadTimestamp>(session_xml(report_xml(
                "<ServiceId>x</ServiceId><ReportTime>2021-03-01 08:20</ReportTime><Description>d</Description>"))),
            "/Session/Reports/Report[1]/ReportTime");
  // Naive local time: no offset.
  EXPECT_EQ(thrown_path<BadTimestamp>(session_xml(report_xml(
                "<ServiceId>x</ServiceId><ReportTime>2021-03-01T08:20:00</ReportTime><Description>d</Description>"))),
            "/Session/Reports/Report[1]/ReportTime");
}

TEST(ParseSession, MalformedXml) {
  EXPECT_THROW(parse_session_file("<Session><Header></Session>"), MalformedXml);
  EXPECT_THROW(parse_session_file("<Session>"), MalformedXml);
  EXPECT_THROW(parse_session_file(""), MalformedXml);
  EXPECT_THROW(parse_session_file("<Session/><Session/>"), MalformedXml);
  EXPECT_EQ(thrown_path<MalformedXml>("<Session>\n<Header>\n</Headr>\n</Session>"), "line 3");
}

TEST(ParseSession, EncodingMustBeUtf8) {
  EXPECT_THROW(parse_session_file("<?xml version=\"1.0\" encoding=\"windows-1258\"?><Session/>"), MalformedXml);
  EXPECT_THROW(parse_session_file("<Session>\xFF</Session>"), MalformedXml);
  auto body = session_xml("");
  body = body.substr(body.find('\n') + 1);
  EXPECT_NO_THROW(parse_session_file("<?xml version='1.0' encoding='utf8'?>" + body));
}

TEST(ParseSession, UnknownElementsIgnoredAndEntitiesDecoded) {
  auto f = parse_session_file(session_xml(report_xml(
      "<Extra>1</Extra><ServiceId>a</ServiceId><ReportTime>2021-03-01T08:20:00Z</ReportTime>"
      "<Description>A &lt;5mm &amp; B</Description>")));
  ASSERT_EQ(f.reports.size(), 1u);
  EXPECT_EQ(f.reports[0].description, "A <5mm & B");
}

TEST(ParseSession, Deterministic) {
  auto xml = session_xml(report_xml(kGoodReport) + report_xml(kGoodReport));
  auto a = parse_session_file(xml), b = parse_session_file(xml);
  ASSERT_EQ(a.reports.size(), b.reports.size());
  for (std::size_t i = 0; i < a.reports.size(); ++i) expect_same(a.reports[i], b.reports[i]);
}

TEST(ParseSession, RoundTripRandomSessions) {
  Xoshiro256ss rng(2024);
  const std::vector<std::string> words{"tim", "phổi", "Đ", "<", ">", "&", "'", "\"", "bình", "thường", "x", "-", "ĐMC",
                                       "  ", "\n", "gãy", "xương", "1,5cm"};
  auto word_run = [&](std::size_t n) {
    std::string s;
    for (std::size_t k = 0; k < n; ++k) s += words[rng.below(words.size())];
    return s;
  };
  for (int iter = 0; iter < 300; ++iter) {
    SessionFile f;
    f.session.session_id = "S" + std::to_string(iter);
    f.session.patient_id = "P" + std::to_string(rng.below(1000));
    auto base = static_cast<std::int64_t>(rng.below(2'000'000'000'000ULL));
    f.session.check_in_time = Instant{std::chrono::milliseconds{base}};
    f.session.check_out_time = Instant{std::chrono::milliseconds{base + static_cast<std::int64_t>(rng.below(86'400'000))}};
    for (std::size_t k = 0, n = rng.below(6); k < n; ++k) {
      ReportRecord r;
      r.report_id = rng.below(2) ? "R" + std::to_string(k) : synthesize_report_id(f.session.session_id, k);
      r.session_id = f.session.session_id;
      r.patient_id = f.session.patient_id;
      r.service_id = "18.00" + std::to_string(rng.below(100));
      r.report_time = Instant{std::chrono::milliseconds{base + static_cast<std::int64_t>(rng.below(86'400'000))}};
      r.description = "d" + word_run(rng.below(20));
      r.check_in_time = f.session.check_in_time;
      r.check_out_time = f.session.check_out_time;
      f.reports.push_back(r);
    }
    auto back = parse_session_file(serialize_session(f));
    EXPECT_EQ(back.session.session_id, f.session.session_id);
    EXPECT_EQ(back.session.patient_id, f.session.patient_id);
    EXPECT_EQ(back.session.check_in_time, f.session.check_in_time);
    EXPECT_EQ(back.session.check_out_time, f.session.check_out_time);
    ASSERT_EQ(back.reports.size(), f.reports.size());
    for (std::size_t k = 0; k < f.reports.size(); ++k) expect_same(back.reports[k], f.reports[k]);
  }
}

TEST(FilterChest, Examples) {
  auto a = cxrtest::report("1", "P", "2021-01-01T00:00:00Z", "d", "2021-01-01T00:00:00Z", "2021-01-01T01:00:00Z");
  auto b = a;
  b.report_id = "2";
  b.service_id = "B";
  a.service_id = "A";
  auto out = filter_chest_reports({a, b}, {"A"});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].report_id, "1");
  EXPECT_EQ(filter_chest_reports({a, b}, {"A", "B"}).size(), 2u);
  EXPECT_THROW(filter_chest_reports({a, b}, {}), EmptyWhitelist);
}

TEST(FilterChest, MatchesLinearScan) {
  Xoshiro256ss rng(77);
  std::vector<ReportRecord> reports;
  for (int i = 0; i < 1000; ++i) {
    auto r = cxrtest::report(std::to_string(i), "P", "2021-01-01T00:00:00Z", "d" + std::to_string(i),
                             "2021-01-01T00:00:00Z", "2021-01-01T01:00:00Z");
    r.service_id = "svc" + std::to_string(rng.below(20));
    reports.push_back(r);
  }
  std::set<std::string> wl;
  for (int k = 0; k < 20; ++k)
    if (rng.below(3) == 0) wl.insert("svc" + std::to_string(k));
  wl.insert("svc0");
  auto out = filter_chest_reports(reports, wl);
  std::vector<std::string> expected;
  for (const auto& r : reports)
    if (wl.find(r.service_id) != wl.end()) expected.push_back(r.report_id);
  ASSERT_EQ(out.size(), expected.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i].report_id, expected[i]);
    EXPECT_EQ(out[i].description, "d" + out[i].report_id);
  }
}

TEST(Whitelist, CommentsAndBlanks) {
  std::istringstream in("# chest\n18.0075.0028\n\n  18.0076.0028  # PA\n");
  EXPECT_EQ(read_whitelist(in), (std::set<std::string>{"18.0075.0028", "18.0076.0028"}));
}

TEST(SessionDir, FixtureCorpus) {
  auto sessions = parse_session_dir(cxrtest::fixture_dir() / "his");
  ASSERT_EQ(sessions.size(), 12u);
  EXPECT_EQ(sessions.front().session.session_id, "S01");
  std::size_t reports = 0;
  for (const auto& s : sessions) reports += s.reports.size();
  EXPECT_EQ(reports, 15u);
}

TEST(SessionDir, ErrorsNameTheFile) {
  cxrtest::TempDir dir;
  cxrtest::write_text(dir / "a.xml", session_xml(""));
  cxrtest::write_text(dir / "b.xml", "<Session>");
  try {
    parse_session_dir(dir.path());
    FAIL();
  } catch (const MalformedXml& e) {
    EXPECT_NE(std::string(e.what()).find("b.xml"), std::string::npos);
  }
}

TEST(ReportsJsonl, RoundTrip) {
  auto r = cxrtest::report("R1", "P1", "2021-03-01T08:20:00.5+07:00", "Dày \"màng\" phổi", "2021-03-01T07:00:00+07:00",
                           "2021-03-01T09:00:00+07:00");
  std::istringstream in(to_json(r).dump() + "\n\n" + to_json(r).dump() + "\n");
  auto back = read_reports_jsonl(in);
  ASSERT_EQ(back.size(), 2u);
  expect_same(back[0], r);
  std::istringstream bad("{\"report_id\":1}\n");
  EXPECT_THROW(read_reports_jsonl(bad), MalformedLine);
}
