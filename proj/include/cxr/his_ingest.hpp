// SPDX-License-Identifier: Apache-2.0
#pragma once

// HIS session export ingestion.
//
// One XML file holds one examination session:
//
//   <Session>
//     <Header>
//       <SessionId/> <PatientId/> <CheckInTime/> <CheckOutTime/>
//     </Header>
//     <Reports>
//       <Report> [<ReportId/>] <ServiceId/> <ReportTime/> <Description/> </Report>
//       ...
//     </Reports>
//   </Session>
//
// Elements outside this set are ignored. Timestamps must carry a UTC
// offset. Input must be UTF-8.

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/detail/rapidxml.hpp>
#include <nlohmann/json.hpp>

#include "cxr/errors.hpp"
#include "cxr/text.hpp"
#include "cxr/time.hpp"

namespace cxr {

struct SessionRecord {
  std::string session_id;
  std::string patient_id;
  Instant check_in_time;
  Instant check_out_time;

  friend bool operator==(const SessionRecord&, const SessionRecord&) = default;
};

struct ReportRecord {
  std::string report_id;
  std::string session_id;
  std::string patient_id;
  std::string service_id;
  Instant report_time;
  std::string description;
  Instant check_in_time;
  Instant check_out_time;

  friend bool operator==(const ReportRecord&, const ReportRecord&) = default;
};

struct SessionFile {
  SessionRecord session;
  std::vector<ReportRecord> reports;

  friend bool operator==(const SessionFile&, const SessionFile&) = default;
};

inline std::string synthesize_report_id(std::string_view session_id, std::size_t index) {
  return std::string(session_id) + "#" + std::to_string(index);
}

namespace detail {

namespace rx = boost::property_tree::detail::rapidxml;
using XmlNode = rx::xml_node<char>;

inline std::size_t line_of(const char* begin, const char* where) {
  return 1 + static_cast<std::size_t>(std::count(begin, where, '\n'));
}

// Rejects any declared encoding other than UTF-8.
inline void check_declared_encoding(std::string_view xml) {
  static const std::regex decl(R"(^\s*<\?xml[^>]*encoding\s*=\s*["']([^"']+)["'])",
                               std::regex::icase);
  auto head = std::string(xml.substr(0, std::min<std::size_t>(xml.size(), 256)));
  std::smatch m;
  if (std::regex_search(head, m, decl)) {
    std::string enc = m[1].str();
    std::transform(enc.begin(), enc.end(), enc.begin(), [](unsigned char c) { return std::tolower(c); });
    if (enc != "utf-8" && enc != "utf8")
      throw MalformedXml("unsupported declared encoding '" + m[1].str() + "'", "/");
  }
}

inline std::string_view node_name(const XmlNode* n) { return {n->name(), n->name_size()}; }

// Concatenated character data (text and CDATA) directly under `n`.
inline std::string node_text(const XmlNode* n) {
  std::string out;
  for (auto* c = n->first_node(); c; c = c->next_sibling()) {
    if (c->type() == rx::node_data || c->type() == rx::node_cdata) out.append(c->value(), c->value_size());
    else if (c->type() == rx::node_element)
      throw SchemaViolation("unexpected child element <" + std::string(node_name(c)) + ">",
                            "");
  }
  return out;
}

// The single child element named `name`; missing or repeated is a schema error.
inline const XmlNode* required_child(const XmlNode* parent, const char* name, const std::string& path) {
  const XmlNode* found = nullptr;
  for (auto* c = parent->first_node(); c; c = c->next_sibling()) {
    if (c->type() != rx::node_element || node_name(c) != name) continue;
    if (found) throw SchemaViolation(std::string("repeated element <") + name + ">", path + "/" + name);
    found = c;
  }
  if (!found) throw SchemaViolation(std::string("missing element <") + name + ">", path + "/" + name);
  return found;
}

inline const XmlNode* optional_child(const XmlNode* parent, const char* name, const std::string& path) {
  const XmlNode* found = nullptr;
  for (auto* c = parent->first_node(); c; c = c->next_sibling()) {
    if (c->type() != rx::node_element || node_name(c) != name) continue;
    if (found) throw SchemaViolation(std::string("repeated element <") + name + ">", path + "/" + name);
    found = c;
  }
  return found;
}

inline std::string text_field(const XmlNode* n, const std::string& path) {
  try {
    return node_text(n);
  } catch (const SchemaViolation& e) {
    throw SchemaViolation("element must hold text only", path);
  }
}

inline std::string id_field(const XmlNode* parent, const char* name, const std::string& path) {
  auto value = trim(text_field(required_child(parent, name, path), path + "/" + name));
  if (value.empty()) throw SchemaViolation(std::string("empty <") + name + ">", path + "/" + name);
  return value;
}

inline Instant time_field(const XmlNode* parent, const char* name, const std::string& path) {
  auto raw = trim(text_field(required_child(parent, name, path), path + "/" + name));
  auto t = parse_instant(raw);
  if (!t) throw BadTimestamp("unparseable instant '" + raw + "'", path + "/" + name);
  return *t;
}

inline void xml_escape(std::string& out, std::string_view s) {
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
}

}  // namespace detail

// Parses one session export. Reports inherit the session header fields and
// keep document order.
inline SessionFile parse_session_file(std::string_view xml_bytes) {
  namespace rx = detail::rx;
  if (!is_valid_utf8(xml_bytes)) throw MalformedXml("input is not valid UTF-8", "/");
  detail::check_declared_encoding(xml_bytes);

  std::vector<char> buffer(xml_bytes.begin(), xml_bytes.end());
  buffer.push_back('\0');
  rx::xml_document<char> doc;
  try {
    doc.parse<rx::parse_validate_closing_tags>(buffer.data());
  } catch (const rx::parse_error& e) {
    auto line = detail::line_of(buffer.data(), e.where<char>());
    throw MalformedXml(std::string(e.what()), "line " + std::to_string(line));
  }

  const detail::XmlNode* root = nullptr;
  for (auto* n = doc.first_node(); n; n = n->next_sibling()) {
    if (n->type() == rx::node_data) {
      if (!trim(std::string_view(n->value(), n->value_size())).empty())
        throw MalformedXml("text outside the root element", "/");
      continue;
    }
    if (n->type() != rx::node_element) continue;
    if (root) throw MalformedXml("more than one root element", "/");
    root = n;
  }
  if (!root) throw MalformedXml("no root element", "/");
  if (detail::node_name(root) != "Session")
    throw SchemaViolation("root element must be <Session>", "/" + std::string(detail::node_name(root)));

  const std::string base = "/Session";
  const auto* header = detail::required_child(root, "Header", base);
  const std::string hpath = base + "/Header";

  SessionFile out;
  auto& s = out.session;
  s.session_id = detail::id_field(header, "SessionId", hpath);
  s.patient_id = detail::id_field(header, "PatientId", hpath);
  s.check_in_time = detail::time_field(header, "CheckInTime", hpath);
  s.check_out_time = detail::time_field(header, "CheckOutTime", hpath);
  if (s.check_out_time < s.check_in_time)
    throw SchemaViolation("check-out precedes check-in", hpath + "/CheckOutTime");

  const auto* reports = detail::required_child(root, "Reports", base);
  std::size_t index = 0;
  for (auto* r = reports->first_node(); r; r = r->next_sibling()) {
    if (r->type() != rx::node_element || detail::node_name(r) != "Report") continue;
    const std::string rpath = base + "/Reports/Report[" + std::to_string(index + 1) + "]";
    ReportRecord rec;
    if (const auto* id = detail::optional_child(r, "ReportId", rpath)) {
      rec.report_id = trim(detail::text_field(id, rpath + "/ReportId"));
      if (rec.report_id.empty()) throw SchemaViolation("empty <ReportId>", rpath + "/ReportId");
    } else {
      rec.report_id = synthesize_report_id(s.session_id, index);
    }
    rec.session_id = s.session_id;
    rec.patient_id = s.patient_id;
    rec.service_id = detail::id_field(r, "ServiceId", rpath);
    rec.report_time = detail::time_field(r, "ReportTime", rpath);
    rec.description =
        detail::text_field(detail::required_child(r, "Description", rpath), rpath + "/Description");
    if (trim(rec.description).empty())
      throw SchemaViolation("empty <Description>", rpath + "/Description");
    rec.check_in_time = s.check_in_time;
    rec.check_out_time = s.check_out_time;
    out.reports.push_back(std::move(rec));
    ++index;
  }
  return out;
}

// Inverse of parse_session_file. Every report is written with an explicit
// <ReportId>.
inline std::string serialize_session(const SessionFile& f) {
  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<Session>\n  <Header>\n";
  auto field = [&out](const char* indent, const char* name, std::string_view value) {
    out += indent;
    out += '<';
    out += name;
    out += '>';
    detail::xml_escape(out, value);
    out += "</";
    out += name;
    out += ">\n";
  };
  field("    ", "SessionId", f.session.session_id);
  field("    ", "PatientId", f.session.patient_id);
  field("    ", "CheckInTime", format_instant(f.session.check_in_time));
  field("    ", "CheckOutTime", format_instant(f.session.check_out_time));
  out += "  </Header>\n  <Reports>\n";
  for (const auto& r : f.reports) {
    out += "    <Report>\n";
    field("      ", "ReportId", r.report_id);
    field("      ", "ServiceId", r.service_id);
    field("      ", "ReportTime", format_instant(r.report_time));
    field("      ", "Description", r.description);
    out += "    </Report>\n";
  }
  out += "  </Reports>\n</Session>\n";
  return out;
}

inline std::vector<ReportRecord> filter_chest_reports(const std::vector<ReportRecord>& reports,
                                                      const std::set<std::string>& whitelist) {
  if (whitelist.empty()) throw EmptyWhitelist();
  std::vector<ReportRecord> kept;
  std::copy_if(reports.begin(), reports.end(), std::back_inserter(kept),
               [&](const ReportRecord& r) { return whitelist.count(r.service_id) != 0; });
  return kept;
}

// One service id per line; blank lines and '#' comments are skipped.
inline std::set<std::string> read_whitelist(std::istream& in) {
  std::set<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto id = trim(line);
    if (!id.empty()) ids.insert(id);
  }
  return ids;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Parses every *.xml file in `dir` in file-name order.
inline std::vector<SessionFile> parse_session_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".xml") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<SessionFile> sessions;
  sessions.reserve(files.size());
  for (const auto& f : files) {
    try {
      sessions.push_back(parse_session_file(read_file_bytes(f)));
    } catch (const MalformedXml& e) {
      throw MalformedXml(f.filename().string() + ": " + e.what(), e.path());
    } catch (const BadTimestamp& e) {
      throw BadTimestamp(f.filename().string() + ": " + e.what(), e.path());
    } catch (const SchemaViolation& e) {
      throw SchemaViolation(f.filename().string() + ": " + e.what(), e.path());
    }
  }
  return sessions;
}

// ---------------------------------------------------------------------------
// reports.jsonl

inline nlohmann::json to_json(const ReportRecord& r) {
  return {{"report_id", r.report_id},
          {"session_id", r.session_id},
          {"patient_id", r.patient_id},
          {"service_id", r.service_id},
          {"report_time", format_instant(r.report_time)},
          {"check_in_time", format_instant(r.check_in_time)},
          {"check_out_time", format_instant(r.check_out_time)},
          {"description", r.description}};
}

inline ReportRecord report_from_json(const nlohmann::json& j) {
  auto instant = [&j](const char* key) {
    auto t = parse_instant(j.at(key).get<std::string>());
    if (!t) throw DataError(std::string("bad timestamp in field ") + key);
    return *t;
  };
  ReportRecord r;
  r.report_id = j.at("report_id").get<std::string>();
  r.session_id = j.at("session_id").get<std::string>();
  r.patient_id = j.at("patient_id").get<std::string>();
  r.service_id = j.at("service_id").get<std::string>();
  r.report_time = instant("report_time");
  r.check_in_time = instant("check_in_time");
  r.check_out_time = instant("check_out_time");
  r.description = j.at("description").get<std::string>();
  return r;
}

inline std::vector<ReportRecord> read_reports_jsonl(std::istream& in) {
  std::vector<ReportRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(report_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw MalformedLine(e.what(), line_no);
    } catch (const DataError& e) {
      throw MalformedLine(e.what(), line_no);
    }
  }
  return out;
}

}  // namespace cxr
