// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "cxr/csv.hpp"
#include "cxr/errors.hpp"

namespace cxr {

// The five output classes. The first four are anatomical locations;
// Abnormal is the union of those plus findings outside them.
enum class LabelClass : std::uint8_t { ChestWall = 0, Pleura, Parenchyma, Cardio, Abnormal };

inline constexpr std::size_t kNumClasses = 5;
inline constexpr std::size_t kNumLocations = 4;

inline constexpr std::array<LabelClass, kNumClasses> kAllClasses{
    LabelClass::ChestWall, LabelClass::Pleura, LabelClass::Parenchyma, LabelClass::Cardio,
    LabelClass::Abnormal};
inline constexpr std::array<LabelClass, kNumLocations> kLocationClasses{
    LabelClass::ChestWall, LabelClass::Pleura, LabelClass::Parenchyma, LabelClass::Cardio};

inline constexpr std::string_view class_name(LabelClass c) {
  constexpr std::array<std::string_view, kNumClasses> names{"chest_wall", "pleura", "parenchyma",
                                                            "cardio", "abnormal"};
  return names[static_cast<std::size_t>(c)];
}

inline std::optional<LabelClass> parse_class(std::string_view name) {
  for (auto c : kAllClasses)
    if (class_name(c) == name) return c;
  return std::nullopt;
}

enum class LabelSource : std::uint8_t { TemplateNormal, Keyword, Manual, Mapped };

inline constexpr std::string_view source_name(LabelSource s) {
  switch (s) {
    case LabelSource::TemplateNormal: return "template";
    case LabelSource::Keyword: return "keyword";
    case LabelSource::Manual: return "manual";
    case LabelSource::Mapped: return "mapped";
  }
  return "?";
}

inline std::optional<LabelSource> parse_source(std::string_view name) {
  for (auto s : {LabelSource::TemplateNormal, LabelSource::Keyword, LabelSource::Manual,
                 LabelSource::Mapped})
    if (source_name(s) == name) return s;
  return std::nullopt;
}

// One keyword hit. `cls` is Abnormal for other-abnormality keywords;
// `segment` is the zero-based dash-delimited segment the hit fell in.
struct Evidence {
  LabelClass cls;
  std::string keyword;
  std::size_t segment = 0;

  friend bool operator==(const Evidence&, const Evidence&) = default;
};

struct LabelVector {
  std::array<std::uint8_t, kNumClasses> bits{};
  LabelSource source = LabelSource::Keyword;
  std::vector<Evidence> evidence;

  std::uint8_t operator[](LabelClass c) const { return bits[static_cast<std::size_t>(c)]; }
  std::uint8_t& operator[](LabelClass c) { return bits[static_cast<std::size_t>(c)]; }

  bool any_location() const {
    for (auto c : kLocationClasses)
      if ((*this)[c]) return true;
    return false;
  }

  // abnormal must be set whenever a location is; template-normal vectors
  // are all zero.
  bool valid() const {
    for (auto b : bits)
      if (b > 1) return false;
    if (any_location() && !(*this)[LabelClass::Abnormal]) return false;
    if (source == LabelSource::TemplateNormal)
      for (auto b : bits)
        if (b) return false;
    return true;
  }

  friend bool operator==(const LabelVector&, const LabelVector&) = default;
};

inline LabelVector make_labels(std::uint8_t chest_wall, std::uint8_t pleura, std::uint8_t parenchyma,
                               std::uint8_t cardio, std::uint8_t abnormal,
                               LabelSource source = LabelSource::Manual) {
  LabelVector v;
  v.bits = {chest_wall, pleura, parenchyma, cardio, abnormal};
  v.source = source;
  return v;
}

// ---------------------------------------------------------------------------
// Label CSV: study_uid,chest_wall,pleura,parenchyma,cardio,abnormal,source

inline constexpr std::string_view kLabelCsvHeader =
    "study_uid,chest_wall,pleura,parenchyma,cardio,abnormal,source";

struct LabelRow {
  std::string study_uid;
  LabelVector labels;

  friend bool operator==(const LabelRow&, const LabelRow&) = default;
};

inline void write_label_header(std::ostream& out) { out << kLabelCsvHeader << '\n'; }

inline void write_label_row(std::ostream& out, const LabelRow& row) {
  out << csv::escape(row.study_uid);
  for (auto b : row.labels.bits) out << ',' << static_cast<int>(b);
  out << ',' << source_name(row.labels.source) << '\n';
}

inline void write_label_csv(std::ostream& out, const std::vector<LabelRow>& rows) {
  write_label_header(out);
  for (const auto& r : rows) write_label_row(out, r);
}

// Reads a label CSV. Columns are located by name so column order is free;
// the source column is optional on input.
inline std::vector<LabelRow> read_label_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!csv::next_line(in, line, line_no)) throw HeaderMismatch("label CSV is empty");
  auto header = csv::split_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  if (!col.count("study_uid")) throw HeaderMismatch("label CSV lacks study_uid column");
  std::array<std::size_t, kNumClasses> class_col{};
  for (auto c : kAllClasses) {
    auto it = col.find(std::string(class_name(c)));
    if (it == col.end()) throw HeaderMismatch("label CSV lacks column " + std::string(class_name(c)));
    class_col[static_cast<std::size_t>(c)] = it->second;
  }
  auto source_it = col.find("source");

  std::vector<LabelRow> rows;
  while (csv::next_line(in, line, line_no)) {
    auto f = csv::split_line(line);
    if (f.size() != header.size())
      throw MalformedLine("expected " + std::to_string(header.size()) + " fields", line_no);
    LabelRow row;
    row.study_uid = f[col["study_uid"]];
    for (auto c : kAllClasses) {
      const auto& v = f[class_col[static_cast<std::size_t>(c)]];
      if (v != "0" && v != "1") throw BadValue(line_no, std::string(class_name(c)), v);
      row.labels[c] = static_cast<std::uint8_t>(v == "1");
    }
    row.labels.source = LabelSource::Manual;
    if (source_it != col.end()) {
      auto s = parse_source(f[source_it->second]);
      if (!s) throw BadValue(line_no, "source", f[source_it->second]);
      row.labels.source = *s;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace cxr
