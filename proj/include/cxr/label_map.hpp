// SPDX-License-Identifier: Apache-2.0
#pragma once

// Collapses the 14 CheXpert observations onto the five location classes.
//
//   observation                 chest_wall pleura parenchyma cardio abnormal
//   No Finding                      .        .        .         .       .
//   Enlarged Cardiomediastinum      .        .        .         P       P
//   Cardiomegaly                    .        .        .         P       P
//   Lung Lesion .. Atelectasis      .        .        P         .       P
//   Pneumothorax, Pleural *         .        P        .         .       P
//   Fracture                        P        .        .         .       P
//   Support Devices                 .        .        .         .       P
//
// Final labels are the OR over the rows of all positive observations.

#include <array>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "cxr/csv.hpp"
#include "cxr/errors.hpp"
#include "cxr/labels.hpp"

namespace cxr {

inline constexpr std::size_t kNumObservations = 14;

inline constexpr std::array<std::string_view, kNumObservations> kObservations{
    "No Finding",   "Enlarged Cardiomediastinum", "Cardiomegaly",  "Lung Lesion",
    "Lung Opacity", "Edema",                      "Consolidation", "Pneumonia",
    "Atelectasis",  "Pneumothorax",               "Pleural Effusion", "Pleural Other",
    "Fracture",     "Support Devices"};

// The location class an observation maps to, if any. Every observation
// except No Finding also sets abnormal.
inline std::optional<LabelClass> observation_location(std::string_view name) {
  if (name == "Enlarged Cardiomediastinum" || name == "Cardiomegaly") return LabelClass::Cardio;
  if (name == "Lung Lesion" || name == "Lung Opacity" || name == "Edema" || name == "Consolidation" ||
      name == "Pneumonia" || name == "Atelectasis")
    return LabelClass::Parenchyma;
  if (name == "Pneumothorax" || name == "Pleural Effusion" || name == "Pleural Other") return LabelClass::Pleura;
  if (name == "Fracture") return LabelClass::ChestWall;
  return std::nullopt;
}

inline bool is_observation(std::string_view name) {
  for (auto o : kObservations)
    if (o == name) return true;
  return false;
}

enum class ObservationValue { Positive, Negative, Uncertain, Blank };
enum class UncertainPolicy { AsNegative, AsPositive };

struct ChexpertRow {
  std::string identifier;
  std::map<std::string, ObservationValue> observations;
};

// Emits advisory notes, e.g. No Finding positive alongside a finding.
using WarningSink = std::function<void(const std::string&)>;

inline LabelVector map_row(const ChexpertRow& row, UncertainPolicy policy = UncertainPolicy::AsNegative,
                           const WarningSink& warn = {}) {
  for (const auto& [name, value] : row.observations)
    if (!is_observation(name)) throw UnknownObservation(name);
  for (auto name : kObservations)
    if (!row.observations.count(std::string(name))) throw MissingObservation(std::string(name));

  LabelVector v;
  v.source = LabelSource::Mapped;
  bool no_finding = false, any_finding = false;
  for (const auto& [name, value] : row.observations) {
    bool positive = value == ObservationValue::Positive ||
                    (value == ObservationValue::Uncertain && policy == UncertainPolicy::AsPositive);
    if (!positive) continue;
    if (name == "No Finding") {
      no_finding = true;
      continue;
    }
    any_finding = true;
    if (auto loc = observation_location(name)) v[*loc] = 1;
    v[LabelClass::Abnormal] = 1;
  }
  if (no_finding && any_finding && warn)
    warn(row.identifier + ": No Finding is positive together with a finding; the finding wins");
  return v;
}

inline std::optional<ObservationValue> parse_observation_value(std::string_view s) {
  if (s.empty()) return ObservationValue::Blank;
  if (s == "1.0" || s == "1") return ObservationValue::Positive;
  if (s == "0.0" || s == "0") return ObservationValue::Negative;
  if (s == "-1.0" || s == "-1") return ObservationValue::Uncertain;
  return std::nullopt;
}

// Streams a CheXpert-style CSV into the label CSV schema with
// source=mapped. Columns are found by name. The identifier is the "Path"
// column, else "study_uid", else the first non-observation column.
// Returns the number of rows written.
inline std::size_t map_file(std::istream& in, std::ostream& out, UncertainPolicy policy = UncertainPolicy::AsNegative,
                            const WarningSink& warn = {}) {
  std::string line;
  std::size_t line_no = 0;
  if (!csv::next_line(in, line, line_no)) throw HeaderMismatch("input is empty");
  auto header = csv::split_line(line);
  std::array<std::optional<std::size_t>, kNumObservations> obs_col;
  std::optional<std::size_t> id_col, first_other;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto& h = header[i];
    bool matched = false;
    for (std::size_t k = 0; k < kNumObservations; ++k)
      if (kObservations[k] == h) {
        obs_col[k] = i;
        matched = true;
      }
    if (matched) continue;
    if (h == "Path") id_col = i;
    else if (h == "study_uid" && !id_col) id_col = i;
    else if (!first_other) first_other = i;
  }
  for (std::size_t k = 0; k < kNumObservations; ++k)
    if (!obs_col[k]) throw HeaderMismatch("missing observation column '" + std::string(kObservations[k]) + "'");
  if (!id_col) id_col = first_other;
  if (!id_col) throw HeaderMismatch("no identifier column");

  write_label_header(out);
  std::size_t rows = 0;
  while (csv::next_line(in, line, line_no)) {
    auto f = csv::split_line(line);
    if (f.size() != header.size()) throw MalformedLine("wrong field count", line_no);
    ChexpertRow row;
    row.identifier = f[*id_col];
    for (std::size_t k = 0; k < kNumObservations; ++k) {
      const auto& raw = f[*obs_col[k]];
      auto value = parse_observation_value(raw);
      if (!value) throw BadValue(line_no, std::string(kObservations[k]), raw);
      row.observations.emplace(kObservations[k], *value);
    }
    write_label_row(out, {row.identifier, map_row(row, policy, warn)});
    ++rows;
  }
  return rows;
}

}  // namespace cxr
