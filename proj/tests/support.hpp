// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "cxr/his_ingest.hpp"
#include "cxr/pacs_ingest.hpp"
#include "cxr/time.hpp"

namespace cxrtest {

namespace fs = std::filesystem;

// Scratch directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "cxrtest-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline fs::path data_dir() { return fs::path(CXR_DATA_DIR); }
inline fs::path fixture_dir() { return data_dir() / "fixtures"; }

inline void write_text(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline cxr::Instant at(std::string_view iso) {
  auto t = cxr::parse_instant(iso);
  if (!t) throw std::invalid_argument("bad test timestamp: " + std::string(iso));
  return *t;
}

inline cxr::ReportRecord report(std::string id, std::string patient, std::string_view time, std::string description,
                                std::string_view check_in, std::string_view check_out) {
  cxr::ReportRecord r;
  r.report_id = std::move(id);
  r.session_id = "S-" + r.report_id;
  r.patient_id = std::move(patient);
  r.service_id = "18.0075.0028";
  r.report_time = at(time);
  r.description = std::move(description);
  r.check_in_time = at(check_in);
  r.check_out_time = at(check_out);
  return r;
}

inline cxr::StudyRecord study(std::string uid, std::string patient, std::string_view time,
                              std::optional<double> pa = 0.9) {
  cxr::StudyRecord s;
  s.study_uid = std::move(uid);
  s.patient_id = std::move(patient);
  s.study_time = at(time);
  s.pa_probability = pa;
  s.image_ref = "img://" + s.study_uid;
  return s;
}

}  // namespace cxrtest
