#ifndef GPDPM_CSV_HPP
#define GPDPM_CSV_HPP

#include <charconv>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "gpdpm/data_model.hpp"

namespace gpdpm {

namespace csv {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline bool is_missing(std::string_view s) {
  return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan";
}

/// Shortest text form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace csv

/// Parses long-format rows `subject_id,time,biomarker,value` from a stream.
/// Absent rows are missing data; an empty or `NA` value is treated the same way.
/// Subjects whose every row is missing are reported through `empty_subjects`.
inline Cohort parse_long_csv(std::istream& in, const std::string& source = "<stream>",
                             std::vector<std::string>* empty_subjects = nullptr) {
  Cohort cohort;
  std::map<std::string, std::size_t> subject_index;
  std::map<std::string, std::size_t> individual_pos;
  std::vector<std::string> all_subjects;
  std::set<std::tuple<std::string, double, std::string>> seen;

  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto fields = csv::split(line);
    if (!header_seen) {
      header_seen = true;
      if (fields.size() == 4 && fields[0] == "subject_id") continue;
    }
    if (fields.size() != 4)
      throw InputError(source + ":" + std::to_string(line_no) + ": expected 4 fields, got " +
                       std::to_string(fields.size()));
    const std::string subject(fields[0]);
    const std::string biomarker(fields[2]);
    if (subject.empty() || biomarker.empty())
      throw InputError(source + ":" + std::to_string(line_no) + ": empty subject or biomarker");
    double time = 0.0;
    if (!csv::parse_double(fields[1], time) || !std::isfinite(time))
      throw InputError(source + ":" + std::to_string(line_no) + ": non-numeric time '" +
                       std::string(fields[1]) + "'");

    if (!seen.emplace(subject, time, biomarker).second)
      throw InputError(source + ":" + std::to_string(line_no) + ": duplicate row for (" + subject +
                       ", " + std::string(fields[1]) + ", " + biomarker + ")");

    if (!subject_index.count(subject)) {
      subject_index[subject] = all_subjects.size();
      all_subjects.push_back(subject);
    }
    if (csv::is_missing(fields[3])) continue;
    double value = 0.0;
    if (!csv::parse_double(fields[3], value) || !std::isfinite(value))
      throw InputError(source + ":" + std::to_string(line_no) + ": non-numeric value '" +
                       std::string(fields[3]) + "'");

    std::size_t b = cohort.biomarker_index(biomarker);
    if (b == cohort.num_biomarkers()) {
      BiomarkerSpec spec;
      spec.name = biomarker;
      cohort.biomarkers.push_back(spec);
    }
    // Individuals are created lazily so fully-missing subjects never appear.
    auto [pos, inserted] = individual_pos.try_emplace(subject, cohort.individuals.size());
    if (inserted) cohort.individuals.push_back(IndividualRecord{subject, {}, 0.0, {}});
    cohort.individuals[pos->second].observations.push_back(Observation{b, time, value});
  }
  if (line_no == 0 || (!header_seen))
    throw InputError(source + ": empty file");
  if (cohort.individuals.empty() && all_subjects.empty())
    throw InputError(source + ": no data rows");

  // Restore first-appearance order of subjects.
  std::stable_sort(cohort.individuals.begin(), cohort.individuals.end(),
                   [&](const IndividualRecord& a, const IndividualRecord& b) {
                     return subject_index.at(a.id) < subject_index.at(b.id);
                   });
  if (empty_subjects) {
    empty_subjects->clear();
    for (const auto& s : all_subjects) {
      if (!individual_pos.count(s)) empty_subjects->push_back(s);
    }
  }
  return cohort;
}

inline Cohort load_long_csv(const std::string& path, std::vector<std::string>* empty_subjects = nullptr) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return parse_long_csv(in, path, empty_subjects);
}

inline void write_long_csv(std::ostream& out, const Cohort& cohort) {
  out << "subject_id,time,biomarker,value\n";
  for (const auto& ind : cohort.individuals)
    for (const auto& o : ind.observations)
      out << ind.id << ',' << csv::format_double(o.time) << ',' << cohort.biomarkers[o.biomarker].name
          << ',' << csv::format_double(o.value) << '\n';
}

inline void save_long_csv(const std::string& path, const Cohort& cohort) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  write_long_csv(out, cohort);
}

}  // namespace gpdpm

#endif
