#include "mnarvam/score_panel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "mnarvam/csv.hpp"
#include "mnarvam/errors.hpp"

namespace mnarvam {

double standardize(double raw_score, double offset, double scale) {
  if (!(scale > 0.0)) throw ConfigError("standardization scale must be positive");
  return (raw_score - offset) / scale;
}

StudentRecord make_student(std::string id, PerYear<std::optional<double>> scores,
                           PerYear<std::optional<std::string>> links) {
  StudentRecord r;
  r.student_id = std::move(id);
  r.scores = std::move(scores);
  r.teacher_links = std::move(links);
  for (int t = 0; t < kYears; ++t) {
    r.response_flags[t] = r.scores[t].has_value();
    r.n_observed += r.response_flags[t] ? 1 : 0;
  }
  return r;
}

bool operator==(const StudentRecord& a, const StudentRecord& b) {
  return a.student_id == b.student_id && a.scores == b.scores && a.teacher_links == b.teacher_links &&
         a.response_flags == b.response_flags && a.n_observed == b.n_observed;
}

namespace {

void validate_record(const StudentRecord& r) {
  if (r.student_id.empty()) throw ValidationError("student with empty id");
  int n = 0;
  for (int t = 0; t < kYears; ++t) {
    if (r.response_flags[t] != r.scores[t].has_value())
      throw ValidationError("student " + r.student_id + ": response flag and score disagree in year " +
                            std::to_string(t));
    if (r.scores[t] && !std::isfinite(*r.scores[t]))
      throw ValidationError("student " + r.student_id + ": non-finite score");
    if (r.teacher_links[t] && r.teacher_links[t]->empty())
      throw ValidationError("student " + r.student_id + ": empty teacher id");
    n += r.response_flags[t] ? 1 : 0;
  }
  if (n != r.n_observed) throw ValidationError("student " + r.student_id + ": n_observed mismatch");
  if (n == 0) throw ValidationError("student " + r.student_id + " has no observed score");
}

}  // namespace

ScorePanel::ScorePanel(std::vector<StudentRecord> students, std::optional<Standardization> standardization)
    : students_(std::move(students)), standardization_(standardization) {
  PerYear<std::set<std::string>> ids;
  for (const auto& s : students_)
    for (int t = 0; t < kYears; ++t)
      if (s.teacher_links[t]) ids[t].insert(*s.teacher_links[t]);
  for (int t = 0; t < kYears; ++t) teachers_by_year_[t].assign(ids[t].begin(), ids[t].end());
  index_teachers();
}

ScorePanel::ScorePanel(std::vector<StudentRecord> students, PerYear<std::vector<std::string>> teachers_by_year,
                       std::optional<Standardization> standardization)
    : students_(std::move(students)),
      teachers_by_year_(std::move(teachers_by_year)),
      standardization_(standardization) {
  index_teachers();
}

void ScorePanel::index_teachers() {
  std::set<std::string> seen_students;
  for (const auto& s : students_) {
    validate_record(s);
    if (!seen_students.insert(s.student_id).second)
      throw ValidationError("duplicate student id " + s.student_id);
  }
  for (int t = 0; t < kYears; ++t) {
    teacher_index_[t].clear();
    for (std::size_t j = 0; j < teachers_by_year_[t].size(); ++j)
      if (!teacher_index_[t].emplace(teachers_by_year_[t][j], j).second)
        throw ValidationError("duplicate teacher id " + teachers_by_year_[t][j] + " in year " + std::to_string(t));
  }
  for (const auto& s : students_)
    for (int t = 0; t < kYears; ++t)
      if (s.teacher_links[t] && !teacher_index_[t].count(*s.teacher_links[t]))
        throw ValidationError("teacher " + *s.teacher_links[t] + " of student " + s.student_id +
                              " is not on the year " + std::to_string(t) + " roster");
}

std::optional<std::size_t> ScorePanel::teacher_slot(int year, const std::string& teacher_id) const {
  const auto& idx = teacher_index_.at(year);
  auto it = idx.find(teacher_id);
  if (it == idx.end()) return std::nullopt;
  return it->second;
}

std::size_t ScorePanel::observed_score_count() const {
  std::size_t n = 0;
  for (const auto& s : students_) n += static_cast<std::size_t>(s.n_observed);
  return n;
}

std::optional<std::size_t> ScorePanel::find_student(const std::string& student_id) const {
  for (std::size_t i = 0; i < students_.size(); ++i)
    if (students_[i].student_id == student_id) return i;
  return std::nullopt;
}

bool operator==(const ScorePanel& a, const ScorePanel& b) {
  return a.students_ == b.students_ && a.teachers_by_year_ == b.teachers_by_year_;
}

// ---------------------------------------------------------------------------
// ingestion

std::size_t IngestReport::students_dropped_total() const {
  std::size_t n = 0;
  for (const auto& [reason, count] : students_dropped) n += count;
  return n;
}

std::string IngestReport::to_text() const {
  std::ostringstream os;
  os << "rows read:              " << rows_read << '\n'
     << "rows accepted:          " << rows_accepted << '\n'
     << "malformed rows:         " << malformed_rows << '\n'
     << "merged duplicate rows:  " << merged_duplicate_rows << '\n'
     << "students seen:          " << students_seen << '\n'
     << "students admitted:      " << students_admitted << '\n'
     << "students dropped:       " << students_dropped_total() << '\n';
  for (const auto& [reason, count] : students_dropped) os << "  " << reason << ": " << count << '\n';
  for (const auto& e : row_errors) os << "  " << e << '\n';
  return os.str();
}

std::string IngestReport::to_key_value() const {
  std::ostringstream os;
  os << "rows_read=" << rows_read << '\n'
     << "rows_accepted=" << rows_accepted << '\n'
     << "malformed_rows=" << malformed_rows << '\n'
     << "merged_duplicate_rows=" << merged_duplicate_rows << '\n'
     << "students_seen=" << students_seen << '\n'
     << "students_admitted=" << students_admitted << '\n'
     << "students_dropped=" << students_dropped_total() << '\n';
  for (const auto& [reason, count] : students_dropped) os << "dropped." << reason << '=' << count << '\n';
  return os.str();
}

namespace {

struct PendingStudent {
  std::string id;
  PerYear<std::optional<double>> scores;
  PerYear<std::optional<std::string>> links;
  bool conflict = false;
};

}  // namespace

LoadResult load_panel(std::istream& in, const LoadOptions& options) {
  if (options.scale == ScoreScale::raw && !(options.standardization.scale > 0.0))
    throw ConfigError("standardization scale must be positive");

  LoadResult result;
  IngestReport& report = result.report;

  std::string line;
  std::vector<std::string> header;
  std::size_t line_no = 0;
  while (header.empty() && std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    header = csv::split_line(line);
  }
  if (header.empty()) {
    result.panel = ScorePanel(std::vector<StudentRecord>{});
    return result;
  }

  auto find = [&](const char* name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ValidationError(std::string("input header lacks column '") + name + "'");
  };
  const std::size_t c_stu = find("stuid"), c_tch = find("tchid"), c_year = find("year"), c_y = find("Y");
  const std::size_t width = std::max({c_stu, c_tch, c_year, c_y}) + 1;

  std::vector<PendingStudent> pending;
  std::unordered_map<std::string, std::size_t> position;

  auto malformed = [&](const std::string& why) {
    const std::string msg = "line " + std::to_string(line_no) + ": " + why;
    if (options.strict) throw ValidationError(msg);
    ++report.malformed_rows;
    report.row_errors.push_back(msg);
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++report.rows_read;
    const auto fields = csv::split_line(line);
    if (fields.size() < width) {
      malformed("expected at least " + std::to_string(width) + " fields");
      continue;
    }
    if (csv::is_missing(fields[c_stu])) {
      malformed("missing stuid");
      continue;
    }
    const auto year = csv::parse_int(fields[c_year]);
    if (!year || *year < 0 || *year >= kYears) {
      malformed("year must be an integer in 0..4");
      continue;
    }
    std::optional<double> score;
    if (!csv::is_missing(fields[c_y])) {
      score = csv::parse_double(fields[c_y]);
      if (!score) {
        malformed("unparseable score '" + fields[c_y] + "'");
        continue;
      }
      if (options.scale == ScoreScale::raw)
        score = standardize(*score, options.standardization.offset, options.standardization.scale);
    }
    std::optional<std::string> teacher;
    if (!csv::is_missing(fields[c_tch])) teacher = fields[c_tch];

    ++report.rows_accepted;
    const std::string& id = fields[c_stu];
    auto [it, inserted] = position.emplace(id, pending.size());
    if (inserted) pending.push_back(PendingStudent{id, {}, {}, false});
    PendingStudent& p = pending[it->second];
    const int t = static_cast<int>(*year);
    bool duplicate = false;
    if (score) {
      if (p.scores[t]) {
        duplicate = true;
        if (*p.scores[t] != *score) p.conflict = true;
      }
      p.scores[t] = score;
    }
    if (teacher) {
      if (p.links[t]) {
        duplicate = true;
        if (*p.links[t] != *teacher) p.conflict = true;
      }
      p.links[t] = teacher;
    }
    if (duplicate && !p.conflict) ++report.merged_duplicate_rows;
  }

  std::vector<StudentRecord> admitted;
  report.students_seen = pending.size();
  for (auto& p : pending) {
    if (p.conflict) {
      if (options.strict) throw ValidationError("student " + p.id + " has conflicting duplicate records");
      ++report.students_dropped["conflicting_duplicate"];
      continue;
    }
    auto rec = make_student(p.id, p.scores, p.links);
    if (rec.n_observed == 0) {
      ++report.students_dropped["no_valid_score"];
      continue;
    }
    admitted.push_back(std::move(rec));
  }
  report.students_admitted = admitted.size();
  std::optional<Standardization> applied;
  if (options.scale == ScoreScale::raw) applied = options.standardization;
  result.panel = ScorePanel(std::move(admitted), applied);
  return result;
}

LoadResult load_panel_file(const std::string& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open panel file '" + path + "'");
  return load_panel(in, options);
}

void write_panel(const ScorePanel& panel, std::ostream& out) {
  out << "stuid,tchid,year,Y\n";
  for (const auto& s : panel.students())
    for (int t = 0; t < kYears; ++t) {
      if (!s.scores[t] && !s.teacher_links[t]) continue;
      out << s.student_id << ',' << (s.teacher_links[t] ? *s.teacher_links[t] : std::string("NA")) << ',' << t
          << ',' << (s.scores[t] ? csv::fixed(*s.scores[t], 6) : std::string("NA")) << '\n';
    }
}

void write_panel_file(const ScorePanel& panel, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write panel file '" + path + "'");
  write_panel(panel, out);
}

std::vector<NobsCell> nobs_summary(const ScorePanel& panel) {
  std::array<std::array<double, kYears>, kYears> sum{};
  std::array<std::array<std::size_t, kYears>, kYears> count{};
  for (const auto& s : panel.students())
    for (int t = 0; t < kYears; ++t)
      if (s.scores[t]) {
        sum[t][s.n_observed - 1] += *s.scores[t];
        ++count[t][s.n_observed - 1];
      }
  std::vector<NobsCell> cells;
  for (int t = 0; t < kYears; ++t)
    for (int n = 0; n < kYears; ++n) {
      NobsCell c{t + 1, n + 1, count[t][n], std::nullopt};
      if (c.count) c.mean = sum[t][n] / static_cast<double>(c.count);
      cells.push_back(c);
    }
  return cells;
}

void write_nobs_summary(const std::vector<NobsCell>& cells, std::ostream& out) {
  out << "grade,n_observed,count,mean\n";
  for (const auto& c : cells)
    out << c.grade << ',' << c.n_observed << ',' << c.count << ',' << (c.mean ? csv::fixed(*c.mean, 6) : "") << '\n';
}

}  // namespace mnarvam
