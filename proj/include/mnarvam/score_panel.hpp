#pragma once

// Longitudinal score panel: one record per student, five annual slots.
//
// Year slots are indexed 0..4 internally, which is also the `year` column of
// the input CSV; the grade tested in slot t is t + 1.

#include <array>
#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace mnarvam {

inline constexpr int kYears = 5;

template <typename T>
using PerYear = std::array<T, kYears>;

struct Standardization {
  double offset = 400.0;
  double scale = 40.0;
};

/// (raw - offset) / scale. Throws ConfigError when scale <= 0.
double standardize(double raw_score, double offset, double scale);

struct StudentRecord {
  std::string student_id;
  PerYear<std::optional<double>> scores;
  /// An observed score may lack a teacher link; a link may exist without a score.
  PerYear<std::optional<std::string>> teacher_links;
  PerYear<bool> response_flags{};
  int n_observed = 0;

  bool complete() const { return n_observed == kYears; }
};

/// Builds a record from score/link slots, deriving flags and n_observed.
StudentRecord make_student(std::string id, PerYear<std::optional<double>> scores,
                           PerYear<std::optional<std::string>> links);

/// Immutable after construction. Teacher identifiers are scoped by year, so a
/// classroom-year is its own effect even if an id string repeats across years.
class ScorePanel {
 public:
  ScorePanel() = default;

  /// Validates every record and derives teachers_by_year (sorted ids).
  explicit ScorePanel(std::vector<StudentRecord> students,
                      std::optional<Standardization> standardization = std::nullopt);

  /// Same, but with an explicit roster; every referenced teacher must be listed.
  ScorePanel(std::vector<StudentRecord> students, PerYear<std::vector<std::string>> teachers_by_year,
             std::optional<Standardization> standardization = std::nullopt);

  const std::vector<StudentRecord>& students() const { return students_; }
  std::size_t size() const { return students_.size(); }
  bool empty() const { return students_.empty(); }

  const PerYear<std::vector<std::string>>& teachers_by_year() const { return teachers_by_year_; }
  std::optional<std::size_t> teacher_slot(int year, const std::string& teacher_id) const;

  /// Set when raw scores were standardized at load time.
  const std::optional<Standardization>& standardization() const { return standardization_; }

  std::size_t observed_score_count() const;
  std::optional<std::size_t> find_student(const std::string& student_id) const;

  friend bool operator==(const ScorePanel& a, const ScorePanel& b);

 private:
  void index_teachers();

  std::vector<StudentRecord> students_;
  PerYear<std::vector<std::string>> teachers_by_year_;
  PerYear<std::unordered_map<std::string, std::size_t>> teacher_index_;
  std::optional<Standardization> standardization_;
};

bool operator==(const StudentRecord& a, const StudentRecord& b);

enum class ScoreScale { standardized, raw };

struct LoadOptions {
  ScoreScale scale = ScoreScale::standardized;
  Standardization standardization{};
  /// Abort on the first malformed row instead of collecting it.
  bool strict = false;
};

struct IngestReport {
  std::size_t rows_read = 0;
  std::size_t rows_accepted = 0;
  std::size_t malformed_rows = 0;
  std::size_t merged_duplicate_rows = 0;
  std::size_t students_seen = 0;
  std::size_t students_admitted = 0;
  std::map<std::string, std::size_t> students_dropped;  // reason -> count
  std::vector<std::string> row_errors;

  std::size_t students_dropped_total() const;
  std::string to_text() const;
  /// One `key=value` per line; stable key order.
  std::string to_key_value() const;
};

struct LoadResult {
  ScorePanel panel;
  IngestReport report;
};

/// Reads the `stuid,tchid,year,Y` format. Missing values are empty, `NA`, `.` or `NaN`.
LoadResult load_panel(std::istream& in, const LoadOptions& options = {});
LoadResult load_panel_file(const std::string& path, const LoadOptions& options = {});

/// Writes one row per student-year that has a score or a link. Scores use
/// fixed six-decimal formatting so that write -> load is exact.
void write_panel(const ScorePanel& panel, std::ostream& out);
void write_panel_file(const ScorePanel& panel, const std::string& path);

struct NobsCell {
  int grade = 0;       // 1..5
  int n_observed = 0;  // 1..5
  std::size_t count = 0;
  std::optional<double> mean;  // empty when count == 0
};

/// Mean standardized score by grade and by the student's number of observed scores.
std::vector<NobsCell> nobs_summary(const ScorePanel& panel);
void write_nobs_summary(const std::vector<NobsCell>& cells, std::ostream& out);

}  // namespace mnarvam
