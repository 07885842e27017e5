#pragma once

// Sequential multi-membership design: each observed score (i, t) is linked to
// the classroom effects of every year t* <= t in which the student's teacher
// is known. Unknown teachers contribute nothing.

#include <cstddef>
#include <utility>
#include <iosfwd>
#include <string>
#include <vector>

#include "mnarvam/score_panel.hpp"

namespace mnarvam {

inline constexpr int kAlphaCount = kYears * (kYears - 1) / 2;

/// Slot of the out-year weight alpha[t, t*] for 0 <= t* < t < 5.
/// Order: (2,1), (3,1), (3,2), (4,1), ..., (5,4) in grade numbering.
constexpr int alpha_slot(int year, int prior_year) { return year * (year - 1) / 2 + prior_year; }
/// (year, prior_year) for a slot.
std::pair<int, int> alpha_years(int slot);
/// "alpha[5,4]" (grades).
std::string alpha_name(int slot);

struct EffectIndex {
  int year = 0;
  std::size_t teacher_slot = 0;

  friend bool operator==(const EffectIndex&, const EffectIndex&) = default;
};

/// Weight slot -1 is the unit weight of the current-year teacher.
inline constexpr int kCurrentYearWeight = -1;

struct Contribution {
  EffectIndex effect;
  int weight_slot = kCurrentYearWeight;

  friend bool operator==(const Contribution&, const Contribution&) = default;
};

struct DesignRow {
  std::size_t student = 0;  // position in panel.students()
  int year = 0;
  double score = 0.0;
  std::vector<Contribution> contributions;  // ascending prior year

  friend bool operator==(const DesignRow&, const DesignRow&) = default;
};

/// Rows are student-major: all rows of a student are contiguous, years ascending.
struct Design {
  std::vector<DesignRow> rows;
  PerYear<std::size_t> teacher_counts{};
  /// rows of student i are [student_begin[i], student_begin[i + 1]).
  std::vector<std::size_t> student_begin;

  friend bool operator==(const Design&, const Design&) = default;
};

Design build_design(const ScorePanel& panel);

/// Debug dump: student, year, contributing year, teacher id, weight-slot name.
void write_design_csv(const Design& design, const ScorePanel& panel, std::ostream& out);

struct ClassroomRoster {
  int year = 0;
  std::string teacher_id;
  std::vector<std::size_t> students;
  double complete_proportion = 0.0;  // share of linked students with all five scores
};

/// One roster per teacher-year, in teachers_by_year order.
std::vector<ClassroomRoster> classroom_rosters(const ScorePanel& panel);

}  // namespace mnarvam
