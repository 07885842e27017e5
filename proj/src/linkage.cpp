#include "mnarvam/linkage.hpp"

#include <ostream>

#include "mnarvam/errors.hpp"

namespace mnarvam {

std::pair<int, int> alpha_years(int slot) {
  for (int t = 1; t < kYears; ++t)
    for (int s = 0; s < t; ++s)
      if (alpha_slot(t, s) == slot) return {t, s};
  throw ConsistencyError("alpha slot out of range");
}

std::string alpha_name(int slot) {
  const auto [t, s] = alpha_years(slot);
  return "alpha[" + std::to_string(t + 1) + "," + std::to_string(s + 1) + "]";
}

Design build_design(const ScorePanel& panel) {
  Design d;
  for (int t = 0; t < kYears; ++t) d.teacher_counts[t] = panel.teachers_by_year()[t].size();
  d.rows.reserve(panel.observed_score_count());
  d.student_begin.reserve(panel.size() + 1);

  const auto& students = panel.students();
  for (std::size_t i = 0; i < students.size(); ++i) {
    d.student_begin.push_back(d.rows.size());
    const auto& s = students[i];
    // Links, not scores, drive membership: a known prior teacher counts even
    // when that year's score is missing.
    PerYear<std::optional<std::size_t>> slots;
    for (int t = 0; t < kYears; ++t) {
      if (!s.teacher_links[t]) continue;
      slots[t] = panel.teacher_slot(t, *s.teacher_links[t]);
      if (!slots[t])
        throw ConsistencyError("teacher " + *s.teacher_links[t] + " missing from the year " + std::to_string(t) +
                               " roster");
    }
    for (int t = 0; t < kYears; ++t) {
      if (!s.scores[t]) continue;
      DesignRow row;
      row.student = i;
      row.year = t;
      row.score = *s.scores[t];
      for (int p = 0; p <= t; ++p)
        if (slots[p]) row.contributions.push_back({EffectIndex{p, *slots[p]}, p == t ? kCurrentYearWeight : alpha_slot(t, p)});
      d.rows.push_back(std::move(row));
    }
  }
  d.student_begin.push_back(d.rows.size());
  return d;
}

void write_design_csv(const Design& design, const ScorePanel& panel, std::ostream& out) {
  out << "stuid,year,contributing_year,tchid,weight\n";
  for (const auto& row : design.rows)
    for (const auto& c : row.contributions)
      out << panel.students()[row.student].student_id << ',' << row.year << ',' << c.effect.year << ','
          << panel.teachers_by_year()[c.effect.year][c.effect.teacher_slot] << ','
          << (c.weight_slot == kCurrentYearWeight ? std::string("1") : alpha_name(c.weight_slot)) << '\n';
}

std::vector<ClassroomRoster> classroom_rosters(const ScorePanel& panel) {
  std::vector<ClassroomRoster> out;
  PerYear<std::size_t> offset{};
  for (int t = 0; t < kYears; ++t) {
    offset[t] = out.size();
    for (const auto& id : panel.teachers_by_year()[t]) out.push_back(ClassroomRoster{t, id, {}, 0.0});
  }
  const auto& students = panel.students();
  for (std::size_t i = 0; i < students.size(); ++i)
    for (int t = 0; t < kYears; ++t)
      if (students[i].teacher_links[t]) {
        const auto slot = panel.teacher_slot(t, *students[i].teacher_links[t]);
        out[offset[t] + *slot].students.push_back(i);
      }
  for (auto& r : out) {
    if (r.students.empty()) continue;
    std::size_t complete = 0;
    for (auto i : r.students) complete += students[i].complete() ? 1 : 0;
    r.complete_proportion = static_cast<double>(complete) / static_cast<double>(r.students.size());
  }
  return out;
}

}  // namespace mnarvam
