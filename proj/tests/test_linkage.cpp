#include <doctest.h>

#include <algorithm>
#include <random>

#include "helpers.hpp"
#include "mnarvam/errors.hpp"
#include "mnarvam/linkage.hpp"

using namespace mnarvam;
using testing::Slot;
using testing::student;

TEST_CASE("alpha slots") {
  CHECK(alpha_slot(1, 0) == 0);
  CHECK(alpha_slot(4, 3) == 9);
  CHECK(alpha_name(0) == "alpha[2,1]");
  CHECK(alpha_name(9) == "alpha[5,4]");
  for (int s = 0; s < kAlphaCount; ++s) {
    const auto [t, p] = alpha_years(s);
    CHECK(alpha_slot(t, p) == s);
  }
}

TEST_CASE("complete history: year-5 row carries four out-year weights and the unit weight") {
  const ScorePanel panel(std::vector<StudentRecord>{
      student("s", {Slot{{1, "a"}}, Slot{{2, "b"}}, Slot{{3, "c"}}, Slot{{4, "d"}}, Slot{{5, "e"}}})});
  const auto d = build_design(panel);
  REQUIRE(d.rows.size() == 5);
  const auto& row = d.rows.back();
  REQUIRE(row.contributions.size() == 5);
  for (int p = 0; p < 4; ++p) CHECK(row.contributions[p].weight_slot == alpha_slot(4, p));
  CHECK(row.contributions[4].weight_slot == kCurrentYearWeight);
}

TEST_CASE("drop-in at grade 3 has one contribution") {
  const ScorePanel panel(std::vector<StudentRecord>{student("s", {Slot{}, Slot{}, Slot{{3, "c"}}})});
  const auto d = build_design(panel);
  REQUIRE(d.rows.size() == 1);
  CHECK(d.rows[0].contributions.size() == 1);
  CHECK(d.rows[0].contributions[0].effect.year == 2);
}

TEST_CASE("links, not scores, drive contributions") {
  // grade 2 score without a teacher; grade 1 teacher known, grade 3 score with teacher
  PerYear<std::optional<double>> scores{1.0, 2.0, 3.0, std::nullopt, std::nullopt};
  PerYear<std::optional<std::string>> links{"a", std::nullopt, "c", std::nullopt, std::nullopt};
  const ScorePanel panel(std::vector<StudentRecord>{make_student("s", scores, links)});
  const auto d = build_design(panel);
  REQUIRE(d.rows.size() == 3);
  REQUIRE(d.rows[1].contributions.size() == 1);
  CHECK(d.rows[1].contributions[0].weight_slot == alpha_slot(1, 0));
  CHECK(d.rows[2].contributions.size() == 2);

  // link without a score still feeds later years
  PerYear<std::optional<double>> s2{std::nullopt, 2.0, std::nullopt, std::nullopt, std::nullopt};
  PerYear<std::optional<std::string>> l2{"a", "b", std::nullopt, std::nullopt, std::nullopt};
  const auto d2 = build_design(ScorePanel(std::vector<StudentRecord>{make_student("s", s2, l2)}));
  REQUIRE(d2.rows.size() == 1);
  CHECK(d2.rows[0].contributions.size() == 2);
}

TEST_CASE("design invariants on a random panel") {
  std::mt19937_64 rng(11);
  std::vector<StudentRecord> v;
  for (int i = 0; i < 200; ++i) {
    PerYear<std::optional<double>> s;
    PerYear<std::optional<std::string>> l;
    for (int t = 0; t < kYears; ++t) {
      if (rng() % 3) s[t] = static_cast<double>(rng() % 100) / 10.0;
      if (rng() % 4) l[t] = "t" + std::to_string(rng() % 7);
    }
    if (!s[0] && !s[1] && !s[2] && !s[3] && !s[4]) s[4] = 1.0;
    v.push_back(make_student("s" + std::to_string(i), s, l));
  }
  const ScorePanel panel(v);
  const auto d = build_design(panel);
  CHECK(d.rows.size() == panel.observed_score_count());
  CHECK(build_design(panel) == d);
  for (const auto& row : d.rows)
    for (const auto& c : row.contributions) {
      CHECK(c.effect.year <= row.year);
      CHECK(c.effect.teacher_slot < d.teacher_counts[c.effect.year]);
    }
  // current-year contributions partition observed scores that have a current teacher
  std::size_t with_teacher = 0, current = 0;
  for (const auto& s : panel.students())
    for (int t = 0; t < kYears; ++t) with_teacher += s.scores[t] && s.teacher_links[t];
  for (const auto& row : d.rows)
    current += std::count_if(row.contributions.begin(), row.contributions.end(),
                             [](const Contribution& c) { return c.weight_slot == kCurrentYearWeight; });
  CHECK(current == with_teacher);
}

TEST_CASE("classroom complete proportion") {
  const auto full = [](const std::string& id, const std::string& t0) {
    return student(id, {Slot{{1, t0}}, Slot{{1, "b"}}, Slot{{1, "c"}}, Slot{{1, "d"}}, Slot{{1, "e"}}});
  };
  std::vector<StudentRecord> v{full("1", "x"), full("2", "x"), full("3", "y"), full("4", "y"),
                               student("5", {Slot{{1, "y"}}}), student("6", {Slot{{1, "y"}}})};
  const auto rosters = classroom_rosters(ScorePanel(v));
  for (const auto& r : rosters) {
    if (r.year == 0 && r.teacher_id == "x") CHECK(r.complete_proportion == 1.0);
    if (r.year == 0 && r.teacher_id == "y") {
      CHECK(r.students.size() == 4);
      CHECK(r.complete_proportion == 0.5);
    }
  }
}
