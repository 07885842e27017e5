#include <doctest.h>

#include <random>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "mnarvam/errors.hpp"
#include "mnarvam/score_panel.hpp"
#include "mnarvam/simgen.hpp"

using namespace mnarvam;
using testing::student;

TEST_CASE("standardize") {
  CHECK(standardize(440, 400, 40) == doctest::Approx(1.0));
  CHECK(standardize(400, 400, 40) == 0.0);
  CHECK(standardize(460, 400, 40) == doctest::Approx(1.5));
  CHECK_THROWS_AS(standardize(1, 0, 0), ConfigError);
}

TEST_CASE("empty stream gives an empty panel") {
  std::istringstream in("");
  const auto r = load_panel(in);
  CHECK(r.panel.empty());
  CHECK(r.report.rows_read == 0);
}

TEST_CASE("one complete student") {
  std::istringstream in("stuid,tchid,year,Y\ns1,a,0,1\ns1,b,1,2\ns1,c,2,3\ns1,d,3,4\ns1,e,4,5\n");
  const auto r = load_panel(in);
  REQUIRE(r.panel.size() == 1);
  CHECK(r.panel.students()[0].n_observed == 5);
  CHECK(r.panel.students()[0].complete());
}

TEST_CASE("year value v maps to grade v+1 and raw mode standardizes") {
  std::istringstream in("stuid,tchid,year,Y\ns1,a,2,480\n");
  LoadOptions o;
  o.scale = ScoreScale::raw;
  const auto r = load_panel(in, o);
  const auto& s = r.panel.students().at(0);
  CHECK(s.scores[2].value() == doctest::Approx(2.0));
  CHECK(r.panel.standardization().has_value());
}

TEST_CASE("malformed rows are collected, strict mode aborts") {
  const std::string text = "stuid,tchid,year,Y\ns1,a,0,1\ns1,b,7,2\ns2,c,1,abc\ns3,d,0,NA\n";
  std::istringstream in(text);
  const auto r = load_panel(in);
  CHECK(r.report.malformed_rows == 2);
  CHECK(r.report.row_errors.size() == 2);
  CHECK(r.panel.size() == 1);
  // s3 has a link but no score
  CHECK(r.report.students_dropped.at("no_valid_score") == 1);
  std::istringstream again(text);
  LoadOptions strict;
  strict.strict = true;
  CHECK_THROWS_AS(load_panel(again, strict), ValidationError);
}

TEST_CASE("conflicting duplicates are dropped and reported; identical duplicates merge") {
  std::istringstream in("stuid,tchid,year,Y\ns1,a,0,1\ns1,a,0,1.5\ns2,b,0,2\ns2,b,0,2\n");
  const auto r = load_panel(in);
  CHECK(r.panel.size() == 1);
  CHECK(r.report.students_dropped.at("conflicting_duplicate") == 1);
  CHECK(r.report.merged_duplicate_rows == 1);
}

TEST_CASE("missing header column is a validation error") {
  std::istringstream in("stuid,year,Y\ns1,0,1\n");
  CHECK_THROWS_AS(load_panel(in), ValidationError);
}

TEST_CASE("panel construction rejects inconsistent records") {
  using testing::Slot;
  CHECK_THROWS_AS(ScorePanel(std::vector<StudentRecord>{student("s", {Slot{{1.0, "a"}}}), student("s", {Slot{{1.0, "a"}}})}),
                  ValidationError);
  PerYear<std::vector<std::string>> roster;
  roster[0] = {"a"};
  CHECK_THROWS_AS(ScorePanel(std::vector<StudentRecord>{student("s", {Slot{{1.0, "b"}}})}, roster), ValidationError);
}

TEST_CASE("round trip through the CSV format") {
  GeneratorConfig g;
  g.students = 150;
  g.teachers_per_year = 6;
  g.seed = 5;
  auto sim = simulate_panel(g);
  MissingnessMechanism m;
  m.kind = MechanismKind::mcar;
  m.rate = 0.3;
  m.co_delete = false;
  const auto panel = apply_missingness(sim.panel, sim.truth, m, 9);
  std::stringstream buf;
  write_panel(panel, buf);
  const auto back = load_panel(buf).panel;
  REQUIRE(back.size() == panel.size());
  for (std::size_t i = 0; i < panel.size(); ++i) {
    const auto& x = panel.students()[i];
    const auto& y = back.students()[i];
    CHECK(x.student_id == y.student_id);
    CHECK(x.teacher_links == y.teacher_links);
    CHECK(x.response_flags == y.response_flags);
    for (int t = 0; t < kYears; ++t) {
      REQUIRE(x.scores[t].has_value() == y.scores[t].has_value());
      if (x.scores[t]) CHECK(std::abs(*x.scores[t] - *y.scores[t]) <= 5e-7);
    }
  }
  // once written, the text form is a fixed point
  std::stringstream again;
  write_panel(back, again);
  CHECK(load_panel(again).panel == back);
}

TEST_CASE("admitted plus dropped equals distinct students; nobody admitted with zero scores") {
  std::mt19937_64 rng(3);
  std::ostringstream text;
  text << "stuid,tchid,year,Y\n";
  std::set<std::string> ids;
  for (int k = 0; k < 400; ++k) {
    const std::string id = "s" + std::to_string(rng() % 60);
    ids.insert(id);
    const int year = static_cast<int>(rng() % 5);
    const bool has_score = rng() % 3 != 0;
    text << id << ",t" << year << ',' << year << ',' << (has_score ? std::to_string(rng() % 7) : "NA") << '\n';
  }
  std::istringstream in(text.str());
  const auto r = load_panel(in);
  CHECK(r.report.students_admitted + r.report.students_dropped_total() == ids.size());
  for (const auto& s : r.panel.students()) CHECK(s.n_observed > 0);
}

TEST_CASE("nobs summary") {
  using testing::Slot;
  SUBCASE("constant data") {
    std::vector<StudentRecord> v{student("a", {Slot{{2.0, "x"}}, Slot{{2.0, "y"}}}),
                                 student("b", {Slot{}, Slot{{2.0, "y"}}, Slot{{2.0, "z"}}})};
    for (const auto& c : nobs_summary(ScorePanel(v)))
      if (c.count) CHECK(*c.mean == 2.0);
  }
  SUBCASE("singleton") {
    std::vector<StudentRecord> v{
        student("a", {Slot{{1.0, "p"}}, Slot{{2.0, "q"}}, Slot{{3.0, "r"}}, Slot{{4.0, "s"}}, Slot{{5.0, "t"}}})};
    int cells = 0;
    for (const auto& c : nobs_summary(ScorePanel(v)))
      if (c.count) {
        ++cells;
        CHECK(c.count == 1);
        CHECK(c.n_observed == 5);
        CHECK(*c.mean == doctest::Approx(c.grade));
      }
    CHECK(cells == 5);
  }
}

TEST_CASE("MNAR deletion tied to low student effect: cell means rise with n_observed") {
  GeneratorConfig g;
  g.students = 6000;
  g.teachers_per_year = 60;
  g.seed = 77;
  auto sim = simulate_panel(g);
  MissingnessMechanism m;
  m.kind = MechanismKind::sel_hazard;
  m.a = {-1.5, -1.5, -1.5, -1.5};
  m.beta = {-1.5};
  const auto panel = apply_missingness(sim.panel, sim.truth, m, 78);
  const auto cells = nobs_summary(panel);
  for (int grade = 1; grade <= 5; ++grade) {
    double low = 0, high = 0;
    for (const auto& c : cells)
      if (c.grade == grade && c.count) {
        if (c.n_observed == 1 || c.n_observed == 2) low = std::max(low, *c.mean);
        if (c.n_observed == 5) high = *c.mean;
      }
    CHECK(high > low);
  }
}
