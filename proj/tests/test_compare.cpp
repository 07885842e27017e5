#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "mnarvam/compare.hpp"
#include "mnarvam/errors.hpp"
#include "mnarvam/sampler.hpp"
#include "mnarvam/simgen.hpp"

using namespace mnarvam;

namespace {

struct Setup {
  ScorePanel panel;
  TruthRecord truth;
};

Setup setup(std::uint64_t seed) {
  GeneratorConfig g;
  g.students = 600;
  g.teachers_per_year = 30;
  g.seed = seed;
  auto sim = simulate_panel(g);
  MissingnessMechanism m;
  m.kind = MechanismKind::sel_hazard;
  m.a = {-1.5, -1.5, -1.5, -1.5};
  m.beta = {-0.8};
  return {apply_missingness(sim.panel, sim.truth, m, seed + 1), sim.truth};
}

PosteriorSummary ps(std::string name, double mean, double sd = 0.1) { return {std::move(name), mean, sd, mean - 2 * sd, mean + 2 * sd, 0.01}; }

/// Teacher and student effects from the truth, each shifted by `shift(...)`.
template <typename F, typename G>
ModelSummary summary_from(const Setup& s, ModelKind kind, F theta_shift, G delta_shift, double nu = 0.71) {
  ModelSummary m;
  m.kind = kind;
  m.label = to_string(kind);
  m.parameters.push_back(ps("nu", nu));
  for (int t = 0; t < kYears; ++t) m.parameters.push_back(ps("mu[" + std::to_string(t + 1) + "]", s.truth.profile.mu[t]));
  for (int t = 0; t < kYears; ++t)
    for (std::size_t j = 0; j < s.truth.teacher_ids[t].size(); ++j)
      m.parameters.push_back(ps("theta[" + std::to_string(t + 1) + "," + s.truth.teacher_ids[t][j] + "]",
                                s.truth.theta[t][j] + theta_shift(t, j)));
  for (std::size_t i = 0; i < s.panel.size(); ++i) {
    const auto& id = s.panel.students()[i].student_id;
    const auto k = static_cast<std::size_t>(std::find(s.truth.student_ids.begin(), s.truth.student_ids.end(), id) -
                                            s.truth.student_ids.begin());
    m.students.push_back(ps(student_effect_name(id), s.truth.delta[k] + delta_shift(s.panel.students()[i])));
  }
  return m;
}

const auto kNone = [](int, std::size_t) { return 0.0; };
const auto kNoDelta = [](const StudentRecord&) { return 0.0; };

}  // namespace

TEST_CASE("name parsing") {
  const auto t = parse_theta_name("theta[3,t017]");
  REQUIRE(t);
  CHECK(t->first == 2);
  CHECK(t->second == "t017");
  CHECK_FALSE(parse_theta_name("theta[9,x]"));
  CHECK_FALSE(parse_theta_name("mu[1]"));
  CHECK(parse_delta_name("delta[s001]").value() == "s001");
}

TEST_CASE("pearson") {
  CHECK(pearson({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0));
  CHECK(pearson({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(std::isnan(pearson({1, 1, 1}, {1, 2, 3})));
}

TEST_CASE("identical summaries") {
  const auto s = setup(1);
  const auto a = summary_from(s, ModelKind::mar, kNone, kNoDelta);
  for (double r : teacher_correlations(a, a)) CHECK(r == doctest::Approx(1.0));
  const auto shift = student_effect_shift(a, a, s.panel);
  for (double d : shift.standardized) CHECK(d == 0.0);
  CHECK(shift.sd_ratio == doctest::Approx(1.0));
  const auto g = completeness_gradient(a, a, classroom_rosters(s.panel));
  CHECK(g.pooled.slope == 0.0);
  for (const auto& p : g.points) CHECK(p.difference == 0.0);
}

TEST_CASE("mismatched teacher sets are refused") {
  const auto s = setup(2);
  const auto a = summary_from(s, ModelKind::mar, kNone, kNoDelta);
  auto b = a;
  b.parameters.pop_back();
  CHECK_THROWS_AS(teacher_correlations(a, b), ComparisonError);
}

TEST_CASE("symmetry under swapping the two summaries") {
  const auto s = setup(3);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z(0, 0.1);
  std::vector<double> noise(1000);
  for (auto& x : noise) x = z(rng);
  const auto a = summary_from(s, ModelKind::mar, kNone, kNoDelta);
  const auto b = summary_from(
      s, ModelKind::sel, [&](int t, std::size_t j) { return noise[t * 40 + j]; },
      [](const StudentRecord& r) { return 0.05 * r.n_observed - 0.1; }, 0.74);
  const auto rab = teacher_correlations(a, b), rba = teacher_correlations(b, a);
  for (int t = 0; t < kYears; ++t) CHECK(rab[t] == doctest::Approx(rba[t]).epsilon(1e-12));
  const auto sab = student_effect_shift(a, b, s.panel), sba = student_effect_shift(b, a, s.panel);
  for (std::size_t i = 0; i < sab.standardized.size(); ++i)
    CHECK(sab.standardized[i] == doctest::Approx(-sba.standardized[i]).epsilon(1e-12));
  const auto rosters = classroom_rosters(s.panel);
  const auto gab = completeness_gradient(a, b, rosters), gba = completeness_gradient(b, a, rosters);
  CHECK(gab.pooled.slope == doctest::Approx(-gba.pooled.slope).epsilon(1e-12));
  for (int t = 0; t < kYears; ++t) CHECK(gab.by_grade[t].slope == doctest::Approx(-gba.by_grade[t].slope).epsilon(1e-12));
}

TEST_CASE("shift by number of scores follows the injected pattern") {
  const auto s = setup(5);
  const auto a = summary_from(s, ModelKind::mar, kNone, kNoDelta);
  const auto b = summary_from(s, ModelKind::sel, kNone, [](const StudentRecord& r) { return 0.1 * (r.n_observed - 3); });
  const auto shift = student_effect_shift(a, b, s.panel);
  for (int n = 1; n < kYears; ++n)
    if (shift.by_count[n].students && shift.by_count[n - 1].students)
      CHECK(shift.by_count[n].median > shift.by_count[n - 1].median);
  CHECK(shift.by_count[0].median < 0);
  CHECK(shift.by_count[4].median > 0);
}

TEST_CASE("completeness gradient") {
  const auto s = setup(6);
  const auto rosters = classroom_rosters(s.panel);
  const auto a = summary_from(s, ModelKind::mar, kNone, kNoDelta);

  SUBCASE("differences unrelated to completeness give a slope near zero") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> z(0, 0.05);
    std::vector<double> noise(1000);
    for (auto& x : noise) x = z(rng);
    const auto b = summary_from(s, ModelKind::sel, [&](int t, std::size_t j) { return noise[t * 40 + j]; }, kNoDelta);
    const auto g = completeness_gradient(a, b, rosters);
    CHECK(std::abs(g.pooled.slope) < 3 * g.pooled.se);
  }

  SUBCASE("a planted slope is recovered") {
    std::map<std::pair<int, std::string>, double> p;
    for (const auto& r : rosters) p[{r.year, r.teacher_id}] = r.complete_proportion;
    const auto b = summary_from(
        s, ModelKind::sel, [&](int t, std::size_t j) { return -0.3 * p[{t, s.truth.teacher_ids[t][j]}]; }, kNoDelta);
    const auto g = completeness_gradient(a, b, rosters);
    CHECK(g.pooled.slope == doctest::Approx(-0.3).epsilon(1e-9));
    for (int t = 0; t < kYears; ++t) CHECK(g.by_grade[t].slope == doctest::Approx(-0.3).epsilon(1e-9));
  }
}

TEST_CASE("least squares slope") {
  const auto f = least_squares_slope({0, 1, 2, 3}, {1, 3, 5, 7});
  CHECK(f.slope == doctest::Approx(2.0));
  CHECK(f.se == doctest::Approx(0.0));
  CHECK(std::isnan(least_squares_slope({1, 1, 1}, {1, 2, 3}).slope));
}

TEST_CASE("pattern means") {
  PatternCounts counts{};
  counts[ResponsePattern::parse("11111").index() - 1] = 40;
  counts[ResponsePattern::parse("10000").index() - 1] = 30;
  const auto grouping = group_patterns(counts, 25);
  ModelSummary m;
  m.kind = ModelKind::pmix;
  for (const auto& g : grouping.groups())
    for (int t = 0; t < kYears; ++t)
      if (g.years[t]) m.parameters.push_back(ps("mu[" + std::to_string(g.id) + "," + std::to_string(t + 1) + "]", t));
  const auto rows = pattern_means_table(m, grouping);
  std::size_t year1_only = 0;
  for (const auto& r : rows)
    if (r.patterns == "10000") ++year1_only;
  CHECK(year1_only == 1);
  CHECK(rows.size() == 6);
  m.kind = ModelKind::mar;
  CHECK_THROWS_AS(pattern_means_table(m, grouping), ComparisonError);
}

TEST_CASE("reports") {
  const auto s = setup(8);
  auto a = summary_from(s, ModelKind::mar, kNone, kNoDelta);
  auto b = summary_from(s, ModelKind::sel, kNone, kNoDelta);
  a.dic = {dic_from_components(-100, -90)};
  b.dic = {dic_from_components(-95, -85)};
  CHECK(dic_comparable(ModelKind::mar, ModelKind::sel));
  CHECK_FALSE(dic_comparable(ModelKind::mar, ModelKind::pmix));
  CHECK_FALSE(dic_comparable(ModelKind::pmix, ModelKind::pmix));
  const auto r = comparison_report(a, b, &s.panel);
  CHECK(r.find("preferred") != std::string::npos);
  CHECK(r.find("pooled") != std::string::npos);
  auto p = b;
  p.kind = ModelKind::pmix;
  const auto rp = comparison_report(a, p, &s.panel);
  CHECK(rp.find("not comparable") != std::string::npos);
  CHECK(rp.find("correlations") != std::string::npos);
}
