#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mnarvam/errors.hpp"
#include "mnarvam/selection.hpp"
#include "mnarvam/simgen.hpp"

using namespace mnarvam;

namespace {

GeneratorConfig config(std::size_t students, std::size_t teachers, std::uint64_t seed) {
  GeneratorConfig g;
  g.students = students;
  g.teachers_per_year = teachers;
  g.seed = seed;
  return g;
}

/// Share of students with all five scores, by quintile of the true student effect.
std::vector<double> completion_by_quintile(const ScorePanel& panel, const TruthRecord& truth) {
  std::vector<std::size_t> order(truth.delta.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return truth.delta[a] < truth.delta[b]; });
  std::vector<double> out(5, 0.0);
  const std::size_t per = order.size() / 5;
  for (std::size_t q = 0; q < 5; ++q) {
    for (std::size_t k = q * per; k < (q + 1) * per; ++k) {
      const auto pos = panel.find_student(truth.student_ids[order[k]]);
      out[q] += panel.students()[*pos].complete();
    }
    out[q] /= static_cast<double>(per);
  }
  return out;
}

}  // namespace

TEST_CASE("configuration checks") {
  auto g = config(10, 20, 1);
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = config(10, 2, 1);
  g.mixing = 1.5;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  MissingnessMechanism m;
  m.kind = MechanismKind::sel_hazard;
  m.a = {0, 0};
  m.beta = {0};
  CHECK_THROWS_AS(m.validate(), ConfigError);
}

TEST_CASE("complete panel shape and determinism") {
  const auto a = simulate_panel(config(200, 10, 3));
  const auto b = simulate_panel(config(200, 10, 3));
  const auto c = simulate_panel(config(200, 10, 4));
  CHECK(a.panel == b.panel);
  CHECK_FALSE(a.panel == c.panel);
  CHECK(a.panel.size() == 200);
  for (const auto& s : a.panel.students()) CHECK(s.complete());
  for (int t = 0; t < kYears; ++t) CHECK(a.panel.teachers_by_year()[t].size() == 10);
}

TEST_CASE("no teacher or student variance leaves only noise around the means") {
  auto g = config(3000, 30, 5);
  g.truth.tau.fill(0.0);
  g.truth.nu = 0.0;
  const auto sim = simulate_panel(g);
  for (int t = 0; t < kYears; ++t)
    for (double th : sim.truth.theta[t]) CHECK(th == 0.0);
  for (double d : sim.truth.delta) CHECK(d == 0.0);
  for (int t = 0; t < kYears; ++t) {
    double s = 0, ss = 0;
    for (const auto& r : sim.panel.students()) {
      const double e = *r.scores[t] - g.truth.mu[t];
      s += e;
      ss += e * e;
    }
    const double n = static_cast<double>(sim.panel.size());
    CHECK(std::abs(s / n) < 4 * g.truth.sigma[t] / std::sqrt(n));
    CHECK(ss / n == doctest::Approx(g.truth.sigma[t] * g.truth.sigma[t]).epsilon(0.08));
  }
}

TEST_CASE("grade-1 score variance decomposes into teacher, student and noise variance") {
  const auto g = config(10000, 1000, 6);
  const auto sim = simulate_panel(g);
  double s = 0, ss = 0;
  for (const auto& r : sim.panel.students()) {
    s += *r.scores[0];
    ss += *r.scores[0] * *r.scores[0];
  }
  const double n = static_cast<double>(sim.panel.size());
  const double var = ss / n - (s / n) * (s / n);
  const auto& p = g.truth;
  CHECK(var == doctest::Approx(p.tau[0] * p.tau[0] + p.nu * p.nu + p.sigma[0] * p.sigma[0]).epsilon(0.05));
}

TEST_CASE("sorted assignment concentrates student effects by classroom") {
  auto spread = [](Assignment a) {
    auto g = config(2000, 40, 7);
    g.assignment = a;
    g.mixing = 0.2;
    const auto sim = simulate_panel(g);
    std::vector<double> sum(40, 0.0), count(40, 0.0);
    for (std::size_t i = 0; i < sim.panel.size(); ++i) {
      const auto& s = sim.panel.students()[i];
      const auto slot = *sim.panel.teacher_slot(0, *s.teacher_links[0]);
      sum[slot] += sim.truth.delta[i];
      count[slot] += 1;
    }
    double v = 0;
    for (std::size_t j = 0; j < 40; ++j) v += std::pow(sum[j] / count[j], 2);
    return v / 40;
  };
  CHECK(spread(Assignment::sorted) > 5 * spread(Assignment::random));
}

TEST_CASE("missingness mechanisms") {
  const auto sim = simulate_panel(config(5000, 50, 8));

  SUBCASE("zero-rate MCAR changes nothing") {
    MissingnessMechanism m;
    m.kind = MechanismKind::mcar;
    m.rate = 0.0;
    CHECK(apply_missingness(sim.panel, sim.truth, m, 1) == sim.panel);
  }

  SUBCASE("kept scores are never altered and links follow the co-delete flag") {
    for (bool co_delete : {true, false}) {
      MissingnessMechanism m;
      m.kind = MechanismKind::mcar;
      m.rate = 0.4;
      m.co_delete = co_delete;
      const auto out = apply_missingness(sim.panel, sim.truth, m, 2);
      CHECK(out.size() == sim.panel.size());
      std::size_t dropped_links = 0;
      for (const auto& s : out.students()) {
        const auto& orig = sim.panel.students()[*sim.panel.find_student(s.student_id)];
        CHECK(s.n_observed >= 1);
        for (int t = 0; t < kYears; ++t) {
          if (s.scores[t]) CHECK(*s.scores[t] == *orig.scores[t]);
          if (!s.scores[t] && !s.teacher_links[t]) ++dropped_links;
          if (s.teacher_links[t]) CHECK(*s.teacher_links[t] == *orig.teacher_links[t]);
        }
      }
      CHECK((dropped_links > 0) == co_delete);
    }
  }

  SUBCASE("null hazard: one student in sixteen completes") {
    MissingnessMechanism m;
    m.kind = MechanismKind::sel_hazard;
    m.a = {0, 0, 0, 0};
    m.beta = {0};
    const auto out = apply_missingness(sim.panel, sim.truth, m, 3);
    double complete = 0;
    for (const auto& s : out.students()) complete += s.complete();
    const double p = complete / static_cast<double>(out.size());
    CHECK(std::abs(p - 1.0 / 16) < 3 * std::sqrt(1.0 / 16 * 15 / 16 / static_cast<double>(out.size())));
  }

  SUBCASE("negative hazard slope: completion rises with the student effect") {
    MissingnessMechanism m;
    m.kind = MechanismKind::sel_hazard;
    m.a = {-1.5, -1.5, -1.5, -1.5};
    m.beta = {-0.8};
    const auto out = apply_missingness(sim.panel, sim.truth, m, 4);
    const auto q = completion_by_quintile(out, sim.truth);
    for (int k = 1; k < 5; ++k) CHECK(q[k] > q[k - 1]);
  }

  SUBCASE("realized score counts match the mechanism within two standard errors") {
    MissingnessMechanism m;
    m.kind = MechanismKind::sel_hazard;
    m.a = {-2.0, -1.5, -1.0, -1.5};
    m.beta = {-0.8};
    const auto out = apply_missingness(sim.panel, sim.truth, m, 5);
    PerYear<double> expect{}, var{}, seen{};
    for (std::size_t i = 0; i < sim.truth.delta.size(); ++i) {
      const auto p = hazard_count_probabilities(sim.truth.delta[i], m.a, m.beta[0]);
      for (int k = 0; k < kYears; ++k) {
        expect[k] += p[k];
        var[k] += p[k] * (1 - p[k]);
      }
    }
    for (const auto& s : out.students()) seen[s.n_observed - 1] += 1;
    for (int k = 0; k < kYears; ++k) CHECK_MESSAGE(std::abs(seen[k] - expect[k]) < 2 * std::sqrt(var[k]), "n=" << k + 1);
  }

  SUBCASE("SEL-hazard keeps contiguous runs") {
    MissingnessMechanism m;
    m.kind = MechanismKind::sel_hazard;
    m.a = {-1, -1, -1, -1};
    m.beta = {0};
    for (const auto& s : apply_missingness(sim.panel, sim.truth, m, 6).students()) {
      int first = -1, last = -1;
      for (int t = 0; t < kYears; ++t)
        if (s.scores[t]) {
          if (first < 0) first = t;
          last = t;
        }
      CHECK(last - first + 1 == s.n_observed);
    }
  }

  SUBCASE("independent-years mechanism") {
    MissingnessMechanism m;
    m.kind = MechanismKind::sel2;
    m.a = {1, 1, 1, 1, 1};
    m.beta = {0, 0, 0, 0, 0};
    const auto out = apply_missingness(sim.panel, sim.truth, m, 7);
    const double p = 1 / (1 + std::exp(-1.0));
    // conditional on at least one score
    const double want = 5 * p / (1 - std::pow(1 - p, 5));
    CHECK(static_cast<double>(out.observed_score_count()) / static_cast<double>(out.size()) ==
          doctest::Approx(want).epsilon(0.01));
  }

  SUBCASE("score-dependent deletion drops low current scores") {
    MissingnessMechanism m;
    m.kind = MechanismKind::score_dependent;
    m.intercept = 1.0;
    m.coefficient = 3.0;
    const auto out = apply_missingness(sim.panel, sim.truth, m, 8);
    double kept = 0, all = 0;
    std::size_t nk = 0, na = 0;
    for (const auto& s : out.students())
      for (int t = 0; t < kYears; ++t)
        if (s.scores[t]) {
          kept += *s.scores[t] - sim.truth.profile.mu[t];
          ++nk;
        }
    for (const auto& s : sim.panel.students())
      for (int t = 0; t < kYears; ++t) {
        all += *s.scores[t] - sim.truth.profile.mu[t];
        ++na;
      }
    CHECK(kept / static_cast<double>(nk) > all / static_cast<double>(na) + 0.1);
  }
}

TEST_CASE("truth file round trip") {
  const auto sim = simulate_panel(config(30, 3, 9));
  auto named = sim.truth.named();
  CHECK(named.count("mu[1]"));
  CHECK(named.count("alpha[5,4]"));
  CHECK(named.count("nu"));
  CHECK(named.count("delta[" + sim.truth.student_ids[0] + "]"));
  std::stringstream buf;
  write_truth_csv(named, buf);
  CHECK(read_truth_csv(buf) == named);
}
