#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "helpers.hpp"
#include "mnarvam/archive.hpp"
#include "mnarvam/errors.hpp"
#include "mnarvam/sampler.hpp"
#include "mnarvam/selection.hpp"
#include "mnarvam/simgen.hpp"

using namespace mnarvam;
using testing::Slot;
using testing::student;

namespace {

struct Fixture {
  ScorePanel panel;
  Design design;
  SamplerData data;
  Fixture(ScorePanel p, const ModelSpec& spec)
      : panel(std::move(p)), design(build_design(panel)), data(make_sampler_data(panel, design, spec)) {}
};

ModelSpec quick_spec(ModelKind kind, int burn, int kept, int chains = 1) {
  ModelSpec s;
  s.kind = kind;
  s.settings.burn_in = burn;
  s.settings.retained = kept;
  s.settings.chains = chains;
  return s;
}

ScorePanel small_panel(std::size_t students, std::size_t teachers, std::uint64_t seed, double mcar = 0.0) {
  GeneratorConfig g;
  g.students = students;
  g.teachers_per_year = teachers;
  g.seed = seed;
  auto sim = simulate_panel(g);
  if (mcar == 0.0) return sim.panel;
  MissingnessMechanism m;
  m.kind = MechanismKind::mcar;
  m.rate = mcar;
  return apply_missingness(sim.panel, sim.truth, m, seed + 1);
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double var_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

/// Largest gap between the empirical CDF of `x` and `cdf`.
template <typename F>
double ks_distance(std::vector<double> x, F cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, std::abs(f - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - f)});
  }
  return d;
}

}  // namespace

TEST_CASE("default settings follow the three-chain 5000 + 5000 protocol") {
  const SamplerSettings s;
  CHECK(s.chains == 3);
  CHECK(s.burn_in == 5000);
  CHECK(s.retained == 5000);
  CHECK(s.draws_per_chain() == 5000);
}

TEST_CASE("model settings validation") {
  ModelSpec s;
  s.settings.chains = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  ModelSpec t;
  t.prior.tau_upper = -1;
  CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("draw_bounded_sd") {
  Rng rng(1);
  SUBCASE("no terms: uniform on the support") {
    std::vector<double> x;
    for (int k = 0; k < 20000; ++k) x.push_back(draw_bounded_sd(0, 0.0, 0.7, 0.3, rng));
    CHECK(ks_distance(x, [](double v) { return v / 0.7; }) < 0.015);
  }
  SUBCASE("many terms concentrate near the root mean square") {
    std::vector<double> x;
    for (int k = 0; k < 4000; ++k) x.push_back(draw_bounded_sd(5000, 5000 * 0.45 * 0.45, 1.0, 0.5, rng));
    CHECK(mean_of(x) == doctest::Approx(0.45).epsilon(0.01));
  }
  SUBCASE("never leaves the support, even when the data push past it") {
    for (int k = 0; k < 2000; ++k) {
      const double s = draw_bounded_sd(50, 50 * 4.0, 1.0, 0.9, rng);
      CHECK(s > 0.0);
      CHECK(s < 1.0);
    }
  }
}

TEST_CASE("chain seeds do not depend on the number of chains") {
  CHECK(chain_seed(7, 0) != chain_seed(7, 1));
  CHECK(chain_seed(7, 2) == chain_seed(7, 2));
}

TEST_CASE("conditional log-likelihood") {
  SUBCASE("single observation with zero residual and unit sd") {
    auto spec = quick_spec(ModelKind::mar, 0, 1);
    Fixture f(ScorePanel(std::vector<StudentRecord>{student("s", {Slot{{2.5, "a"}}})}), spec);
    auto st = initial_state(f.data);
    st.mu[0][0] = 2.5;
    st.theta[0][0] = 0.0;
    st.delta[0] = 0.0;
    st.sigma[0][0] = 1.0;
    CHECK(conditional_loglik(st, f.data).score == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)));
  }
  SUBCASE("duplicating a student doubles that student's contribution") {
    auto spec = quick_spec(ModelKind::mar, 0, 1);
    const auto one = student("s", {Slot{{1.0, "a"}}, Slot{{2.0, "b"}}});
    auto two = one;
    two.student_id = "t";
    Fixture f1(ScorePanel(std::vector<StudentRecord>{one}), spec);
    Fixture f2(ScorePanel(std::vector<StudentRecord>{one, two}), spec);
    auto s1 = initial_state(f1.data);
    auto s2 = initial_state(f2.data);
    s1.delta = {0.3};
    s2.delta = {0.3, 0.3};
    s1.theta[0] = s2.theta[0] = {0.2};
    s1.theta[1] = s2.theta[1] = {-0.1};
    s1.alpha[0] = s2.alpha[0] = 0.4;
    CHECK(conditional_loglik(s2, f2.data).score == doctest::Approx(2 * conditional_loglik(s1, f1.data).score));
  }
}

TEST_CASE("conditional log-likelihood matches a naive evaluation") {
  for (auto kind : {ModelKind::mar, ModelKind::sel, ModelKind::sel2}) {
    auto spec = quick_spec(kind, 0, 1);
    Fixture f(small_panel(10, 3, 4, 0.35), spec);
    auto st = initial_state(f.data);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.2, 0.9);
    for (int t = 0; t < kYears; ++t) {
      st.mu[0][t] = 3 + z(rng);
      st.sigma[0][t] = u(rng);
      for (auto& th : st.theta[t]) th = z(rng);
    }
    for (auto& a : st.alpha) a = 0.3 * z(rng);
    for (auto& d : st.delta) d = z(rng);
    for (auto& a : st.sel_a) a = z(rng);
    for (auto& b : st.sel_beta) b = z(rng);

    double want = 0, want_sel = 0;
    const auto& students = f.panel.students();
    for (std::size_t i = 0; i < students.size(); ++i) {
      const auto& s = students[i];
      for (int t = 0; t < kYears; ++t) {
        if (!s.scores[t]) continue;
        double m = st.mu[0][t] + st.delta[i];
        for (int p = 0; p <= t; ++p) {
          if (!s.teacher_links[p]) continue;
          const double th = st.theta[p][*f.panel.teacher_slot(p, *s.teacher_links[p])];
          m += (p == t ? 1.0 : st.alpha[alpha_slot(t, p)]) * th;
        }
        const double sd = st.sigma[0][t], r = *s.scores[t] - m;
        want += -0.5 * std::log(2 * std::numbers::pi) - std::log(sd) - 0.5 * r * r / (sd * sd);
      }
      if (kind == ModelKind::sel)
        want_sel += selection_loglik_count(s.n_observed, st.delta[i], st.sel_a, st.sel_beta[0], SelectionForm::hazard);
      if (kind == ModelKind::sel2) want_sel += selection_loglik_flags(s.response_flags, st.delta[i], st.sel_a, st.sel_beta);
    }
    const auto got = conditional_loglik(st, f.data);
    CHECK(std::abs(got.score - want) < 1e-10);
    CHECK(std::abs(got.selection - want_sel) < 1e-10);
  }
}

TEST_CASE("Gaussian updates on one student and one teacher") {
  const double e = 0.9, tau = 0.6, nu = 0.7, sigma = 0.5;
  auto spec = quick_spec(ModelKind::mar, 0, 1);
  spec.fixed.mu = PerYear<double>{3, 0, 0, 0, 0};
  spec.fixed.tau = PerYear<double>{tau, 0.3, 0.3, 0.3, 0.3};
  spec.fixed.nu = nu;
  spec.fixed.sigma = PerYear<double>{sigma, 0.5, 0.5, 0.5, 0.5};
  Fixture f(ScorePanel(std::vector<StudentRecord>{student("s", {Slot{{3 + e, "a"}}})}), spec);

  SUBCASE("teacher draw given the student effect") {
    GibbsSampler g(f.data, 2);
    auto start = g.state();
    start.delta[0] = 0.25;
    std::vector<double> th, zd;
    const double tm = tau * tau * (e - 0.25) / (tau * tau + sigma * sigma);
    const double tv = tau * tau * sigma * sigma / (tau * tau + sigma * sigma);
    const double dv = nu * nu * sigma * sigma / (nu * nu + sigma * sigma);
    for (int k = 0; k < 20000; ++k) {
      g.set_state(start);
      g.update_location_block();
      const double t = g.state().theta[0][0];
      th.push_back(t);
      const double dm = nu * nu * (e - t) / (nu * nu + sigma * sigma);
      zd.push_back((g.state().delta[0] - dm) / std::sqrt(dv));
    }
    CHECK(mean_of(th) == doctest::Approx(tm).epsilon(0.02));
    CHECK(var_of(th) == doctest::Approx(tv).epsilon(0.04));
    CHECK(std::abs(mean_of(zd)) < 0.03);
    CHECK(var_of(zd) == doctest::Approx(1.0).epsilon(0.04));
  }

  SUBCASE("posterior mean of the teacher effect is the shrunken adjusted score") {
    GibbsSampler g(f.data, 3);
    std::vector<double> th;
    for (int k = 0; k < 40000; ++k) {
      g.sweep(false, k);
      th.push_back(g.state().theta[0][0]);
    }
    const double shrink = tau * tau / (tau * tau + nu * nu + sigma * sigma);
    CHECK(mean_of(th) == doctest::Approx(shrink * e).epsilon(0.03));
    CHECK(var_of(th) == doctest::Approx(tau * tau * (1 - shrink)).epsilon(0.05));
  }
}

TEST_CASE("a teacher without students is drawn from its prior") {
  auto spec = quick_spec(ModelKind::mar, 0, 1);
  spec.fixed.tau = PerYear<double>{0.5, 0.5, 0.5, 0.5, 0.5};
  PerYear<std::vector<std::string>> roster;
  roster[0] = {"a", "z"};
  Fixture f(ScorePanel(std::vector<StudentRecord>{student("s", {Slot{{1.0, "a"}}})}, roster), spec);
  GibbsSampler g(f.data, 4);
  std::vector<double> th;
  for (int k = 0; k < 20000; ++k) {
    g.sweep(false, k);
    th.push_back(g.state().theta[0][1]);
  }
  CHECK(std::abs(mean_of(th)) < 0.015);
  CHECK(var_of(th) == doctest::Approx(0.25).epsilon(0.04));
}

TEST_CASE("zero adjusted scores give zero-centred effects") {
  auto spec = quick_spec(ModelKind::mar, 0, 1);
  spec.fixed.mu = PerYear<double>{0, 0, 0, 0, 0};
  Fixture f(ScorePanel(std::vector<StudentRecord>{student("s", {Slot{{0.0, "a"}}, Slot{{0.0, "b"}}}),
                                                  student("t", {Slot{{0.0, "a"}}, Slot{{0.0, "c"}}})}),
            spec);
  GibbsSampler g(f.data, 5);
  double th = 0, de = 0;
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    g.sweep(false, k);
    th += g.state().theta[1][0];
    de += g.state().delta[0];
  }
  CHECK(std::abs(th / n) < 0.02);
  CHECK(std::abs(de / n) < 0.02);
}

TEST_CASE("flat selection: every student-effect proposal is accepted") {
  auto spec = quick_spec(ModelKind::sel, 0, 1);
  spec.fixed.selection_slope_zero = true;
  Fixture f(small_panel(80, 4, 12, 0.3), spec);
  GibbsSampler g(f.data, 6);
  for (int k = 0; k < 50; ++k) g.sweep(k < 25, k);
  CHECK(g.delta_acceptance_rate() == 1.0);
  CHECK(g.state().sel_beta[0] == 0.0);
}

TEST_CASE("step sizes adapt during burn-in and are frozen afterwards") {
  auto spec = quick_spec(ModelKind::sel, 0, 1);
  spec.settings.adapt_interval = 10;
  Fixture f(small_panel(150, 5, 13, 0.3), spec);
  GibbsSampler g(f.data, 7);
  const auto initial = g.selection_step_sizes();
  for (int k = 0; k < 200; ++k) g.sweep(true, k);
  const auto adapted = g.selection_step_sizes();
  CHECK(adapted != initial);
  for (int k = 0; k < 200; ++k) {
    g.sweep(false, k);
    CHECK(g.selection_step_sizes() == adapted);
  }
}

TEST_CASE("same seed, same archive") {
  auto spec = quick_spec(ModelKind::sel, 30, 30, 2);
  Fixture f(small_panel(60, 4, 14, 0.3), spec);
  const auto a = run_chains(f.data, true);
  const auto b = run_chains(f.data, false);
  REQUIRE(a.chains.size() == 2);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(a.chains[c].draws == b.chains[c].draws);
    CHECK(a.chains[c].loglik_score == b.chains[c].loglik_score);
    CHECK(a.chains[c].final_state == b.chains[c].final_state);
  }
  CHECK(a.chains[0].draws != a.chains[1].draws);
}

TEST_CASE("retained draws respect the prior supports") {
  for (auto kind : {ModelKind::mar, ModelKind::sel2, ModelKind::pmix}) {
    auto spec = quick_spec(kind, 50, 200);
    spec.pattern_threshold = 5;
    Fixture f(small_panel(120, 5, 15, 0.25), spec);
    const auto arch = run_chains(f.data, false);
    for (std::size_t p = 0; p < arch.names.size(); ++p) {
      const auto& name = arch.names[p];
      double upper = 0;
      if (name.rfind("tau", 0) == 0) upper = spec.prior.tau_upper;
      if (name.rfind("nu", 0) == 0) upper = spec.prior.nu_upper;
      if (name.rfind("sigma", 0) == 0) upper = spec.prior.sigma_upper;
      if (upper == 0) continue;
      for (double x : arch.pooled(p)) {
        CHECK(x > 0.0);
        CHECK(x < upper);
      }
    }
  }
}

TEST_CASE("all-complete PMIX fit reproduces the MAR fit") {
  const auto panel = small_panel(100, 4, 16);
  auto mar = quick_spec(ModelKind::mar, 100, 300);
  auto pmix = mar;
  pmix.kind = ModelKind::pmix;
  Fixture fm(panel, mar), fp(panel, pmix);
  const auto am = summarize(run_chains(fm.data, false));
  const auto ap = summarize(run_chains(fp.data, false));
  REQUIRE(am.size() == ap.size());
  for (std::size_t k = 0; k < am.size(); ++k) {
    // one pattern group: names gain a group index but the chain is the same
    CHECK(am[k].mean == doctest::Approx(ap[k].mean).epsilon(1e-9));
  }
}

TEST_CASE("student order does not change the posterior beyond Monte Carlo error") {
  const auto panel = small_panel(400, 20, 17, 0.2);
  auto students = panel.students();
  std::reverse(students.begin(), students.end());
  const ScorePanel reversed(students);
  auto spec = quick_spec(ModelKind::mar, 500, 3000);
  Fixture fa(panel, spec), fb(reversed, spec);
  const auto a = summarize(run_chains(fa.data, false));
  const auto b = summarize(run_chains(fb.data, false));
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    REQUIRE(a[k].name == b[k].name);
    if (a[k].name.rfind("theta", 0) == 0) continue;
    const double se = std::hypot(a[k].mcse, b[k].mcse);
    CHECK_MESSAGE(std::abs(a[k].mean - b[k].mean) < 4 * se, a[k].name);
  }
}

TEST_CASE("SEL2 recovers intercepts with a flat truth slope") {
  GeneratorConfig g;
  g.students = 1500;
  g.teachers_per_year = 50;
  g.seed = 18;
  auto sim = simulate_panel(g);
  MissingnessMechanism m;
  m.kind = MechanismKind::sel2;
  m.a = {1, 1, 1, 1, 1};
  m.beta = {0, 0, 0, 0, 0};
  const auto panel = apply_missingness(sim.panel, sim.truth, m, 19);
  auto spec = quick_spec(ModelKind::sel2, 1000, 1500);
  Fixture f(panel, spec);
  const auto s = summarize(run_chains(f.data, false));
  std::size_t checked = 0;
  for (const auto& p : s)
    if (p.name.rfind("a[", 0) == 0 || p.name.rfind("beta[", 0) == 0) {
      const double truth = p.name[0] == 'a' ? 1.0 : 0.0;
      CHECK_MESSAGE(std::abs(p.mean - truth) < 3 * p.sd, p.name);
      ++checked;
    }
  CHECK(checked == 10);
}

TEST_CASE("non-finite data is reported with the iteration") {
  auto spec = quick_spec(ModelKind::mar, 0, 1);
  Fixture f(ScorePanel(std::vector<StudentRecord>{student("s", {Slot{{1.0, "a"}}})}), spec);
  GibbsSampler g(f.data, 1);
  auto st = g.state();
  st.mu[0][0] = std::numeric_limits<double>::infinity();
  g.set_state(st);
  try {
    g.sweep(false, 7);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("iteration 7") != std::string::npos);
  }
}
