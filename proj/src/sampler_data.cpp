#include <cmath>
#include <limits>
#include <numbers>

#include "mnarvam/errors.hpp"
#include "mnarvam/sampler.hpp"
#include "mnarvam/selection.hpp"

namespace mnarvam {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

SamplerData make_sampler_data(const ScorePanel& panel, const Design& design, const ModelSpec& spec,
                              const PatternGrouping* grouping) {
  spec.validate();
  SamplerData d;
  d.spec = spec;

  const auto& students = panel.students();
  if (design.student_begin.size() != students.size() + 1)
    throw ConsistencyError("design was not built from this panel (student count differs)");
  d.student_ids.reserve(students.size());
  for (const auto& s : students) d.student_ids.push_back(s.student_id);

  std::size_t n_teachers = 0;
  for (int t = 0; t < kYears; ++t) {
    d.teacher_ids[t] = panel.teachers_by_year()[t];
    if (design.teacher_counts[t] != d.teacher_ids[t].size())
      throw ConsistencyError("design teacher count differs from the panel roster");
    d.teacher_offset[t] = n_teachers;
    n_teachers += d.teacher_ids[t].size();
  }

  // groups
  d.student_group.assign(students.size(), 0);
  if (spec.kind == ModelKind::pmix) {
    const PatternGrouping local = grouping ? *grouping : group_patterns(panel, spec.pattern_threshold);
    std::vector<int> compact(local.size(), -1);
    for (std::size_t i = 0; i < students.size(); ++i) {
      const auto pos = local.group_of(pattern_of(students[i]));
      if (compact[pos] < 0) compact[pos] = 0;  // mark non-empty
    }
    for (std::size_t g = 0; g < local.size(); ++g) {
      if (compact[g] < 0) continue;
      compact[g] = static_cast<int>(d.group_labels.size());
      d.group_labels.push_back(local.group(g).id);
      d.group_years.push_back(PerYear<bool>{});
      d.group_has_delta.push_back(!local.group(g).single_score());
    }
    for (std::size_t i = 0; i < students.size(); ++i) {
      const int g = compact[local.group_of(pattern_of(students[i]))];
      d.student_group[i] = static_cast<std::uint16_t>(g);
      for (int t = 0; t < kYears; ++t)
        if (students[i].response_flags[t]) d.group_years[g][t] = true;
    }
  } else {
    d.group_labels = {0};
    d.group_years = {PerYear<bool>{true, true, true, true, true}};
    d.group_has_delta = {true};
  }

  d.n_observed.reserve(students.size());
  d.flags.reserve(students.size());
  for (const auto& s : students) {
    d.n_observed.push_back(static_cast<std::uint8_t>(s.n_observed));
    d.flags.push_back(s.response_flags);
  }

  // observations and links, student-major
  d.obs.reserve(design.rows.size());
  d.student_obs_begin.assign(students.size() + 1, 0);
  std::vector<std::uint32_t> teacher_counts(n_teachers, 0);
  std::size_t expected_student = 0;
  for (std::size_t r = 0; r < design.rows.size(); ++r) {
    const auto& row = design.rows[r];
    if (row.student >= students.size() || row.year < 0 || row.year >= kYears)
      throw ConsistencyError("design row out of range");
    if (row.student < expected_student) throw ConsistencyError("design rows are not student-major");
    while (expected_student < row.student) d.student_obs_begin[++expected_student] = static_cast<std::uint32_t>(r);
    SamplerData::Observation o;
    o.student = static_cast<std::uint32_t>(row.student);
    o.group = d.student_group[row.student];
    o.year = static_cast<std::int8_t>(row.year);
    o.y = row.score;
    o.first_link = static_cast<std::uint32_t>(d.links.size());
    for (const auto& c : row.contributions) {
      if (c.effect.year < 0 || c.effect.year > row.year || c.effect.teacher_slot >= d.teacher_ids[c.effect.year].size())
        throw ConsistencyError("design references a teacher outside the roster");
      d.links.push_back({static_cast<std::uint32_t>(c.effect.teacher_slot), static_cast<std::int8_t>(c.effect.year),
                         static_cast<std::int8_t>(c.weight_slot)});
      ++teacher_counts[d.teacher_offset[c.effect.year] + c.effect.teacher_slot];
      if (c.effect.year == row.year) o.current_teacher = static_cast<std::int32_t>(c.effect.teacher_slot);
    }
    o.last_link = static_cast<std::uint32_t>(d.links.size());
    d.obs_by_year[row.year].push_back(static_cast<std::uint32_t>(r));
    d.obs.push_back(o);
  }
  while (expected_student < students.size())
    d.student_obs_begin[++expected_student] = static_cast<std::uint32_t>(design.rows.size());

  d.teacher_incidence_begin.assign(n_teachers + 1, 0);
  for (std::size_t g = 0; g < n_teachers; ++g)
    d.teacher_incidence_begin[g + 1] = d.teacher_incidence_begin[g] + teacher_counts[g];
  d.teacher_incidence.resize(d.teacher_incidence_begin.back());
  std::vector<std::uint32_t> fill(d.teacher_incidence_begin.begin(), d.teacher_incidence_begin.end() - 1);
  for (std::uint32_t o = 0; o < d.obs.size(); ++o)
    for (auto l = d.obs[o].first_link; l < d.obs[o].last_link; ++l) {
      const auto& link = d.links[l];
      const auto global = d.teacher_offset[link.year] + link.teacher;
      d.teacher_incidence[fill[global]++] = {o, link.weight_slot};
      if (link.weight_slot != kCurrentYearWeight) d.alpha_incidence[link.weight_slot].push_back({o, link.teacher});
    }
  return d;
}

ParameterState initial_state(const SamplerData& data) {
  const auto& spec = data.spec;
  const std::size_t groups = data.group_count();
  ParameterState s;

  s.mu.assign(groups, PerYear<double>{});
  std::vector<PerYear<double>> sum(groups, PerYear<double>{});
  std::vector<PerYear<std::size_t>> count(groups, PerYear<std::size_t>{});
  for (const auto& o : data.obs) {
    sum[o.group][o.year] += o.y;
    ++count[o.group][o.year];
  }
  for (std::size_t g = 0; g < groups; ++g)
    for (int t = 0; t < kYears; ++t) {
      if (!data.group_years[g][t])
        s.mu[g][t] = kNaN;
      else
        s.mu[g][t] = count[g][t] ? sum[g][t] / static_cast<double>(count[g][t]) : 0.0;
    }
  if (spec.fixed.mu) s.mu[0] = *spec.fixed.mu;

  s.alpha.fill(0.0);
  if (spec.fixed.alpha) s.alpha = *spec.fixed.alpha;

  for (int t = 0; t < kYears; ++t) s.theta[t].assign(data.teacher_count(t), 0.0);
  s.delta.assign(data.student_count(), 0.0);

  s.tau.fill(spec.prior.tau_upper / 2.0);
  if (spec.fixed.tau) s.tau = *spec.fixed.tau;

  s.nu.assign(groups, spec.prior.nu_upper / 2.0);
  for (std::size_t g = 0; g < groups; ++g)
    if (!data.group_has_delta[g]) s.nu[g] = kNaN;
  if (spec.fixed.nu) s.nu[0] = *spec.fixed.nu;

  s.sigma.assign(groups, PerYear<double>{});
  for (std::size_t g = 0; g < groups; ++g)
    for (int t = 0; t < kYears; ++t) s.sigma[g][t] = data.group_years[g][t] ? spec.prior.sigma_upper / 2.0 : kNaN;
  if (spec.fixed.sigma) s.sigma[0] = *spec.fixed.sigma;

  s.sel_a.assign(selection_intercept_count(spec.kind), 0.0);
  s.sel_beta.assign(selection_slope_count(spec.kind), 0.0);
  return s;
}

LogLikelihood conditional_loglik(const ParameterState& state, const SamplerData& data) {
  static const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  LogLikelihood ll;
  for (const auto& o : data.obs) {
    double pred = state.mu[o.group][o.year];
    for (auto l = o.first_link; l < o.last_link; ++l) {
      const auto& link = data.links[l];
      const double w = link.weight_slot == kCurrentYearWeight ? 1.0 : state.alpha[link.weight_slot];
      pred += w * state.theta[link.year][link.teacher];
    }
    if (data.has_delta(o.student)) pred += state.delta[o.student];
    const double sd = state.sigma[o.group][o.year];
    const double z = (o.y - pred) / sd;
    ll.score += -half_log_2pi - std::log(sd) - 0.5 * z * z;
  }
  if (data.spec.kind == ModelKind::sel) {
    for (std::size_t i = 0; i < data.student_count(); ++i)
      ll.selection += selection_loglik_count(data.n_observed[i], state.delta[i], state.sel_a, state.sel_beta[0],
                                             data.spec.selection_form);
  } else if (data.spec.kind == ModelKind::sel2) {
    for (std::size_t i = 0; i < data.student_count(); ++i)
      ll.selection += selection_loglik_flags(data.flags[i], state.delta[i], state.sel_a, state.sel_beta);
  }
  return ll;
}

// ---------------------------------------------------------------------------

ParameterLayout::ParameterLayout(const SamplerData& data) {
  const auto& spec = data.spec;
  const bool pmix = data.pmix();
  auto add = [&](std::string name, Kind k, std::size_t i, std::size_t j) {
    names_.push_back(std::move(name));
    entries_.push_back({k, static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)});
  };
  auto grade = [](int t) { return std::to_string(t + 1); };

  if (!spec.fixed.mu)
    for (std::size_t g = 0; g < data.group_count(); ++g)
      for (int t = 0; t < kYears; ++t)
        if (data.group_years[g][t])
          add(pmix ? "mu[" + std::to_string(data.group_labels[g]) + "," + grade(t) + "]" : "mu[" + grade(t) + "]",
              Kind::mu, g, t);
  if (!spec.fixed.alpha)
    for (int s = 0; s < kAlphaCount; ++s) add(alpha_name(s), Kind::alpha, s, 0);
  if (!spec.fixed.tau)
    for (int t = 0; t < kYears; ++t) add("tau[" + grade(t) + "]", Kind::tau, t, 0);
  if (!spec.fixed.nu)
    for (std::size_t g = 0; g < data.group_count(); ++g)
      if (data.group_has_delta[g]) add(pmix ? "nu[" + std::to_string(data.group_labels[g]) + "]" : "nu", Kind::nu, g, 0);
  if (!spec.fixed.sigma)
    for (std::size_t g = 0; g < data.group_count(); ++g)
      for (int t = 0; t < kYears; ++t)
        if (data.group_years[g][t])
          add(pmix ? "sigma[" + std::to_string(data.group_labels[g]) + "," + grade(t) + "]" : "sigma[" + grade(t) + "]",
              Kind::sigma, g, t);
  for (int k = 0; k < selection_intercept_count(spec.kind); ++k)
    add("a[" + std::to_string(k + 1) + "]", Kind::sel_a, k, 0);
  if (!spec.fixed.selection_slope_zero) {
    if (spec.kind == ModelKind::sel) add("beta", Kind::sel_beta, 0, 0);
    if (spec.kind == ModelKind::sel2)
      for (int t = 0; t < kYears; ++t) add("beta[" + grade(t) + "]", Kind::sel_beta, t, 0);
  }
  for (int t = 0; t < kYears; ++t)
    for (std::size_t j = 0; j < data.teacher_count(t); ++j)
      add("theta[" + grade(t) + "," + data.teacher_ids[t][j] + "]", Kind::theta, t, j);
}

double& ParameterLayout::slot(ParameterState& s, const Entry& e) const {
  switch (e.kind) {
    case Kind::mu: return s.mu[e.i][e.j];
    case Kind::alpha: return s.alpha[e.i];
    case Kind::tau: return s.tau[e.i];
    case Kind::nu: return s.nu[e.i];
    case Kind::sigma: return s.sigma[e.i][e.j];
    case Kind::sel_a: return s.sel_a[e.i];
    case Kind::sel_beta: return s.sel_beta[e.i];
    case Kind::theta: return s.theta[e.i][e.j];
  }
  throw ConsistencyError("bad layout entry");
}

double ParameterLayout::value(const ParameterState& s, const Entry& e) const {
  return slot(const_cast<ParameterState&>(s), e);
}

void ParameterLayout::flatten(const ParameterState& state, std::span<double> row) const {
  if (row.size() != entries_.size()) throw ConsistencyError("layout row size mismatch");
  for (std::size_t k = 0; k < entries_.size(); ++k) row[k] = value(state, entries_[k]);
}

void ParameterLayout::unflatten(std::span<const double> row, ParameterState& state) const {
  if (row.size() != entries_.size()) throw ConsistencyError("layout row size mismatch");
  for (std::size_t k = 0; k < entries_.size(); ++k) slot(state, entries_[k]) = row[k];
}

std::string student_effect_name(const std::string& student_id) { return "delta[" + student_id + "]"; }

std::uint64_t chain_seed(std::uint64_t root_seed, int chain_index) {
  std::uint64_t z = root_seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(chain_index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace mnarvam
