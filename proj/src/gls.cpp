#include "mnarvam/gls.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <limits>
#include <ostream>

#include "mnarvam/csv.hpp"
#include "mnarvam/errors.hpp"

namespace mnarvam {

namespace {

/// R^-1 for R = nu2 11' + diag(s2), by Sherman-Morrison.
Eigen::MatrixXd residual_precision(double nu2, const std::vector<double>& s2) {
  const auto n = static_cast<Eigen::Index>(s2.size());
  Eigen::VectorXd d(n);
  for (Eigen::Index k = 0; k < n; ++k) d[k] = 1.0 / s2[static_cast<std::size_t>(k)];
  Eigen::MatrixXd out = d.asDiagonal();
  if (nu2 > 0.0) out -= (nu2 / (1.0 + nu2 * d.sum())) * d * d.transpose();
  return out;
}

}  // namespace

VarianceProfile VarianceProfile::from_sds(double nu, const PerYear<double>& sigma, const PerYear<double>& tau,
                                          const std::array<double, kAlphaCount>& alpha) {
  VarianceProfile p;
  p.nu2 = {nu * nu};
  PerYear<double> s2{};
  for (int t = 0; t < kYears; ++t) {
    s2[t] = sigma[t] * sigma[t];
    p.tau2[t] = tau[t] * tau[t];
  }
  p.sigma2 = {s2};
  p.alpha = alpha;
  return p;
}

void VarianceProfile::validate() const {
  if (nu2.empty() || nu2.size() != sigma2.size()) throw ConfigError("variance profile needs one nu2 and sigma2 row per group");
  for (std::size_t g = 0; g < nu2.size(); ++g) {
    if (!(nu2[g] >= 0.0)) throw ConfigError("student-effect variance must be nonnegative");
    for (int t = 0; t < kYears; ++t)
      if (!std::isnan(sigma2[g][t]) && !(sigma2[g][t] > 0.0)) throw ConfigError("residual variances must be positive");
  }
  for (int t = 0; t < kYears; ++t)
    if (!(tau2[t] > 0.0)) throw ConfigError("teacher-effect variances must be positive");
}

std::vector<double> leverage_weights(ResponsePattern pattern, double nu2, const PerYear<double>& sigma2) {
  if (!(nu2 >= 0.0)) throw ConfigError("student-effect variance must be nonnegative");
  const auto years = pattern.observed_years();
  std::vector<double> s2;
  for (int t : years) {
    if (!(sigma2[t] > 0.0)) throw ConfigError("residual variances must be positive");
    s2.push_back(sigma2[t]);
  }
  const auto precision = residual_precision(nu2, s2);
  std::vector<double> w(years.size());
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = precision(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  return w;
}

PerYear<double> average_weights_by_count(double nu2, const PerYear<double>& sigma2) {
  PerYear<double> sum{};
  PerYear<int> count{};
  for (const auto& pattern : ResponsePattern::all()) {
    const auto w = leverage_weights(pattern, nu2, sigma2);
    double mean = 0.0;
    for (double x : w) mean += x;
    mean /= static_cast<double>(w.size());
    const int n = pattern.n_observed();
    sum[n - 1] += mean;
    ++count[n - 1];
  }
  PerYear<double> out{};
  for (int k = 0; k < kYears; ++k) out[k] = sum[k] / count[k];
  return out;
}

std::vector<std::size_t> student_groups(const ScorePanel& panel, const PatternGrouping& grouping) {
  std::vector<std::size_t> out;
  out.reserve(panel.size());
  for (const auto& s : panel.students()) out.push_back(grouping.group_of(pattern_of(s)));
  return out;
}

std::vector<TeacherEffect> gls_teacher_effects(const ScorePanel& panel, const Design& design,
                                               const VarianceProfile& profile,
                                               const std::vector<PerYear<double>>& means,
                                               const std::vector<std::size_t>& student_group) {
  profile.validate();
  if (means.size() != profile.groups()) throw ConfigError("need one mean row per profile group");
  if (!student_group.empty() && student_group.size() != panel.size())
    throw ConsistencyError("student group vector does not match the panel");
  if (design.student_begin.size() != panel.size() + 1) throw ConsistencyError("design was not built from this panel");

  PerYear<std::size_t> offset{};
  std::size_t n_teachers = 0;
  for (int t = 0; t < kYears; ++t) {
    offset[t] = n_teachers;
    n_teachers += design.teacher_counts[t];
  }

  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_teachers));
  for (int t = 0; t < kYears; ++t)
    for (std::size_t j = 0; j < design.teacher_counts[t]; ++j)
      triplets.emplace_back(offset[t] + j, offset[t] + j, 1.0 / profile.tau2[t]);

  auto weight = [&](int slot) { return slot == kCurrentYearWeight ? 1.0 : profile.alpha[slot]; };
  for (std::size_t i = 0; i < panel.size(); ++i) {
    const std::size_t g = student_group.empty() ? 0 : student_group[i];
    if (g >= profile.groups()) throw ConsistencyError("student group outside the profile");
    const std::size_t begin = design.student_begin[i], end = design.student_begin[i + 1];
    if (begin == end) continue;
    std::vector<double> s2;
    Eigen::VectorXd e(static_cast<Eigen::Index>(end - begin));
    for (std::size_t r = begin; r < end; ++r) {
      const int t = design.rows[r].year;
      const double var = profile.sigma2[g][t], mu = means[g][t];
      if (!(var > 0.0) || !std::isfinite(mu)) throw ConfigError("profile does not cover an observed group-year");
      s2.push_back(var);
      e[static_cast<Eigen::Index>(r - begin)] = design.rows[r].score - mu;
    }
    const auto P = residual_precision(profile.nu2[g], s2);
    const Eigen::VectorXd Pe = P * e;
    for (std::size_t a = begin; a < end; ++a) {
      const auto ia = static_cast<Eigen::Index>(a - begin);
      for (const auto& ca : design.rows[a].contributions) {
        const std::size_t ta = offset[ca.effect.year] + ca.effect.teacher_slot;
        const double wa = weight(ca.weight_slot);
        rhs[static_cast<Eigen::Index>(ta)] += wa * Pe[ia];
        for (std::size_t b = begin; b < end; ++b) {
          const auto ib = static_cast<Eigen::Index>(b - begin);
          for (const auto& cb : design.rows[b].contributions) {
            const std::size_t tb = offset[cb.effect.year] + cb.effect.teacher_slot;
            triplets.emplace_back(ta, tb, wa * weight(cb.weight_slot) * P(ia, ib));
          }
        }
      }
    }
  }

  const auto n = static_cast<Eigen::Index>(n_teachers);
  Eigen::SparseMatrix<double> H(n, n);
  H.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(n);
  if (n > 0) {
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> solver(H);
    if (solver.info() != Eigen::Success) throw NumericalError("GLS normal equations are not positive definite");
    theta = solver.solve(rhs);
  }

  std::vector<TeacherEffect> out;
  out.reserve(n_teachers);
  for (int t = 0; t < kYears; ++t)
    for (std::size_t j = 0; j < design.teacher_counts[t]; ++j)
      out.push_back({t, panel.teachers_by_year()[t][j], theta[static_cast<Eigen::Index>(offset[t] + j)]});
  return out;
}

WeightReport weight_report(const ScorePanel& panel, double nu2, const PerYear<double>& sigma2) {
  WeightReport report;
  report.average_by_count = average_weights_by_count(nu2, sigma2);
  std::vector<PerYear<double>> student_weight(panel.size());
  for (std::size_t i = 0; i < panel.size(); ++i) {
    const auto& s = panel.students()[i];
    const auto pattern = pattern_of(s);
    const auto w = leverage_weights(pattern, nu2, sigma2);
    const auto years = pattern.observed_years();
    for (std::size_t k = 0; k < years.size(); ++k) {
      student_weight[i][years[k]] = w[k];
      report.scores.push_back({s.student_id, years[k], s.n_observed, w[k]});
    }
  }
  for (const auto& roster : classroom_rosters(panel)) {
    ClassroomWeight c;
    c.year = roster.year;
    c.teacher_id = roster.teacher_id;
    c.complete_proportion = roster.complete_proportion;
    double sum = 0.0;
    for (auto i : roster.students)
      if (panel.students()[i].response_flags[roster.year]) {
        sum += student_weight[i][roster.year];
        ++c.students;
      }
    c.mean_weight = c.students ? sum / static_cast<double>(c.students) : std::numeric_limits<double>::quiet_NaN();
    report.classrooms.push_back(std::move(c));
  }
  return report;
}

void write_average_weights_csv(const PerYear<double>& averages, std::ostream& out) {
  out << "n_observed,average_weight\n";
  for (int k = 0; k < kYears; ++k) out << k + 1 << ',' << csv::fixed(averages[k]) << '\n';
}

void write_score_weights_csv(const std::vector<ScoreWeight>& rows, std::ostream& out) {
  out << "stuid,year,n_observed,weight\n";
  for (const auto& r : rows) out << r.student_id << ',' << r.year << ',' << r.n_observed << ',' << csv::fixed(r.weight) << '\n';
}

void write_classroom_weights_csv(const std::vector<ClassroomWeight>& rows, std::ostream& out) {
  out << "year,tchid,students,mean_weight,complete_proportion\n";
  for (const auto& r : rows)
    out << r.year << ',' << r.teacher_id << ',' << r.students << ',' << csv::fixed(r.mean_weight) << ','
        << csv::fixed(r.complete_proportion) << '\n';
}

void write_teacher_effects_csv(const std::vector<TeacherEffect>& rows, std::ostream& out) {
  out << "year,tchid,theta_hat\n";
  for (const auto& r : rows) out << r.year << ',' << r.teacher_id << ',' << csv::exact(r.estimate) << '\n';
}

}  // namespace mnarvam
