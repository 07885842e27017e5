#pragma once

// Fixed-variance teacher-effect estimator and per-score leverage weights.
//
// With means and variance components held fixed and the student effect
// integrated out, student i's adjusted scores e_i = Y_i - mu have covariance
// R_i = nu^2 11' + diag(sigma_t^2) around Z_i theta. theta-hat = E[theta | Y]
// solves (Z' R^-1 Z + T^-1) theta = Z' R^-1 e. The weight of one score is the
// matching diagonal entry of R_i^-1.

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "mnarvam/linkage.hpp"
#include "mnarvam/patterns.hpp"
#include "mnarvam/score_panel.hpp"

namespace mnarvam {

/// One row per group: a single row for MAR-type models, one per pattern group
/// (in PatternGrouping order) for PMIX. nu2 of 0 means no student effect.
struct VarianceProfile {
  std::vector<double> nu2;
  std::vector<PerYear<double>> sigma2;
  PerYear<double> tau2{};
  std::array<double, kAlphaCount> alpha{};

  /// Single-group profile from standard deviations.
  static VarianceProfile from_sds(double nu, const PerYear<double>& sigma, const PerYear<double>& tau,
                                  const std::array<double, kAlphaCount>& alpha);
  std::size_t groups() const { return nu2.size(); }
  /// Throws ConfigError on non-positive sigma2/tau2, negative nu2 or ragged rows.
  void validate() const;
};

/// Diagonal of R^-1 for the pattern's observed years (ascending year).
std::vector<double> leverage_weights(ResponsePattern pattern, double nu2, const PerYear<double>& sigma2);

/// For n = 1..5: the mean over all patterns with n scores of each pattern's mean weight.
PerYear<double> average_weights_by_count(double nu2, const PerYear<double>& sigma2);

struct TeacherEffect {
  int year = 0;
  std::string teacher_id;
  double estimate = 0.0;
};

/// `means[g][t]` is mu_t (or mu_kt); `student_group[i]` selects the profile
/// and mean row of student i (empty: every student in group 0).
std::vector<TeacherEffect> gls_teacher_effects(const ScorePanel& panel, const Design& design,
                                               const VarianceProfile& profile,
                                               const std::vector<PerYear<double>>& means,
                                               const std::vector<std::size_t>& student_group = {});

/// Group position of every student under a grouping.
std::vector<std::size_t> student_groups(const ScorePanel& panel, const PatternGrouping& grouping);

struct ScoreWeight {
  std::string student_id;
  int year = 0;
  int n_observed = 0;
  double weight = 0.0;
};

struct ClassroomWeight {
  int year = 0;
  std::string teacher_id;
  std::size_t students = 0;  // linked students with a score that year
  double mean_weight = 0.0;  // NaN when no linked student has a score
  double complete_proportion = 0.0;
};

struct WeightReport {
  PerYear<double> average_by_count{};
  std::vector<ScoreWeight> scores;
  std::vector<ClassroomWeight> classrooms;
};

WeightReport weight_report(const ScorePanel& panel, double nu2, const PerYear<double>& sigma2);

void write_average_weights_csv(const PerYear<double>& averages, std::ostream& out);
void write_score_weights_csv(const std::vector<ScoreWeight>& rows, std::ostream& out);
void write_classroom_weights_csv(const std::vector<ClassroomWeight>& rows, std::ostream& out);
void write_teacher_effects_csv(const std::vector<TeacherEffect>& rows, std::ostream& out);

}  // namespace mnarvam
