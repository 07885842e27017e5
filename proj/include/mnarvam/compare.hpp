#pragma once

// Cross-model comparisons computed from posterior summaries.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mnarvam/archive.hpp"
#include "mnarvam/diagnostics.hpp"
#include "mnarvam/linkage.hpp"
#include "mnarvam/model.hpp"
#include "mnarvam/patterns.hpp"
#include "mnarvam/score_panel.hpp"

namespace mnarvam {

struct ModelSummary {
  ModelKind kind = ModelKind::mar;
  std::string label;
  std::vector<PosteriorSummary> parameters;
  std::vector<PosteriorSummary> students;
  std::vector<DicResult> dic;

  const PosteriorSummary* find(const std::string& name) const;
};

/// "theta[3,t017]" -> (year 2, "t017").
std::optional<std::pair<int, std::string>> parse_theta_name(const std::string& name);
/// "delta[s001]" -> "s001".
std::optional<std::string> parse_delta_name(const std::string& name);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

/// Per-grade correlation of posterior-mean teacher effects. Throws
/// ComparisonError when the two teacher key sets differ.
PerYear<double> teacher_correlations(const ModelSummary& a, const ModelSummary& b);

struct ShiftCell {
  int n_observed = 0;
  std::size_t students = 0;
  double q25 = 0.0, median = 0.0, q75 = 0.0, mean = 0.0;
};

struct StudentShift {
  /// delta_b / nu_b - delta_a / nu_a, panel order.
  std::vector<double> standardized;
  PerYear<ShiftCell> by_count{};
  /// var(delta_b - delta_a) / var(observed scores).
  double variance_share = 0.0;
  /// Mean posterior SD of delta under b divided by that under a.
  double sd_ratio = 0.0;
};

/// Each model's delta means are divided by that model's posterior mean of nu.
StudentShift student_effect_shift(const ModelSummary& a, const ModelSummary& b, const ScorePanel& panel);

struct GradientPoint {
  int year = 0;
  std::string teacher_id;
  double complete_proportion = 0.0;
  double difference = 0.0;  // theta_b - theta_a
};

struct SlopeFit {
  std::size_t n = 0;
  double slope = 0.0;
  double se = 0.0;
};

/// Least-squares slope of y on x (with intercept). NaN slope when x is constant.
SlopeFit least_squares_slope(const std::vector<double>& x, const std::vector<double>& y);

struct CompletenessGradient {
  std::vector<GradientPoint> points;
  PerYear<SlopeFit> by_grade{};
  /// Common slope with a separate intercept per grade.
  SlopeFit pooled;
};

CompletenessGradient completeness_gradient(const ModelSummary& a, const ModelSummary& b,
                                           const std::vector<ClassroomRoster>& rosters);

/// Variance of classroom means of (delta_b - delta_a) as a share of the variance
/// of classroom-mean adjusted scores (Y - mu under a), per grade.
PerYear<double> classroom_shift_share(const ModelSummary& a, const ModelSummary& b, const ScorePanel& panel);

struct PatternMeanRow {
  int group = 0;
  std::string patterns;  // "11111" or "other"
  std::size_t students = 0;
  int year = 0;
  double mean = 0.0;
  double sd = 0.0;
};

/// One row per (group, estimated year). Throws ComparisonError for a non-PMIX summary.
std::vector<PatternMeanRow> pattern_means_table(const ModelSummary& pmix, const PatternGrouping& grouping);

void write_correlations_csv(const PerYear<double>& r, std::ostream& out);
void write_shift_csv(const StudentShift& shift, std::ostream& out);
void write_gradient_csv(const CompletenessGradient& g, std::ostream& out);
void write_gradient_points_csv(const CompletenessGradient& g, std::ostream& out);
void write_pattern_means_csv(const std::vector<PatternMeanRow>& rows, std::ostream& out);

/// DIC is comparable only between models with the same student-effect
/// structure, so any pair involving PMIX is refused.
bool dic_comparable(ModelKind a, ModelKind b);

/// Text report for a pair of fits. `panel` enables the student and classroom analyses.
std::string comparison_report(const ModelSummary& a, const ModelSummary& b, const ScorePanel* panel);

}  // namespace mnarvam
