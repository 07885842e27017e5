#pragma once

// Synthetic panels from the layered teacher-effect model, and missingness
// mechanisms that delete scores from a complete panel.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mnarvam/linkage.hpp"
#include "mnarvam/score_panel.hpp"

namespace mnarvam {

struct TruthProfile {
  PerYear<double> mu{3.39, 3.98, 4.70, 5.29, 6.00};
  PerYear<double> tau{0.65, 0.57, 0.55, 0.43, 0.42};
  double nu = 0.71;
  PerYear<double> sigma{0.58, 0.47, 0.45, 0.37, 0.37};
  /// alpha[2,1], alpha[3,1], alpha[3,2], alpha[4,1], ..., alpha[5,4].
  std::array<double, kAlphaCount> alpha{0.16, 0.15, 0.20, 0.12, 0.11, 0.14, 0.11, 0.14, 0.09, 0.34};
};

enum class Assignment { random, sorted };
std::string to_string(Assignment a);
Assignment parse_assignment(const std::string& name);

struct GeneratorConfig {
  std::size_t students = 2000;
  std::size_t teachers_per_year = 100;
  TruthProfile truth{};
  Assignment assignment = Assignment::random;
  /// Sorted assignment ranks students by (1 - mixing) * delta / nu + mixing * N(0, 1).
  double mixing = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TruthRecord {
  TruthProfile profile;
  std::vector<std::string> student_ids;
  std::vector<double> delta;
  PerYear<std::vector<std::string>> teacher_ids;
  PerYear<std::vector<double>> theta;

  /// Named values using the fitted-parameter naming scheme (mu[1], alpha[2,1],
  /// tau[1], nu, sigma[1], theta[1,id], delta[id]) plus `extra`.
  std::map<std::string, double> named() const;
  std::map<std::string, double> extra;
};

struct SimulatedPanel {
  ScorePanel panel;
  TruthRecord truth;
};

/// Complete panel: every student has all five scores and links.
SimulatedPanel simulate_panel(const GeneratorConfig& config);

enum class MechanismKind { none, mcar, sel_hazard, sel2, score_dependent };
std::string to_string(MechanismKind kind);
MechanismKind parse_mechanism_kind(const std::string& name);

struct MissingnessMechanism {
  MechanismKind kind = MechanismKind::none;
  /// mcar: per-score deletion probability.
  double rate = 0.0;
  /// sel_hazard: a_1..a_4 and a single slope; sel2: a_t and beta_t per year.
  std::vector<double> a;
  std::vector<double> beta;
  /// score_dependent: Pr(observed) = logistic(intercept + coefficient * (Y - mu_t)).
  double intercept = 0.0;
  double coefficient = 0.0;
  /// Remove the teacher link together with a deleted score.
  bool co_delete = true;

  void validate() const;
  /// Selection truth as named values (a[k], beta, beta[t]) for sel_hazard and sel2.
  std::map<std::string, double> named() const;
};

/// Deletes scores from a complete panel. Scores kept are unchanged. A student
/// left with no scores is redrawn until at least one remains. The sel_hazard
/// kind draws n from the hazard model and keeps a contiguous run of n years
/// at a uniformly chosen start.
ScorePanel apply_missingness(const ScorePanel& panel, const TruthRecord& truth, const MissingnessMechanism& mechanism,
                             std::uint64_t seed);

void write_truth_csv(const std::map<std::string, double>& values, std::ostream& out);
std::map<std::string, double> read_truth_csv(std::istream& in);

}  // namespace mnarvam
