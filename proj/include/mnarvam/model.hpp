#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mnarvam/linkage.hpp"
#include "mnarvam/score_panel.hpp"

namespace mnarvam {

enum class ModelKind { mar, sel, sel2, pmix };

std::string to_string(ModelKind kind);
/// Accepts "MAR", "SEL", "SEL2", "PMIX" (any case).
ModelKind parse_model_kind(const std::string& name);

/// How the number-of-scores model of SEL turns (a, beta, delta) into
/// Pr(n = k). `hazard` is the continuation-ratio form; `cumulative` is the
/// literal Pr(n <= k) = logistic(a_k + beta * delta) and can be invalid.
enum class SelectionForm { hazard, cumulative };

std::string to_string(SelectionForm form);
SelectionForm parse_selection_form(const std::string& name);

struct PriorSpec {
  double mean_sd = 1e3;  // mu and alpha ~ N(0, mean_sd^2)
  double tau_upper = 0.7;
  double nu_upper = 2.0;
  double sigma_upper = 1.0;
  double sel_coef_var = 100.0;
  double sel2_coef_var = 10.0;

  void validate() const;
};

struct SamplerSettings {
  int chains = 3;
  int burn_in = 5000;
  int retained = 5000;
  int thin = 1;
  std::uint64_t seed = 20100405;
  /// Burn-in iterations between step-size adjustments of the selection RW proposals.
  int adapt_interval = 50;
  /// Keep every retained draw of every student effect (memory heavy); moments are always kept.
  bool store_student_draws = false;

  int draws_per_chain() const { return retained / thin; }
  void validate() const;
};

/// Parameters held constant at the given values instead of being sampled.
struct FixedParameters {
  std::optional<PerYear<double>> mu;
  std::optional<std::array<double, kAlphaCount>> alpha;
  std::optional<PerYear<double>> tau;
  std::optional<double> nu;
  std::optional<PerYear<double>> sigma;
  /// SEL: beta = 0; SEL2: every beta_t = 0.
  bool selection_slope_zero = false;

  bool any() const { return mu || alpha || tau || nu || sigma || selection_slope_zero; }
};

struct ModelSpec {
  ModelKind kind = ModelKind::mar;
  SelectionForm selection_form = SelectionForm::hazard;
  PriorSpec prior{};
  SamplerSettings settings{};
  FixedParameters fixed{};
  int pattern_threshold = 25;

  void validate() const;
};

/// Number of selection intercepts / slopes for a model (0 when not a selection model).
int selection_intercept_count(ModelKind kind);
int selection_slope_count(ModelKind kind);

/// One full set of unknowns. For MAR/SEL/SEL2 `mu`, `nu` and `sigma` have one
/// row; for PMIX they have one row per pattern group. Entries for years a
/// PMIX group does not estimate are NaN, as is nu for single-score groups.
struct ParameterState {
  std::vector<PerYear<double>> mu;
  std::array<double, kAlphaCount> alpha{};
  PerYear<std::vector<double>> theta;
  std::vector<double> delta;
  PerYear<double> tau{};
  std::vector<double> nu;
  std::vector<PerYear<double>> sigma;
  std::vector<double> sel_a;
  std::vector<double> sel_beta;

  friend bool operator==(const ParameterState&, const ParameterState&) = default;
};

}  // namespace mnarvam
