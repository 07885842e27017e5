#pragma once

// Metropolis-within-Gibbs sampler for the MAR, SEL, SEL2 and PMIX models.
//
// One sweep:
//   1. location block: per year, the annual mean(s) and that year's teacher
//      effects are drawn jointly from their Gaussian conditional (the
//      precision matrix is an arrow, so the joint draw is a small Schur
//      complement); then each out-year weight; then the student effects
//      (Gibbs for MAR/PMIX, independence Metropolis for SEL/SEL2).
//   2. variance block: every SD under its uniform prior.
//   3. SEL/SEL2: random-walk Metropolis on the selection coefficients.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mnarvam/linkage.hpp"
#include "mnarvam/model.hpp"
#include "mnarvam/patterns.hpp"
#include "mnarvam/score_panel.hpp"

namespace mnarvam {

using Rng = std::mt19937_64;

/// Read-only, flattened view of (panel, design, model) used by the sampler.
struct SamplerData {
  struct Observation {
    std::uint32_t student = 0;
    std::uint16_t group = 0;
    std::int8_t year = 0;
    double y = 0.0;
    std::int32_t current_teacher = -1;  // local slot in this year, -1 if unknown
    std::uint32_t first_link = 0, last_link = 0;
  };
  struct Link {
    std::uint32_t teacher = 0;  // local slot within `year`
    std::int8_t year = 0;
    std::int8_t weight_slot = kCurrentYearWeight;
  };
  struct TeacherIncidence {
    std::uint32_t obs = 0;
    std::int8_t weight_slot = kCurrentYearWeight;
  };
  struct AlphaIncidence {
    std::uint32_t obs = 0;
    std::uint32_t teacher = 0;  // local slot in the prior year
  };

  ModelSpec spec;
  std::vector<std::string> student_ids;
  PerYear<std::vector<std::string>> teacher_ids;
  PerYear<std::size_t> teacher_offset{};

  std::vector<Observation> obs;
  std::vector<Link> links;
  std::vector<std::uint32_t> student_obs_begin;    // size students + 1
  std::vector<std::uint32_t> teacher_incidence_begin;  // CSR over global teacher index
  std::vector<TeacherIncidence> teacher_incidence;
  std::array<std::vector<AlphaIncidence>, kAlphaCount> alpha_incidence;
  PerYear<std::vector<std::uint32_t>> obs_by_year;

  std::vector<std::uint8_t> n_observed;
  std::vector<PerYear<bool>> flags;
  std::vector<std::uint16_t> student_group;

  /// MAR/SEL/SEL2 use a single group. PMIX groups are the non-empty pattern groups.
  std::vector<int> group_labels;
  std::vector<PerYear<bool>> group_years;
  std::vector<bool> group_has_delta;

  std::size_t student_count() const { return student_ids.size(); }
  std::size_t group_count() const { return group_labels.size(); }
  std::size_t teacher_count(int year) const { return teacher_ids[year].size(); }
  bool has_delta(std::size_t student) const { return group_has_delta[student_group[student]]; }
  bool pmix() const { return spec.kind == ModelKind::pmix; }
};

/// PMIX uses `grouping` when given, otherwise groups by spec.pattern_threshold.
SamplerData make_sampler_data(const ScorePanel& panel, const Design& design, const ModelSpec& spec,
                              const PatternGrouping* grouping = nullptr);

/// Starting point: annual (or group-year) observed means, zero effects, SDs at the
/// middle of their support, zero selection coefficients; fixed values override.
ParameterState initial_state(const SamplerData& data);

struct LogLikelihood {
  double score = 0.0;
  double selection = 0.0;
  double total() const { return score + selection; }
};

/// Gaussian log density of the observed scores given every unknown, plus the
/// selection term for SEL/SEL2.
LogLikelihood conditional_loglik(const ParameterState& state, const SamplerData& data);

/// One draw of an SD s on (0, upper) from the density proportional to
/// s^(-m) exp(-ss / (2 s^2)), i.e. m Gaussian terms with sum of squares `ss`
/// under a uniform prior on s. Truncated conjugate draw with rejection; slice
/// sampling from `current` after 100 rejections; uniform when m == 0.
double draw_bounded_sd(std::size_t m, double ss, double upper, double current, Rng& rng);

/// Flat naming of the monitored (sampled, non-student) parameters.
class ParameterLayout {
 public:
  explicit ParameterLayout(const SamplerData& data);

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  void flatten(const ParameterState& state, std::span<double> row) const;
  /// Overwrites the monitored entries of `state` from `row`.
  void unflatten(std::span<const double> row, ParameterState& state) const;

 private:
  enum class Kind : std::uint8_t { mu, alpha, tau, nu, sigma, sel_a, sel_beta, theta };
  struct Entry {
    Kind kind;
    std::uint32_t i;
    std::uint32_t j;
  };
  double& slot(ParameterState& s, const Entry& e) const;
  double value(const ParameterState& s, const Entry& e) const;

  std::vector<std::string> names_;
  std::vector<Entry> entries_;
};

std::string student_effect_name(const std::string& student_id);

class GibbsSampler {
 public:
  GibbsSampler(const SamplerData& data, std::uint64_t seed);
  GibbsSampler(const SamplerData& data, ParameterState initial, std::uint64_t seed);

  const ParameterState& state() const { return state_; }
  void set_state(ParameterState state);

  /// Means and teacher effects (blocked per year), out-year weights, and, for
  /// MAR/PMIX, the student effects.
  void update_location_block();
  void update_variance_components();
  /// SEL/SEL2 student effects: Gaussian full conditional as an independence
  /// proposal, accepted on the ratio of the selection terms.
  void mh_update_delta();
  /// Componentwise random walk on (a, beta); adapts step sizes while `adapting`.
  void mh_update_selection_params(bool adapting);

  /// One full sweep. Throws NumericalError with `iteration` in the message on non-finite residuals.
  void sweep(bool burn_in, long iteration = -1);

  LogLikelihood loglik() const;

  double delta_acceptance_rate() const;
  std::vector<double> selection_acceptance_rates() const;
  const std::vector<double>& selection_step_sizes() const { return step_; }
  void reset_acceptance_counters();

  Rng& rng() { return rng_; }

 private:
  void recompute_residuals();
  void update_year_block(int year);
  void update_alpha(int slot);
  void gibbs_update_delta();
  double sigma_of(const SamplerData::Observation& o) const;
  double selection_term(std::size_t student, double delta) const;
  double selection_total() const;
  double selection_year_total(int year) const;
  double normal();
  double uniform();

  const SamplerData* data_;
  ParameterState state_;
  std::vector<double> resid_;
  Rng rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};

  std::size_t delta_accepted_ = 0, delta_tried_ = 0;
  std::vector<double> step_;
  std::vector<std::size_t> sel_accepted_, sel_tried_;
  std::vector<std::size_t> window_accepted_, window_tried_;
  long adapt_counter_ = 0;
};

/// Per-chain seed: splitmix64 of the root seed offset by the chain index, so a
/// chain's stream does not depend on how many other chains run.
std::uint64_t chain_seed(std::uint64_t root_seed, int chain_index);

}  // namespace mnarvam
