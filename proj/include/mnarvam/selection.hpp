#pragma once

#include <span>

#include "mnarvam/model.hpp"

namespace mnarvam {

double logistic(double x);
/// log(logistic(x)), stable for large |x|.
double log_logistic(double x);

/// Log Pr(n | delta) under the number-of-scores model.
///
/// hazard:     Pr(n = k) = h_k * prod_{j<k} (1 - h_j), h_j = logistic(a_j + beta*delta), h_5 = 1.
/// cumulative: Pr(n <= k) = logistic(a_k + beta*delta); returns -inf if a cell probability is not positive.
/// `a` holds a_1..a_4.
double selection_loglik_count(int n_observed, double delta, std::span<const double> a, double beta,
                              SelectionForm form);

/// Log Pr(r | delta) with independent years: r_t ~ Bernoulli(logistic(a_t + beta_t*delta)).
double selection_loglik_flags(const PerYear<bool>& flags, double delta, std::span<const double> a,
                              std::span<const double> beta);

/// Pr(n = k | delta), k = 1..5, under the hazard form.
PerYear<double> hazard_count_probabilities(double delta, std::span<const double> a, double beta);

}  // namespace mnarvam
