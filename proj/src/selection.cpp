#include "mnarvam/selection.hpp"

#include <cmath>
#include <limits>

#include "mnarvam/errors.hpp"

namespace mnarvam {

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_logistic(double x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

double selection_loglik_count(int n_observed, double delta, std::span<const double> a, double beta,
                              SelectionForm form) {
  if (n_observed < 1 || n_observed > kYears) throw ValidationError("number of observed scores must be in 1..5");
  if (a.size() != kYears - 1) throw ConsistencyError("count selection model needs four intercepts");
  const int k = n_observed - 1;  // 0-based category
  if (form == SelectionForm::hazard) {
    double ll = 0.0;
    for (int j = 0; j < k; ++j) ll += log_logistic(-(a[j] + beta * delta));
    if (k < kYears - 1) ll += log_logistic(a[k] + beta * delta);
    return ll;
  }
  const double upper = k < kYears - 1 ? logistic(a[k] + beta * delta) : 1.0;
  const double lower = k > 0 ? logistic(a[k - 1] + beta * delta) : 0.0;
  const double p = upper - lower;
  if (!(p > 0.0)) return -std::numeric_limits<double>::infinity();
  return std::log(p);
}

double selection_loglik_flags(const PerYear<bool>& flags, double delta, std::span<const double> a,
                              std::span<const double> beta) {
  if (a.size() != kYears || beta.size() != kYears) throw ConsistencyError("year selection model needs five a_t and beta_t");
  double ll = 0.0;
  for (int t = 0; t < kYears; ++t) {
    const double x = a[t] + beta[t] * delta;
    ll += flags[t] ? log_logistic(x) : log_logistic(-x);
  }
  return ll;
}

PerYear<double> hazard_count_probabilities(double delta, std::span<const double> a, double beta) {
  PerYear<double> p{};
  for (int n = 1; n <= kYears; ++n) p[n - 1] = std::exp(selection_loglik_count(n, delta, a, beta, SelectionForm::hazard));
  return p;
}

}  // namespace mnarvam
