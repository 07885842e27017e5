#include "mnarvam/sampler.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numbers>

#include "mnarvam/errors.hpp"
#include "mnarvam/selection.hpp"

namespace mnarvam {

namespace {

constexpr int kMaxConjugateRejections = 100;

const std::array<std::pair<int, int>, kAlphaCount>& alpha_table() {
  static const auto table = [] {
    std::array<std::pair<int, int>, kAlphaCount> out{};
    for (int s = 0; s < kAlphaCount; ++s) out[s] = alpha_years(s);
    return out;
  }();
  return table;
}

bool is_selection(ModelKind k) { return k == ModelKind::sel || k == ModelKind::sel2; }

}  // namespace

double draw_bounded_sd(std::size_t m, double ss, double upper, double current, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (m == 0) {
    double s = 0.0;
    while (s <= 0.0) s = upper * unif(rng);
    return s;
  }
  const double dm = static_cast<double>(m);
  if (m >= 2 && ss > 0.0) {
    std::gamma_distribution<double> precision(0.5 * (dm - 1.0), 2.0 / ss);
    for (int attempt = 0; attempt < kMaxConjugateRejections; ++attempt) {
      const double p = precision(rng);
      if (!(p > 0.0)) continue;
      const double s = 1.0 / std::sqrt(p);
      if (s < upper) return s;
    }
  }
  // Slice sampler with shrinkage on (0, upper).
  auto log_density = [&](double s) { return -dm * std::log(s) - ss / (2.0 * s * s); };
  double s0 = current;
  if (!(s0 > 0.0 && s0 < upper)) s0 = 0.5 * upper;
  std::exponential_distribution<double> expo(1.0);
  const double level = log_density(s0) - expo(rng);
  double lo = 0.0, hi = upper;
  for (int iter = 0; iter < 10000; ++iter) {
    const double s = lo + (hi - lo) * unif(rng);
    if (s <= 0.0) continue;
    if (log_density(s) > level) return s;
    (s < s0 ? lo : hi) = s;
  }
  return s0;
}

GibbsSampler::GibbsSampler(const SamplerData& data, std::uint64_t seed)
    : GibbsSampler(data, initial_state(data), seed) {}

GibbsSampler::GibbsSampler(const SamplerData& data, ParameterState initial, std::uint64_t seed)
    : data_(&data), state_(std::move(initial)), rng_(seed) {
  if (data.spec.kind == ModelKind::sel && data.spec.selection_form == SelectionForm::cumulative) {
    // The cumulative form needs increasing intercepts to be a valid
    // distribution; start from equal cell probabilities at delta = 0.
    bool zero = true;
    for (double a : state_.sel_a) zero = zero && a == 0.0;
    if (zero)
      for (int k = 0; k < kYears - 1; ++k) state_.sel_a[k] = std::log((k + 1.0) / (kYears - k - 1.0));
  }
  const std::size_t n_params = state_.sel_a.size() + state_.sel_beta.size();
  step_.assign(n_params, 0.1);
  sel_accepted_.assign(n_params, 0);
  sel_tried_.assign(n_params, 0);
  window_accepted_.assign(n_params, 0);
  window_tried_.assign(n_params, 0);
  recompute_residuals();
}

void GibbsSampler::set_state(ParameterState state) {
  state_ = std::move(state);
  recompute_residuals();
}

double GibbsSampler::normal() { return normal_(rng_); }
double GibbsSampler::uniform() { return uniform_(rng_); }

double GibbsSampler::sigma_of(const SamplerData::Observation& o) const { return state_.sigma[o.group][o.year]; }

void GibbsSampler::recompute_residuals() {
  const auto& d = *data_;
  resid_.resize(d.obs.size());
  for (std::size_t k = 0; k < d.obs.size(); ++k) {
    const auto& o = d.obs[k];
    double pred = state_.mu[o.group][o.year];
    for (auto l = o.first_link; l < o.last_link; ++l) {
      const auto& link = d.links[l];
      const double w = link.weight_slot == kCurrentYearWeight ? 1.0 : state_.alpha[link.weight_slot];
      pred += w * state_.theta[link.year][link.teacher];
    }
    if (d.has_delta(o.student)) pred += state_.delta[o.student];
    resid_[k] = o.y - pred;
  }
}

void GibbsSampler::update_location_block() {
  for (int t = 0; t < kYears; ++t) update_year_block(t);
  if (!data_->spec.fixed.alpha)
    for (int s = 0; s < kAlphaCount; ++s) update_alpha(s);
  if (!is_selection(data_->spec.kind)) gibbs_update_delta();
}

void GibbsSampler::update_year_block(int t) {
  const auto& d = *data_;
  const std::size_t groups = d.group_count();
  const std::size_t J = d.teacher_count(t);
  const std::size_t offset = d.teacher_offset[t];
  auto& theta = state_.theta[t];
  auto weight = [&](std::int8_t slot) { return slot == kCurrentYearWeight ? 1.0 : state_.alpha[slot]; };

  std::vector<int> mean_index(groups, -1);
  int K = 0;
  if (!d.spec.fixed.mu)
    for (std::size_t g = 0; g < groups; ++g)
      if (d.group_years[g][t]) mean_index[g] = K++;

  // Remove this block from the residuals.
  for (auto o : d.obs_by_year[t]) {
    const int k = mean_index[d.obs[o].group];
    if (k >= 0) resid_[o] += state_.mu[d.obs[o].group][t];
  }
  for (std::size_t j = 0; j < J; ++j)
    for (auto p = d.teacher_incidence_begin[offset + j]; p < d.teacher_incidence_begin[offset + j + 1]; ++p) {
      const auto& inc = d.teacher_incidence[p];
      resid_[inc.obs] += weight(inc.weight_slot) * theta[j];
    }

  const double tau = state_.tau[t];
  Eigen::VectorXd D = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(J), 1.0 / (tau * tau));
  Eigen::VectorXd b_theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(J));
  for (std::size_t j = 0; j < J; ++j)
    for (auto p = d.teacher_incidence_begin[offset + j]; p < d.teacher_incidence_begin[offset + j + 1]; ++p) {
      const auto& inc = d.teacher_incidence[p];
      const double sd = sigma_of(d.obs[inc.obs]);
      const double c = weight(inc.weight_slot);
      const double w = c / (sd * sd);
      D[j] += c * w;
      b_theta[j] += w * resid_[inc.obs];
    }

  Eigen::VectorXd mu_draw;
  Eigen::MatrixXd Q;
  if (K > 0) {
    const double prior_precision = 1.0 / (d.spec.prior.mean_sd * d.spec.prior.mean_sd);
    Eigen::VectorXd q = Eigen::VectorXd::Constant(K, prior_precision);
    Eigen::VectorXd b_mu = Eigen::VectorXd::Zero(K);
    Q = Eigen::MatrixXd::Zero(K, static_cast<Eigen::Index>(J));
    for (auto o : d.obs_by_year[t]) {
      const auto& ob = d.obs[o];
      const int k = mean_index[ob.group];
      if (k < 0) continue;
      const double sd = sigma_of(ob);
      const double w = 1.0 / (sd * sd);
      q[k] += w;
      b_mu[k] += w * resid_[o];
      if (ob.current_teacher >= 0) Q(k, ob.current_teacher) += w;
    }
    const Eigen::VectorXd d_inv = D.cwiseInverse();
    Eigen::MatrixXd S = q.asDiagonal();
    S.noalias() -= Q * d_inv.asDiagonal() * Q.transpose();
    const Eigen::VectorXd rhs = b_mu - Q * d_inv.cwiseProduct(b_theta);
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) throw NumericalError("mean/teacher block precision is not positive definite");
    Eigen::VectorXd z(K);
    for (int k = 0; k < K; ++k) z[k] = normal();
    mu_draw = llt.solve(rhs) + llt.matrixU().solve(z);
    for (std::size_t g = 0; g < groups; ++g)
      if (mean_index[g] >= 0) state_.mu[g][t] = mu_draw[mean_index[g]];
  }

  for (std::size_t j = 0; j < J; ++j) {
    double b = b_theta[j];
    if (K > 0) b -= Q.col(static_cast<Eigen::Index>(j)).dot(mu_draw);
    if (!(D[j] > 0.0)) throw NumericalError("teacher effect conditional precision is not positive");
    theta[j] = b / D[j] + normal() / std::sqrt(D[j]);
  }

  for (auto o : d.obs_by_year[t]) {
    const int k = mean_index[d.obs[o].group];
    if (k >= 0) resid_[o] -= state_.mu[d.obs[o].group][t];
  }
  for (std::size_t j = 0; j < J; ++j)
    for (auto p = d.teacher_incidence_begin[offset + j]; p < d.teacher_incidence_begin[offset + j + 1]; ++p) {
      const auto& inc = d.teacher_incidence[p];
      resid_[inc.obs] -= weight(inc.weight_slot) * theta[j];
    }
}

void GibbsSampler::update_alpha(int slot) {
  const auto& d = *data_;
  const int prior_year = alpha_table()[slot].second;
  const auto& theta = state_.theta[prior_year];
  double& alpha = state_.alpha[slot];
  double precision = 1.0 / (d.spec.prior.mean_sd * d.spec.prior.mean_sd);
  double b = 0.0;
  for (const auto& inc : d.alpha_incidence[slot]) {
    const double th = theta[inc.teacher];
    resid_[inc.obs] += alpha * th;
    const double sd = sigma_of(d.obs[inc.obs]);
    const double w = th / (sd * sd);
    precision += th * w;
    b += w * resid_[inc.obs];
  }
  alpha = b / precision + normal() / std::sqrt(precision);
  for (const auto& inc : d.alpha_incidence[slot]) resid_[inc.obs] -= alpha * theta[inc.teacher];
}

void GibbsSampler::gibbs_update_delta() {
  const auto& d = *data_;
  for (std::size_t i = 0; i < d.student_count(); ++i) {
    if (!d.has_delta(i)) continue;
    const double nu = state_.nu[d.student_group[i]];
    double precision = 1.0 / (nu * nu);
    double b = 0.0;
    double& delta = state_.delta[i];
    for (auto o = d.student_obs_begin[i]; o < d.student_obs_begin[i + 1]; ++o) {
      resid_[o] += delta;
      const double sd = sigma_of(d.obs[o]);
      const double w = 1.0 / (sd * sd);
      precision += w;
      b += w * resid_[o];
    }
    delta = b / precision + normal() / std::sqrt(precision);
    for (auto o = d.student_obs_begin[i]; o < d.student_obs_begin[i + 1]; ++o) resid_[o] -= delta;
  }
}

double GibbsSampler::selection_term(std::size_t student, double delta) const {
  const auto& d = *data_;
  if (d.spec.kind == ModelKind::sel)
    return selection_loglik_count(d.n_observed[student], delta, state_.sel_a, state_.sel_beta[0], d.spec.selection_form);
  return selection_loglik_flags(d.flags[student], delta, state_.sel_a, state_.sel_beta);
}

double GibbsSampler::selection_total() const {
  double total = 0.0;
  for (std::size_t i = 0; i < data_->student_count(); ++i) total += selection_term(i, state_.delta[i]);
  return total;
}

double GibbsSampler::selection_year_total(int t) const {
  const auto& d = *data_;
  const double a = state_.sel_a[t], beta = state_.sel_beta[t];
  double total = 0.0;
  for (std::size_t i = 0; i < d.student_count(); ++i) {
    const double x = a + beta * state_.delta[i];
    total += d.flags[i][t] ? log_logistic(x) : log_logistic(-x);
  }
  return total;
}

void GibbsSampler::mh_update_delta() {
  const auto& d = *data_;
  if (!is_selection(d.spec.kind)) throw ConsistencyError("Metropolis student-effect update is for SEL/SEL2 only");
  for (std::size_t i = 0; i < d.student_count(); ++i) {
    const double nu = state_.nu[0];
    double precision = 1.0 / (nu * nu);
    double b = 0.0;
    double& delta = state_.delta[i];
    for (auto o = d.student_obs_begin[i]; o < d.student_obs_begin[i + 1]; ++o) {
      const double sd = sigma_of(d.obs[o]);
      const double w = 1.0 / (sd * sd);
      precision += w;
      b += w * (resid_[o] + delta);
    }
    const double proposal = b / precision + normal() / std::sqrt(precision);
    const double current_ll = selection_term(i, delta);
    const double proposed_ll = selection_term(i, proposal);
    double log_ratio = proposed_ll - current_ll;
    if (std::isinf(current_ll) && current_ll < 0) log_ratio = std::isinf(proposed_ll) ? -1.0 : 0.0;
    ++delta_tried_;
    if (log_ratio >= 0.0 || std::log(uniform()) < log_ratio) {
      ++delta_accepted_;
      for (auto o = d.student_obs_begin[i]; o < d.student_obs_begin[i + 1]; ++o) resid_[o] += delta - proposal;
      delta = proposal;
    }
  }
}

void GibbsSampler::mh_update_selection_params(bool adapting) {
  const auto& d = *data_;
  if (!is_selection(d.spec.kind)) return;
  const bool sel = d.spec.kind == ModelKind::sel;
  const double prior_var = sel ? d.spec.prior.sel_coef_var : d.spec.prior.sel2_coef_var;
  const std::size_t n_a = state_.sel_a.size();
  const std::size_t n_params = n_a + (d.spec.fixed.selection_slope_zero ? 0 : state_.sel_beta.size());

  double current_total = sel ? selection_total() : 0.0;
  for (std::size_t p = 0; p < n_params; ++p) {
    double& x = p < n_a ? state_.sel_a[p] : state_.sel_beta[p - n_a];
    const int year = static_cast<int>(p < n_a ? p : p - n_a);
    const double old = x;
    const double before = sel ? current_total : selection_year_total(year);
    x = old + step_[p] * normal();
    const double after = sel ? selection_total() : selection_year_total(year);
    double log_ratio = after - before - (x * x - old * old) / (2.0 * prior_var);
    if (std::isinf(before) && before < 0) log_ratio = std::isinf(after) ? -1.0 : 0.0;
    ++sel_tried_[p];
    ++window_tried_[p];
    if (!std::isnan(log_ratio) && (log_ratio >= 0.0 || std::log(uniform()) < log_ratio)) {
      ++sel_accepted_[p];
      ++window_accepted_[p];
      if (sel) current_total = after;
    } else {
      x = old;
    }
  }

  if (!adapting) return;
  if (++adapt_counter_ % d.spec.settings.adapt_interval != 0) return;
  for (std::size_t p = 0; p < n_params; ++p) {
    const double rate = static_cast<double>(window_accepted_[p]) / static_cast<double>(window_tried_[p]);
    if (rate < 0.2)
      step_[p] *= 0.6;
    else if (rate > 0.5)
      step_[p] *= 1.5;
    window_accepted_[p] = window_tried_[p] = 0;
  }
}

void GibbsSampler::update_variance_components() {
  const auto& d = *data_;
  const auto& prior = d.spec.prior;
  if (!d.spec.fixed.tau)
    for (int t = 0; t < kYears; ++t) {
      double ss = 0.0;
      for (double th : state_.theta[t]) ss += th * th;
      state_.tau[t] = draw_bounded_sd(state_.theta[t].size(), ss, prior.tau_upper, state_.tau[t], rng_);
    }
  const std::size_t groups = d.group_count();
  if (!d.spec.fixed.nu) {
    std::vector<std::size_t> m(groups, 0);
    std::vector<double> ss(groups, 0.0);
    for (std::size_t i = 0; i < d.student_count(); ++i) {
      const auto g = d.student_group[i];
      if (!d.group_has_delta[g]) continue;
      ++m[g];
      ss[g] += state_.delta[i] * state_.delta[i];
    }
    for (std::size_t g = 0; g < groups; ++g)
      if (d.group_has_delta[g]) state_.nu[g] = draw_bounded_sd(m[g], ss[g], prior.nu_upper, state_.nu[g], rng_);
  }
  if (!d.spec.fixed.sigma) {
    std::vector<PerYear<std::size_t>> m(groups, PerYear<std::size_t>{});
    std::vector<PerYear<double>> ss(groups, PerYear<double>{});
    for (std::size_t o = 0; o < d.obs.size(); ++o) {
      const auto& ob = d.obs[o];
      ++m[ob.group][ob.year];
      ss[ob.group][ob.year] += resid_[o] * resid_[o];
    }
    for (std::size_t g = 0; g < groups; ++g)
      for (int t = 0; t < kYears; ++t)
        if (d.group_years[g][t])
          state_.sigma[g][t] = draw_bounded_sd(m[g][t], ss[g][t], prior.sigma_upper, state_.sigma[g][t], rng_);
  }
}

void GibbsSampler::sweep(bool burn_in, long iteration) {
  const bool selection = is_selection(data_->spec.kind);
  update_location_block();
  if (selection) mh_update_delta();
  update_variance_components();
  if (selection) mh_update_selection_params(burn_in);
  recompute_residuals();
  for (double r : resid_)
    if (!std::isfinite(r))
      throw NumericalError("non-finite residual at iteration " + std::to_string(iteration) + " (" +
                           to_string(data_->spec.kind) + ")");
}

LogLikelihood GibbsSampler::loglik() const {
  static const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const auto& d = *data_;
  LogLikelihood ll;
  for (std::size_t o = 0; o < d.obs.size(); ++o) {
    const double sd = sigma_of(d.obs[o]);
    const double z = resid_[o] / sd;
    ll.score += -half_log_2pi - std::log(sd) - 0.5 * z * z;
  }
  if (is_selection(d.spec.kind)) ll.selection = selection_total();
  return ll;
}

double GibbsSampler::delta_acceptance_rate() const {
  return delta_tried_ ? static_cast<double>(delta_accepted_) / static_cast<double>(delta_tried_)
                      : std::numeric_limits<double>::quiet_NaN();
}

std::vector<double> GibbsSampler::selection_acceptance_rates() const {
  std::vector<double> out;
  for (std::size_t p = 0; p < sel_tried_.size(); ++p)
    out.push_back(sel_tried_[p] ? static_cast<double>(sel_accepted_[p]) / static_cast<double>(sel_tried_[p])
                                : std::numeric_limits<double>::quiet_NaN());
  return out;
}

void GibbsSampler::reset_acceptance_counters() {
  delta_accepted_ = delta_tried_ = 0;
  std::fill(sel_accepted_.begin(), sel_accepted_.end(), 0);
  std::fill(sel_tried_.begin(), sel_tried_.end(), 0);
}

}  // namespace mnarvam
