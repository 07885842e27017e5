#include "mnarvam/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "mnarvam/csv.hpp"
#include "mnarvam/errors.hpp"

namespace mnarvam {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double psrf(std::size_t n, const std::vector<double>& means, const std::vector<double>& variances) {
  const std::size_t m = means.size();
  if (m < 2 || n < 2) return kNaN;
  double grand = 0.0;
  for (double x : means) grand += x;
  grand /= static_cast<double>(m);
  double between = 0.0;
  for (double x : means) between += (x - grand) * (x - grand);
  const double B = static_cast<double>(n) * between / static_cast<double>(m - 1);
  double W = 0.0;
  for (double v : variances) W += v;
  W /= static_cast<double>(m);
  if (!(W > 0.0)) return kNaN;
  const double dn = static_cast<double>(n);
  return std::sqrt(((dn - 1.0) / dn * W + B / dn) / W);
}

}  // namespace

double gelman_rubin(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) return kNaN;
  const std::size_t n = chains.front().size();
  std::vector<RunningMoments> moments;
  for (const auto& c : chains) {
    if (c.size() != n) return kNaN;
    RunningMoments m;
    for (double x : c) m.add(x);
    moments.push_back(m);
  }
  return gelman_rubin_from_moments(moments);
}

double split_gelman_rubin(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    const std::size_t h = c.size() / 2;
    halves.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(h));
    halves.emplace_back(c.end() - static_cast<std::ptrdiff_t>(h), c.end());
  }
  return gelman_rubin(halves);
}

double gelman_rubin_from_moments(const std::vector<RunningMoments>& chains) {
  if (chains.size() < 2) return kNaN;
  const std::size_t n = chains.front().n;
  std::vector<double> means, variances;
  for (const auto& c : chains) {
    if (c.n != n) return kNaN;
    means.push_back(c.mean);
    variances.push_back(c.variance());
  }
  return psrf(n, means, variances);
}

std::string to_string(ConvergenceStatus status) {
  switch (status) {
    case ConvergenceStatus::pass: return "pass";
    case ConvergenceStatus::fail: return "fail";
    case ConvergenceStatus::undefined: return "undefined";
  }
  return "undefined";
}

std::size_t ConvergenceReport::failures() const {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.status == ConvergenceStatus::fail; }));
}

std::size_t ConvergenceReport::undefined() const {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.status == ConvergenceStatus::undefined; }));
}

double ConvergenceReport::max_rhat() const {
  double m = kNaN;
  for (const auto& r : rows)
    if (!std::isnan(r.rhat) && !(r.rhat <= m)) m = r.rhat;
  return m;
}

ConvergenceReport convergence_report(const ChainArchive& archive, const ConvergenceOptions& options) {
  ConvergenceReport report;
  report.threshold = options.threshold;
  if (archive.chains.size() < 2) {
    report.available = false;
    report.note = "unavailable (needs >= 2 chains)";
    return report;
  }
  auto classify = [&](const std::string& name, double rhat) {
    ConvergenceRow row{name, rhat, ConvergenceStatus::undefined};
    if (!std::isnan(rhat)) row.status = rhat < options.threshold ? ConvergenceStatus::pass : ConvergenceStatus::fail;
    report.rows.push_back(std::move(row));
  };
  for (std::size_t p = 0; p < archive.names.size(); ++p) {
    std::vector<std::vector<double>> chains;
    for (const auto& c : archive.chains) chains.push_back(c.series(p));
    classify(archive.names[p], options.split ? split_gelman_rubin(chains) : gelman_rubin(chains));
  }
  if (options.include_students) {
    for (std::size_t i = 0; i < archive.student_ids.size(); ++i) {
      std::vector<RunningMoments> moments;
      bool present = true;
      for (const auto& c : archive.chains) {
        if (i >= c.delta_moments.size()) {
          present = false;
          break;
        }
        if (options.split) {
          moments.push_back(c.delta_first_half[i]);
          moments.push_back(c.delta_second_half[i]);
        } else {
          moments.push_back(c.delta_moments[i]);
        }
      }
      if (!present) break;
      // Students without an effect in the model (draws identically zero) are not monitored.
      bool all_zero = true;
      for (const auto& m : moments) all_zero = all_zero && m.mean == 0.0 && m.m2 == 0.0;
      if (all_zero) continue;
      if (options.split) {
        // Odd draw counts give unequal halves, which moments cannot trim.
        const std::size_t n0 = moments.front().n;
        bool equal = true;
        for (const auto& m : moments) equal = equal && m.n == n0;
        if (!equal) {
          classify(student_effect_name(archive.student_ids[i]), kNaN);
          continue;
        }
      }
      classify(student_effect_name(archive.student_ids[i]), gelman_rubin_from_moments(moments));
    }
  }
  return report;
}

void write_convergence_csv(const ConvergenceReport& report, std::ostream& out) {
  out << "parameter,rhat,status\n";
  for (const auto& r : report.rows) out << csv::quote(r.name) << ',' << csv::general(r.rhat) << ',' << to_string(r.status) << '\n';
}

std::string convergence_text(const ConvergenceReport& report) {
  std::ostringstream s;
  if (!report.available) {
    s << "convergence: " << report.note << '\n';
    return s.str();
  }
  s << "convergence: " << report.rows.size() << " monitored, threshold " << csv::general(report.threshold)
    << ", max R-hat " << csv::fixed(report.max_rhat(), 4) << ", " << report.failures() << " failing, "
    << report.undefined() << " undefined\n";
  std::size_t shown = 0;
  for (const auto& r : report.rows)
    if (r.status == ConvergenceStatus::fail && shown++ < 20) s << "  " << r.name << "  " << csv::fixed(r.rhat, 4) << '\n';
  return s.str();
}

std::string to_string(DicFocus focus) { return focus == DicFocus::score ? "score" : "joint"; }

DicResult dic_from_components(double lbar, double l_at_mean, DicFocus focus) {
  DicResult r;
  r.focus = focus;
  r.lbar = lbar;
  r.l_at_mean = l_at_mean;
  r.dic = -4.0 * lbar + 2.0 * l_at_mean;
  return r;
}

DicResult dic(const ChainArchive& archive, const SamplerData& data, DicFocus focus) {
  if (!archive.has_loglik()) throw DiagnosticError("archive has no log-likelihood trace");
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : archive.chains)
    for (std::size_t d = 0; d < c.draw_count(); ++d) {
      sum += c.loglik_score[d] + (focus == DicFocus::joint ? c.loglik_selection[d] : 0.0);
      ++n;
    }
  const double lbar = sum / static_cast<double>(n);
  const auto at_mean = conditional_loglik(posterior_mean_state(archive, data), data);
  return dic_from_components(lbar, focus == DicFocus::joint ? at_mean.total() : at_mean.score, focus);
}

}  // namespace mnarvam
