#include "mnarvam/compare.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "mnarvam/csv.hpp"
#include "mnarvam/errors.hpp"

namespace mnarvam {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using TeacherMap = std::map<std::pair<int, std::string>, double>;

TeacherMap teacher_means(const ModelSummary& s) {
  TeacherMap out;
  for (const auto& p : s.parameters)
    if (auto key = parse_theta_name(p.name)) out[*key] = p.mean;
  return out;
}

void require_same_keys(const TeacherMap& a, const TeacherMap& b) {
  if (a.size() != b.size()) throw ComparisonError("the two summaries have different teacher sets");
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib)
    if (ia->first != ib->first)
      throw ComparisonError("teacher theta[" + std::to_string(ia->first.first + 1) + "," + ia->first.second +
                            "] is not present in both summaries");
}

std::map<std::string, double> student_means(const ModelSummary& s) {
  std::map<std::string, double> out;
  for (const auto& p : s.students)
    if (auto id = parse_delta_name(p.name)) out[*id] = p.mean;
  return out;
}

double nu_mean(const ModelSummary& s) {
  const auto* nu = s.find("nu");
  if (!nu) throw ComparisonError(s.label + ": summary has no single nu (student-effect SD)");
  if (!(nu->mean > 0.0)) throw ComparisonError(s.label + ": nu posterior mean is not positive");
  return nu->mean;
}

double variance(const std::vector<double>& x) {
  if (x.size() < 2) return kNaN;
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

}  // namespace

const PosteriorSummary* ModelSummary::find(const std::string& name) const {
  for (const auto& p : parameters)
    if (p.name == name) return &p;
  for (const auto& p : students)
    if (p.name == name) return &p;
  return nullptr;
}

std::optional<std::pair<int, std::string>> parse_theta_name(const std::string& name) {
  if (name.rfind("theta[", 0) != 0 || name.back() != ']') return std::nullopt;
  const auto comma = name.find(',');
  if (comma == std::string::npos) return std::nullopt;
  const auto g = csv::parse_int(std::string_view(name).substr(6, comma - 6));
  if (!g || *g < 1 || *g > kYears) return std::nullopt;
  return std::make_pair(static_cast<int>(*g - 1), name.substr(comma + 1, name.size() - comma - 2));
}

std::optional<std::string> parse_delta_name(const std::string& name) {
  if (name.rfind("delta[", 0) != 0 || name.back() != ']') return std::nullopt;
  return name.substr(6, name.size() - 7);
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n != y.size() || n < 2) return kNaN;
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
    syy += (y[k] - my) * (y[k] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return kNaN;
  return sxy / std::sqrt(sxx * syy);
}

PerYear<double> teacher_correlations(const ModelSummary& a, const ModelSummary& b) {
  const auto ta = teacher_means(a), tb = teacher_means(b);
  require_same_keys(ta, tb);
  PerYear<std::vector<double>> xa, xb;
  for (auto ia = ta.begin(), ib = tb.begin(); ia != ta.end(); ++ia, ++ib) {
    xa[ia->first.first].push_back(ia->second);
    xb[ia->first.first].push_back(ib->second);
  }
  PerYear<double> out{};
  for (int t = 0; t < kYears; ++t) out[t] = pearson(xa[t], xb[t]);
  return out;
}

StudentShift student_effect_shift(const ModelSummary& a, const ModelSummary& b, const ScorePanel& panel) {
  const auto da = student_means(a), db = student_means(b);
  const double nu_a = nu_mean(a), nu_b = nu_mean(b);
  StudentShift shift;
  PerYear<std::vector<double>> by_n;
  std::vector<double> raw;
  for (const auto& s : panel.students()) {
    const auto ia = da.find(s.student_id), ib = db.find(s.student_id);
    if (ia == da.end() || ib == db.end())
      throw ComparisonError("student " + s.student_id + " lacks an effect summary in one of the models");
    const double z = ib->second / nu_b - ia->second / nu_a;
    shift.standardized.push_back(z);
    by_n[s.n_observed - 1].push_back(z);
    raw.push_back(ib->second - ia->second);
  }
  for (int k = 0; k < kYears; ++k) {
    auto v = by_n[k];
    std::sort(v.begin(), v.end());
    auto& cell = shift.by_count[k];
    cell.n_observed = k + 1;
    cell.students = v.size();
    cell.q25 = quantile_sorted(v, 0.25);
    cell.median = quantile_sorted(v, 0.5);
    cell.q75 = quantile_sorted(v, 0.75);
    double m = 0.0;
    for (double x : v) m += x;
    cell.mean = v.empty() ? kNaN : m / static_cast<double>(v.size());
  }
  std::vector<double> scores;
  for (const auto& s : panel.students())
    for (const auto& y : s.scores)
      if (y) scores.push_back(*y);
  shift.variance_share = variance(raw) / variance(scores);
  double sd_a = 0.0, sd_b = 0.0;
  for (const auto& p : a.students) sd_a += p.sd;
  for (const auto& p : b.students) sd_b += p.sd;
  shift.sd_ratio = a.students.size() == b.students.size() && sd_a > 0.0 ? sd_b / sd_a : kNaN;
  return shift;
}

SlopeFit least_squares_slope(const std::vector<double>& x, const std::vector<double>& y) {
  SlopeFit fit;
  fit.n = x.size();
  if (x.size() != y.size() || x.size() < 2) {
    fit.slope = fit.se = kNaN;
    return fit;
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
  }
  if (!(sxx > 0.0)) {
    fit.slope = fit.se = kNaN;
    return fit;
  }
  fit.slope = sxy / sxx;
  if (x.size() > 2) {
    double rss = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double r = (y[k] - my) - fit.slope * (x[k] - mx);
      rss += r * r;
    }
    fit.se = std::sqrt(rss / static_cast<double>(x.size() - 2) / sxx);
  } else {
    fit.se = kNaN;
  }
  return fit;
}

CompletenessGradient completeness_gradient(const ModelSummary& a, const ModelSummary& b,
                                           const std::vector<ClassroomRoster>& rosters) {
  const auto ta = teacher_means(a), tb = teacher_means(b);
  require_same_keys(ta, tb);
  CompletenessGradient g;
  PerYear<std::vector<double>> xs, ys;
  for (const auto& r : rosters) {
    if (r.students.empty()) continue;
    const auto key = std::make_pair(r.year, r.teacher_id);
    const auto ia = ta.find(key), ib = tb.find(key);
    if (ia == ta.end()) throw ComparisonError("roster teacher " + r.teacher_id + " has no effect summary");
    const double d = ib->second - ia->second;
    g.points.push_back({r.year, r.teacher_id, r.complete_proportion, d});
    xs[r.year].push_back(r.complete_proportion);
    ys[r.year].push_back(d);
  }
  double sxx = 0.0, sxy = 0.0;
  std::size_t n = 0, grades = 0;
  std::vector<std::pair<double, double>> centered;
  for (int t = 0; t < kYears; ++t) {
    g.by_grade[t] = least_squares_slope(xs[t], ys[t]);
    if (xs[t].empty()) continue;
    ++grades;
    double mx = 0.0, my = 0.0;
    for (std::size_t k = 0; k < xs[t].size(); ++k) {
      mx += xs[t][k];
      my += ys[t][k];
    }
    mx /= static_cast<double>(xs[t].size());
    my /= static_cast<double>(xs[t].size());
    for (std::size_t k = 0; k < xs[t].size(); ++k) {
      centered.emplace_back(xs[t][k] - mx, ys[t][k] - my);
      sxx += centered.back().first * centered.back().first;
      sxy += centered.back().first * centered.back().second;
      ++n;
    }
  }
  g.pooled.n = n;
  if (sxx > 0.0) {
    g.pooled.slope = sxy / sxx;
    double rss = 0.0;
    for (const auto& [x, y] : centered) rss += (y - g.pooled.slope * x) * (y - g.pooled.slope * x);
    g.pooled.se = n > grades + 1 ? std::sqrt(rss / static_cast<double>(n - grades - 1) / sxx) : kNaN;
  } else {
    g.pooled.slope = g.pooled.se = kNaN;
  }
  return g;
}

PerYear<double> classroom_shift_share(const ModelSummary& a, const ModelSummary& b, const ScorePanel& panel) {
  const auto da = student_means(a), db = student_means(b);
  PerYear<double> mu{};
  for (int t = 0; t < kYears; ++t) {
    const auto* m = a.find("mu[" + std::to_string(t + 1) + "]");
    if (!m) throw ComparisonError(a.label + ": summary has no mu[" + std::to_string(t + 1) + "]");
    mu[t] = m->mean;
  }
  PerYear<double> out{};
  out.fill(kNaN);
  PerYear<std::vector<double>> shift_means, adjusted_means;
  for (const auto& r : classroom_rosters(panel)) {
    double shift = 0.0, adjusted = 0.0;
    std::size_t n = 0;
    for (auto i : r.students) {
      const auto& s = panel.students()[i];
      if (!s.scores[r.year]) continue;
      const auto ia = da.find(s.student_id), ib = db.find(s.student_id);
      if (ia == da.end() || ib == db.end()) throw ComparisonError("student " + s.student_id + " lacks an effect summary");
      shift += ib->second - ia->second;
      adjusted += *s.scores[r.year] - mu[r.year];
      ++n;
    }
    if (n == 0) continue;
    shift_means[r.year].push_back(shift / static_cast<double>(n));
    adjusted_means[r.year].push_back(adjusted / static_cast<double>(n));
  }
  for (int t = 0; t < kYears; ++t) out[t] = variance(shift_means[t]) / variance(adjusted_means[t]);
  return out;
}

std::vector<PatternMeanRow> pattern_means_table(const ModelSummary& pmix, const PatternGrouping& grouping) {
  if (pmix.kind != ModelKind::pmix) throw ComparisonError("pattern means need a pattern mixture summary");
  std::vector<PatternMeanRow> rows;
  for (const auto& g : grouping.groups()) {
    if (g.students == 0) continue;
    const std::string label = g.catch_all ? "other" : g.patterns.front().to_string();
    for (int t = 0; t < kYears; ++t) {
      if (!g.years[t]) continue;
      const std::string name = "mu[" + std::to_string(g.id) + "," + std::to_string(t + 1) + "]";
      const auto* s = pmix.find(name);
      if (!s) throw ComparisonError("pattern mixture summary lacks " + name);
      rows.push_back({g.id, label, g.students, t, s->mean, s->sd});
    }
  }
  return rows;
}

void write_correlations_csv(const PerYear<double>& r, std::ostream& out) {
  out << "grade,correlation\n";
  for (int t = 0; t < kYears; ++t) out << t + 1 << ',' << csv::fixed(r[t]) << '\n';
}

void write_shift_csv(const StudentShift& shift, std::ostream& out) {
  out << "n_observed,students,q25,median,q75,mean\n";
  for (const auto& c : shift.by_count)
    out << c.n_observed << ',' << c.students << ',' << csv::fixed(c.q25) << ',' << csv::fixed(c.median) << ','
        << csv::fixed(c.q75) << ',' << csv::fixed(c.mean) << '\n';
}

void write_gradient_csv(const CompletenessGradient& g, std::ostream& out) {
  out << "grade,teachers,slope,se\n";
  for (int t = 0; t < kYears; ++t)
    out << t + 1 << ',' << g.by_grade[t].n << ',' << csv::fixed(g.by_grade[t].slope) << ','
        << csv::fixed(g.by_grade[t].se) << '\n';
  out << "pooled," << g.pooled.n << ',' << csv::fixed(g.pooled.slope) << ',' << csv::fixed(g.pooled.se) << '\n';
}

void write_gradient_points_csv(const CompletenessGradient& g, std::ostream& out) {
  out << "year,tchid,complete_proportion,difference\n";
  for (const auto& p : g.points)
    out << p.year << ',' << csv::quote(p.teacher_id) << ',' << csv::fixed(p.complete_proportion) << ','
        << csv::fixed(p.difference) << '\n';
}

void write_pattern_means_csv(const std::vector<PatternMeanRow>& rows, std::ostream& out) {
  out << "group,pattern,students,year,mean,sd\n";
  for (const auto& r : rows)
    out << r.group << ',' << r.patterns << ',' << r.students << ',' << r.year << ',' << csv::fixed(r.mean) << ','
        << csv::fixed(r.sd) << '\n';
}

bool dic_comparable(ModelKind a, ModelKind b) { return a != ModelKind::pmix && b != ModelKind::pmix; }

std::string comparison_report(const ModelSummary& a, const ModelSummary& b, const ScorePanel* panel) {
  std::ostringstream s;
  s << "# Comparison: " << a.label << " (" << to_string(a.kind) << ") vs " << b.label << " (" << to_string(b.kind)
    << ")\n\n";

  s << "## Teacher-effect correlations\n\n| grade | r |\n|---|---|\n";
  const auto r = teacher_correlations(a, b);
  for (int t = 0; t < kYears; ++t) s << "| " << t + 1 << " | " << csv::fixed(r[t], 4) << " |\n";

  s << "\n## DIC\n\n";
  if (!dic_comparable(a.kind, b.kind)) {
    s << "not comparable: the pattern mixture model has a different student-effect structure\n";
  } else {
    s << "| focus | " << a.label << " | " << b.label << " | difference (b - a) | preferred |\n|---|---|---|---|---|\n";
    for (const auto& da : a.dic)
      for (const auto& db : b.dic) {
        if (da.focus != db.focus) continue;
        const double diff = db.dic - da.dic;
        s << "| " << to_string(da.focus) << " | " << csv::fixed(da.dic, 1) << " | " << csv::fixed(db.dic, 1) << " | "
          << csv::fixed(diff, 1) << " | " << (diff < 0 ? b.label : a.label) << " |\n";
      }
  }

  if (panel) {
    const auto g = completeness_gradient(a, b, classroom_rosters(*panel));
    s << "\n## Teacher-effect difference vs classroom complete-data proportion\n\n| grade | slope | se |\n|---|---|---|\n";
    for (int t = 0; t < kYears; ++t)
      s << "| " << t + 1 << " | " << csv::fixed(g.by_grade[t].slope, 4) << " | " << csv::fixed(g.by_grade[t].se, 4)
        << " |\n";
    s << "| pooled | " << csv::fixed(g.pooled.slope, 4) << " | " << csv::fixed(g.pooled.se, 4) << " |\n";

    if (a.find("nu") && b.find("nu") && !a.students.empty() && !b.students.empty()) {
      const auto shift = student_effect_shift(a, b, *panel);
      s << "\n## Standardized student-effect difference by number of scores\n\n"
        << "| n | students | q25 | median | q75 |\n|---|---|---|---|---|\n";
      for (const auto& c : shift.by_count)
        s << "| " << c.n_observed << " | " << c.students << " | " << csv::fixed(c.q25, 4) << " | "
          << csv::fixed(c.median, 4) << " | " << csv::fixed(c.q75, 4) << " |\n";
      s << "\nstudent-effect SD ratio (b / a): " << csv::fixed(shift.sd_ratio, 4) << '\n';
      s << "difference variance / score variance: " << csv::fixed(shift.variance_share, 4) << '\n';
      if (a.kind != ModelKind::pmix) {
        const auto share = classroom_shift_share(a, b, *panel);
        s << "classroom-mean difference variance / classroom-mean adjusted-score variance by grade:";
        for (double v : share) s << ' ' << csv::fixed(v, 4);
        s << '\n';
      }
    }
  }
  return s.str();
}

}  // namespace mnarvam
