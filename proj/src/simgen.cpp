#include "mnarvam/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include "mnarvam/csv.hpp"
#include "mnarvam/errors.hpp"
#include "mnarvam/selection.hpp"

namespace mnarvam {

namespace {

using Rng = std::mt19937_64;

std::string grade(int t) { return std::to_string(t + 1); }

std::string padded(const char* prefix, std::size_t k, std::size_t total) {
  const int width = std::max<int>(3, static_cast<int>(std::to_string(total).size()));
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, k);
  return buf;
}

constexpr int kMaxRedraws = 10000;

}  // namespace

std::string to_string(Assignment a) { return a == Assignment::random ? "random" : "sorted"; }

Assignment parse_assignment(const std::string& name) {
  if (name == "random") return Assignment::random;
  if (name == "sorted") return Assignment::sorted;
  throw ConfigError("unknown class assignment '" + name + "' (expected random or sorted)");
}

void GeneratorConfig::validate() const {
  if (students == 0) throw ConfigError("students must be positive");
  if (teachers_per_year == 0) throw ConfigError("teachers_per_year must be positive");
  if (teachers_per_year > students) throw ConfigError("teachers_per_year cannot exceed students");
  if (!(mixing >= 0.0 && mixing <= 1.0)) throw ConfigError("mixing must lie in [0, 1]");
  if (!(truth.nu >= 0.0)) throw ConfigError("truth nu must be nonnegative");
  for (int t = 0; t < kYears; ++t) {
    if (!(truth.tau[t] >= 0.0) || !(truth.sigma[t] >= 0.0)) throw ConfigError("truth SDs must be nonnegative");
    if (!std::isfinite(truth.mu[t])) throw ConfigError("truth means must be finite");
  }
  for (double a : truth.alpha)
    if (!std::isfinite(a)) throw ConfigError("truth alpha must be finite");
}

std::map<std::string, double> TruthRecord::named() const {
  std::map<std::string, double> out = extra;
  for (int t = 0; t < kYears; ++t) {
    out["mu[" + grade(t) + "]"] = profile.mu[t];
    out["tau[" + grade(t) + "]"] = profile.tau[t];
    out["sigma[" + grade(t) + "]"] = profile.sigma[t];
    for (std::size_t j = 0; j < teacher_ids[t].size(); ++j)
      out["theta[" + grade(t) + "," + teacher_ids[t][j] + "]"] = theta[t][j];
  }
  for (int s = 0; s < kAlphaCount; ++s) out[alpha_name(s)] = profile.alpha[s];
  out["nu"] = profile.nu;
  for (std::size_t i = 0; i < student_ids.size(); ++i) out["delta[" + student_ids[i] + "]"] = delta[i];
  return out;
}

SimulatedPanel simulate_panel(const GeneratorConfig& config) {
  config.validate();
  Rng rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t N = config.students, J = config.teachers_per_year;
  const auto& truth = config.truth;

  TruthRecord rec;
  rec.profile = truth;
  rec.student_ids.reserve(N);
  for (std::size_t i = 0; i < N; ++i) rec.student_ids.push_back(padded("s", i + 1, N));
  rec.delta.resize(N);
  for (auto& d : rec.delta) d = truth.nu * normal(rng);
  for (int t = 0; t < kYears; ++t) {
    for (std::size_t j = 0; j < J; ++j) rec.teacher_ids[t].push_back(padded(("g" + grade(t) + "t").c_str(), j + 1, J));
    rec.theta[t].resize(J);
    for (auto& th : rec.theta[t]) th = truth.tau[t] * normal(rng);
  }

  // class assignment: students ranked, then cut into J near-equal classes
  PerYear<std::vector<std::size_t>> teacher_of;
  for (int t = 0; t < kYears; ++t) {
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    if (config.assignment == Assignment::random) {
      std::shuffle(order.begin(), order.end(), rng);
    } else {
      std::vector<double> key(N);
      for (std::size_t i = 0; i < N; ++i) {
        const double signal = truth.nu > 0.0 ? rec.delta[i] / truth.nu : 0.0;
        key[i] = (1.0 - config.mixing) * signal + config.mixing * normal(rng);
      }
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
    }
    teacher_of[t].resize(N);
    for (std::size_t pos = 0; pos < N; ++pos) teacher_of[t][order[pos]] = pos * J / N;
  }

  std::vector<StudentRecord> students;
  students.reserve(N);
  for (std::size_t i = 0; i < N; ++i) {
    PerYear<std::optional<double>> scores;
    PerYear<std::optional<std::string>> links;
    for (int t = 0; t < kYears; ++t) {
      double y = truth.mu[t] + rec.delta[i];
      for (int p = 0; p <= t; ++p) {
        const double w = p == t ? 1.0 : truth.alpha[alpha_slot(t, p)];
        y += w * rec.theta[p][teacher_of[p][i]];
      }
      y += truth.sigma[t] * normal(rng);
      scores[t] = y;
      links[t] = rec.teacher_ids[t][teacher_of[t][i]];
    }
    students.push_back(make_student(rec.student_ids[i], scores, links));
  }
  return {ScorePanel(std::move(students)), std::move(rec)};
}

std::string to_string(MechanismKind kind) {
  switch (kind) {
    case MechanismKind::none: return "none";
    case MechanismKind::mcar: return "mcar";
    case MechanismKind::sel_hazard: return "sel_hazard";
    case MechanismKind::sel2: return "sel2";
    case MechanismKind::score_dependent: return "score_dependent";
  }
  return "none";
}

MechanismKind parse_mechanism_kind(const std::string& name) {
  for (auto k : {MechanismKind::none, MechanismKind::mcar, MechanismKind::sel_hazard, MechanismKind::sel2,
                 MechanismKind::score_dependent})
    if (name == to_string(k)) return k;
  throw ConfigError("unknown missingness mechanism '" + name +
                    "' (expected none, mcar, sel_hazard, sel2 or score_dependent)");
}

void MissingnessMechanism::validate() const {
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  switch (kind) {
    case MechanismKind::none: break;
    case MechanismKind::mcar:
      if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("mcar rate must lie in [0, 1)");
      break;
    case MechanismKind::sel_hazard:
      if (a.size() != kYears - 1 || beta.size() != 1 || !finite(a) || !finite(beta))
        throw ConfigError("sel_hazard needs 4 finite intercepts a and one slope beta");
      break;
    case MechanismKind::sel2:
      if (a.size() != kYears || beta.size() != kYears || !finite(a) || !finite(beta))
        throw ConfigError("sel2 needs 5 finite intercepts a and 5 slopes beta");
      break;
    case MechanismKind::score_dependent:
      if (!std::isfinite(intercept) || !std::isfinite(coefficient))
        throw ConfigError("score_dependent intercept and coefficient must be finite");
      break;
  }
}

std::map<std::string, double> MissingnessMechanism::named() const {
  std::map<std::string, double> out;
  if (kind == MechanismKind::sel_hazard) {
    for (std::size_t k = 0; k < a.size(); ++k) out["a[" + std::to_string(k + 1) + "]"] = a[k];
    out["beta"] = beta.at(0);
  } else if (kind == MechanismKind::sel2) {
    for (int t = 0; t < kYears; ++t) {
      out["a[" + grade(t) + "]"] = a[t];
      out["beta[" + grade(t) + "]"] = beta[t];
    }
  }
  return out;
}

ScorePanel apply_missingness(const ScorePanel& panel, const TruthRecord& truth, const MissingnessMechanism& mechanism,
                             std::uint64_t seed) {
  mechanism.validate();
  if (mechanism.kind == MechanismKind::none) return panel;
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<StudentRecord> out;
  out.reserve(panel.size());
  for (std::size_t i = 0; i < panel.size(); ++i) {
    const auto& s = panel.students()[i];
    if (!s.complete()) throw ValidationError("apply_missingness needs a complete panel (student " + s.student_id + ")");
    const double delta = i < truth.delta.size() && truth.student_ids[i] == s.student_id ? truth.delta[i] : 0.0;
    PerYear<bool> keep{};
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxRedraws) throw ConfigError("missingness mechanism deletes every score for student " + s.student_id);
      switch (mechanism.kind) {
        case MechanismKind::none: keep.fill(true); break;
        case MechanismKind::mcar:
          for (int t = 0; t < kYears; ++t) keep[t] = unif(rng) >= mechanism.rate;
          break;
        case MechanismKind::sel_hazard: {
          const auto probs = hazard_count_probabilities(delta, mechanism.a, mechanism.beta[0]);
          double u = unif(rng);
          int n = kYears;
          for (int k = 0; k < kYears; ++k) {
            if (u < probs[k]) {
              n = k + 1;
              break;
            }
            u -= probs[k];
          }
          const int start = static_cast<int>(unif(rng) * (kYears - n + 1));
          keep.fill(false);
          for (int t = start; t < start + n && t < kYears; ++t) keep[t] = true;
          break;
        }
        case MechanismKind::sel2:
          for (int t = 0; t < kYears; ++t)
            keep[t] = unif(rng) < logistic(mechanism.a[t] + mechanism.beta[t] * delta);
          break;
        case MechanismKind::score_dependent:
          for (int t = 0; t < kYears; ++t) {
            const double centered = *s.scores[t] - truth.profile.mu[t];
            keep[t] = unif(rng) < logistic(mechanism.intercept + mechanism.coefficient * centered);
          }
          break;
      }
      if (std::any_of(keep.begin(), keep.end(), [](bool b) { return b; })) break;
    }
    PerYear<std::optional<double>> scores = s.scores;
    PerYear<std::optional<std::string>> links = s.teacher_links;
    for (int t = 0; t < kYears; ++t)
      if (!keep[t]) {
        scores[t].reset();
        if (mechanism.co_delete) links[t].reset();
      }
    out.push_back(make_student(s.student_id, scores, links));
  }
  return ScorePanel(std::move(out), panel.standardization());
}

void write_truth_csv(const std::map<std::string, double>& values, std::ostream& out) {
  out << "parameter,value\n";
  for (const auto& [name, v] : values) out << csv::quote(name) << ',' << csv::exact(v) << '\n';
}

std::map<std::string, double> read_truth_csv(std::istream& in) {
  const auto table = csv::read_table(in);
  const auto c_name = table.require_column("parameter"), c_value = table.require_column("value");
  std::map<std::string, double> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto v = row.size() > c_value ? csv::parse_double(row[c_value]) : std::nullopt;
    if (row.size() <= c_name || !v) throw ValidationError("truth file row " + std::to_string(r + 2) + " is malformed");
    out[row[c_name]] = *v;
  }
  return out;
}

}  // namespace mnarvam
