#include "mnarvam/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>

#include "mnarvam/archive.hpp"
#include "mnarvam/compare.hpp"
#include "mnarvam/csv.hpp"
#include "mnarvam/diagnostics.hpp"
#include "mnarvam/errors.hpp"
#include "mnarvam/gls.hpp"
#include "mnarvam/linkage.hpp"
#include "mnarvam/model.hpp"
#include "mnarvam/patterns.hpp"
#include "mnarvam/sampler.hpp"
#include "mnarvam/score_panel.hpp"
#include "mnarvam/simgen.hpp"

namespace mnarvam::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------- config access

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw ConfigError("config file '" + path + "' must hold a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

double number(const json& j, const std::string& key, double fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  if (!j[key].is_number()) throw ConfigError("'" + key + "' must be a number");
  return j[key].get<double>();
}

long long integer(const json& j, const std::string& key, long long fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  if (!j[key].is_number_integer()) throw ConfigError("'" + key + "' must be an integer");
  return j[key].get<long long>();
}

std::uint64_t seed_value(const json& j, const std::string& key, std::uint64_t fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  if (j[key].is_number_unsigned()) return j[key].get<std::uint64_t>();
  if (j[key].is_number_integer() && j[key].get<long long>() >= 0) return static_cast<std::uint64_t>(j[key].get<long long>());
  throw ConfigError("'" + key + "' must be a nonnegative integer");
}

bool boolean(const json& j, const std::string& key, bool fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  if (!j[key].is_boolean()) throw ConfigError("'" + key + "' must be true or false");
  return j[key].get<bool>();
}

std::string text(const json& j, const std::string& key, const std::string& fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  if (!j[key].is_string()) throw ConfigError("'" + key + "' must be a string");
  return j[key].get<std::string>();
}

std::vector<double> numbers(const json& j, const std::string& key, std::size_t size) {
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != size) throw ConfigError("'" + key + "' must be an array of " + std::to_string(size) + " numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) throw ConfigError("'" + key + "' must contain only numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

template <std::size_t N>
std::array<double, N> fixed_array(const json& j, const std::string& key) {
  const auto v = numbers(j, key, N);
  std::array<double, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

std::vector<std::string> strings(const json& j, const std::string& key) {
  std::vector<std::string> out;
  if (!j.contains(key)) return out;
  if (!j[key].is_array()) throw ConfigError("'" + key + "' must be an array of strings");
  for (const auto& x : j[key]) {
    if (!x.is_string()) throw ConfigError("'" + key + "' must be an array of strings");
    out.push_back(x.get<std::string>());
  }
  return out;
}

std::string require_text(const json& j, const std::string& key) {
  const auto v = text(j, key, "");
  if (v.empty()) throw ConfigError("'" + key + "' is required");
  return v;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------- panel input

const std::set<std::string> kPanelKeys{"input", "scale", "offset", "scale_sd", "strict"};

LoadOptions load_options(const json& j) {
  LoadOptions o;
  const auto scale = text(j, "scale", "standardized");
  if (scale == "raw")
    o.scale = ScoreScale::raw;
  else if (scale != "standardized")
    throw ConfigError("'scale' must be 'standardized' or 'raw'");
  o.standardization.offset = number(j, "offset", o.standardization.offset);
  o.standardization.scale = number(j, "scale_sd", o.standardization.scale);
  if (!(o.standardization.scale > 0.0)) throw ConfigError("'scale_sd' must be positive");
  o.strict = boolean(j, "strict", false);
  return o;
}

void resolve_panel_keys(const LoadOptions& o, const std::string& input, json& r) {
  r["input"] = input;
  r["scale"] = o.scale == ScoreScale::raw ? "raw" : "standardized";
  r["offset"] = o.standardization.offset;
  r["scale_sd"] = o.standardization.scale;
  r["strict"] = o.strict;
}

// ---------------------------------------------------------------- model spec

const std::set<std::string> kModelKeys{"model",          "selection_form", "chains",      "burn_in",
                                       "retained",       "thin",           "seed",        "adapt_interval",
                                       "store_student_draws", "pattern_threshold", "prior", "fixed"};

ModelSpec model_spec(const json& j) {
  ModelSpec spec;
  spec.kind = parse_model_kind(text(j, "model", "MAR"));
  spec.selection_form = parse_selection_form(text(j, "selection_form", "hazard"));
  auto& s = spec.settings;
  s.chains = static_cast<int>(integer(j, "chains", s.chains));
  s.burn_in = static_cast<int>(integer(j, "burn_in", s.burn_in));
  s.retained = static_cast<int>(integer(j, "retained", s.retained));
  s.thin = static_cast<int>(integer(j, "thin", s.thin));
  s.seed = seed_value(j, "seed", s.seed);
  s.adapt_interval = static_cast<int>(integer(j, "adapt_interval", s.adapt_interval));
  s.store_student_draws = boolean(j, "store_student_draws", s.store_student_draws);
  spec.pattern_threshold = static_cast<int>(integer(j, "pattern_threshold", spec.pattern_threshold));
  if (j.contains("prior")) {
    const auto& p = j["prior"];
    check_keys(p, {"mean_sd", "tau_upper", "nu_upper", "sigma_upper", "sel_coef_var", "sel2_coef_var"}, "prior");
    spec.prior.mean_sd = number(p, "mean_sd", spec.prior.mean_sd);
    spec.prior.tau_upper = number(p, "tau_upper", spec.prior.tau_upper);
    spec.prior.nu_upper = number(p, "nu_upper", spec.prior.nu_upper);
    spec.prior.sigma_upper = number(p, "sigma_upper", spec.prior.sigma_upper);
    spec.prior.sel_coef_var = number(p, "sel_coef_var", spec.prior.sel_coef_var);
    spec.prior.sel2_coef_var = number(p, "sel2_coef_var", spec.prior.sel2_coef_var);
  }
  if (j.contains("fixed")) {
    const auto& f = j["fixed"];
    check_keys(f, {"mu", "alpha", "tau", "nu", "sigma", "selection_slope_zero"}, "fixed");
    if (f.contains("mu")) spec.fixed.mu = fixed_array<kYears>(f, "mu");
    if (f.contains("alpha")) spec.fixed.alpha = fixed_array<kAlphaCount>(f, "alpha");
    if (f.contains("tau")) spec.fixed.tau = fixed_array<kYears>(f, "tau");
    if (f.contains("nu")) spec.fixed.nu = number(f, "nu", 0.0);
    if (f.contains("sigma")) spec.fixed.sigma = fixed_array<kYears>(f, "sigma");
    spec.fixed.selection_slope_zero = boolean(f, "selection_slope_zero", false);
  }
  spec.validate();
  return spec;
}

json resolve_model(const ModelSpec& spec) {
  json r;
  r["model"] = to_string(spec.kind);
  r["selection_form"] = to_string(spec.selection_form);
  r["chains"] = spec.settings.chains;
  r["burn_in"] = spec.settings.burn_in;
  r["retained"] = spec.settings.retained;
  r["thin"] = spec.settings.thin;
  r["seed"] = spec.settings.seed;
  r["adapt_interval"] = spec.settings.adapt_interval;
  r["store_student_draws"] = spec.settings.store_student_draws;
  r["pattern_threshold"] = spec.pattern_threshold;
  r["prior"] = {{"mean_sd", spec.prior.mean_sd},           {"tau_upper", spec.prior.tau_upper},
                {"nu_upper", spec.prior.nu_upper},         {"sigma_upper", spec.prior.sigma_upper},
                {"sel_coef_var", spec.prior.sel_coef_var}, {"sel2_coef_var", spec.prior.sel2_coef_var}};
  json f = json::object();
  if (spec.fixed.mu) f["mu"] = *spec.fixed.mu;
  if (spec.fixed.alpha) f["alpha"] = *spec.fixed.alpha;
  if (spec.fixed.tau) f["tau"] = *spec.fixed.tau;
  if (spec.fixed.nu) f["nu"] = *spec.fixed.nu;
  if (spec.fixed.sigma) f["sigma"] = *spec.fixed.sigma;
  if (spec.fixed.selection_slope_zero) f["selection_slope_zero"] = true;
  r["fixed"] = f;
  return r;
}

// ---------------------------------------------------------------- staged output

class StagedOutput {
 public:
  explicit StagedOutput(const std::string& dir) : final_(dir.empty() ? "." : dir) {
    std::error_code ec;
    created_ = !fs::exists(final_);
    fs::create_directories(final_, ec);
    if (ec) throw IoError("cannot create output directory '" + final_.string() + "': " + ec.message());
    stage_ = final_ / ".staging";
    fs::remove_all(stage_, ec);
    fs::create_directories(stage_, ec);
    if (ec) throw IoError("cannot create staging directory in '" + final_.string() + "'");
  }
  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;

  ~StagedOutput() {
    if (committed_) return;
    std::error_code ec;
    fs::remove_all(stage_, ec);
    if (created_ && fs::is_empty(final_, ec)) fs::remove(final_, ec);
  }

  std::ofstream open(const std::string& name) {
    files_.push_back(name);
    std::ofstream out(stage_ / name);
    if (!out) throw IoError("cannot write '" + (final_ / name).string() + "'");
    return out;
  }

  void write(const std::string& name, const std::string& content) {
    auto out = open(name);
    out << content;
    if (!out) throw IoError("failed writing '" + (final_ / name).string() + "'");
  }

  void write(const std::string& name, const std::function<void(std::ostream&)>& writer) {
    auto out = open(name);
    writer(out);
    if (!out) throw IoError("failed writing '" + (final_ / name).string() + "'");
  }

  void commit() {
    std::error_code ec;
    for (const auto& f : files_) {
      fs::rename(stage_ / f, final_ / f, ec);
      if (ec) throw IoError("cannot move '" + f + "' into '" + final_.string() + "': " + ec.message());
    }
    fs::remove_all(stage_, ec);
    committed_ = true;
  }

  const fs::path& dir() const { return final_; }

 private:
  fs::path final_, stage_;
  std::vector<std::string> files_;
  bool created_ = false, committed_ = false;
};

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------- simulate

int cmd_simulate(const json& j, std::ostream& out) {
  check_keys(j, {"output_dir", "students", "teachers_per_year", "assignment", "mixing", "seed", "truth", "missingness",
                 "quiet"},
             "simulate config");
  GeneratorConfig g;
  const long long students = integer(j, "students", static_cast<long long>(g.students));
  const long long teachers = integer(j, "teachers_per_year", static_cast<long long>(g.teachers_per_year));
  if (students <= 0 || teachers <= 0) throw ConfigError("students and teachers_per_year must be positive");
  g.students = static_cast<std::size_t>(students);
  g.teachers_per_year = static_cast<std::size_t>(teachers);
  g.assignment = parse_assignment(text(j, "assignment", to_string(g.assignment)));
  g.mixing = number(j, "mixing", g.mixing);
  g.seed = seed_value(j, "seed", g.seed);
  if (j.contains("truth")) {
    const auto& t = j["truth"];
    check_keys(t, {"mu", "tau", "nu", "sigma", "alpha"}, "truth");
    if (t.contains("mu")) g.truth.mu = fixed_array<kYears>(t, "mu");
    if (t.contains("tau")) g.truth.tau = fixed_array<kYears>(t, "tau");
    if (t.contains("sigma")) g.truth.sigma = fixed_array<kYears>(t, "sigma");
    if (t.contains("alpha")) g.truth.alpha = fixed_array<kAlphaCount>(t, "alpha");
    g.truth.nu = number(t, "nu", g.truth.nu);
  }
  g.validate();

  MissingnessMechanism m;
  std::uint64_t missing_seed = g.seed + 1;
  if (j.contains("missingness")) {
    const auto& mj = j["missingness"];
    check_keys(mj, {"kind", "rate", "a", "beta", "intercept", "coefficient", "co_delete", "seed"}, "missingness");
    m.kind = parse_mechanism_kind(text(mj, "kind", "none"));
    m.rate = number(mj, "rate", 0.0);
    if (m.kind == MechanismKind::sel_hazard) {
      m.a = mj.contains("a") ? numbers(mj, "a", kYears - 1) : std::vector<double>(kYears - 1, 0.0);
      m.beta = mj.contains("beta") ? numbers(mj, "beta", 1) : std::vector<double>{0.0};
    } else if (m.kind == MechanismKind::sel2) {
      m.a = mj.contains("a") ? numbers(mj, "a", kYears) : std::vector<double>(kYears, 0.0);
      m.beta = mj.contains("beta") ? numbers(mj, "beta", kYears) : std::vector<double>(kYears, 0.0);
    }
    m.intercept = number(mj, "intercept", 0.0);
    m.coefficient = number(mj, "coefficient", 0.0);
    m.co_delete = boolean(mj, "co_delete", true);
    missing_seed = seed_value(mj, "seed", missing_seed);
  }
  m.validate();

  auto sim = simulate_panel(g);
  const ScorePanel panel = apply_missingness(sim.panel, sim.truth, m, missing_seed);
  auto truth = sim.truth.named();
  for (const auto& [k, v] : m.named()) truth[k] = v;

  json r;
  r["output_dir"] = text(j, "output_dir", ".");
  r["students"] = g.students;
  r["teachers_per_year"] = g.teachers_per_year;
  r["assignment"] = to_string(g.assignment);
  r["mixing"] = g.mixing;
  r["seed"] = g.seed;
  r["truth"] = {{"mu", g.truth.mu}, {"tau", g.truth.tau}, {"nu", g.truth.nu}, {"sigma", g.truth.sigma},
                {"alpha", g.truth.alpha}};
  json mr = {{"kind", to_string(m.kind)}, {"co_delete", m.co_delete}, {"seed", missing_seed}};
  if (m.kind == MechanismKind::mcar) mr["rate"] = m.rate;
  if (m.kind == MechanismKind::sel_hazard || m.kind == MechanismKind::sel2) {
    mr["a"] = m.a;
    mr["beta"] = m.beta;
  }
  if (m.kind == MechanismKind::score_dependent) {
    mr["intercept"] = m.intercept;
    mr["coefficient"] = m.coefficient;
  }
  r["missingness"] = mr;

  StagedOutput staged(text(j, "output_dir", "."));
  staged.write("panel.csv", [&](std::ostream& o) { write_panel(panel, o); });
  staged.write("truth.csv", [&](std::ostream& o) { write_truth_csv(truth, o); });
  staged.write("nobs_summary.csv", [&](std::ostream& o) { write_nobs_summary(nobs_summary(panel), o); });
  staged.write("resolved_config.json", dump(r));
  staged.commit();
  if (!boolean(j, "quiet", false))
    out << "simulated " << panel.size() << " students, " << panel.observed_score_count() << " observed scores -> "
        << staged.dir().string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------- fit

std::string dic_csv(const std::vector<DicResult>& rows) {
  std::ostringstream s;
  s << "focus,lbar,l_at_mean,pd,dic\n";
  for (const auto& d : rows)
    s << to_string(d.focus) << ',' << csv::exact(d.lbar) << ',' << csv::exact(d.l_at_mean) << ',' << csv::exact(d.pd())
      << ',' << csv::exact(d.dic) << '\n';
  return s.str();
}

std::vector<DicResult> read_dic_csv(const std::string& path) {
  std::vector<DicResult> out;
  if (!fs::exists(path)) return out;
  const auto t = csv::read_table_file(path);
  const auto cf = t.require_column("focus"), cl = t.require_column("lbar"), cm = t.require_column("l_at_mean"),
             cd = t.require_column("dic");
  for (const auto& row : t.rows) {
    if (row.size() <= std::max({cf, cl, cm, cd})) throw ValidationError("'" + path + "' has a short row");
    const auto lbar = csv::parse_double(row[cl]), lm = csv::parse_double(row[cm]), d = csv::parse_double(row[cd]);
    if (!lbar || !lm || !d) throw ValidationError("'" + path + "' has a malformed number");
    DicResult r = dic_from_components(*lbar, *lm, row[cf] == "joint" ? DicFocus::joint : DicFocus::score);
    r.dic = *d;
    out.push_back(r);
  }
  return out;
}

std::string pattern_groups_csv(const PatternGrouping& grouping) {
  std::ostringstream s;
  s << "group,catch_all,students,patterns,years\n";
  for (const auto& g : grouping.groups()) {
    std::string pats, years;
    for (const auto& p : g.patterns) pats += (pats.empty() ? "" : " ") + p.to_string();
    for (int t = 0; t < kYears; ++t) years += g.years[t] ? '1' : '0';
    s << g.id << ',' << (g.catch_all ? "true" : "false") << ',' << g.students << ',' << pats << ',' << years << '\n';
  }
  return s.str();
}

int cmd_fit(const json& j, std::ostream& out, std::ostream& err) {
  std::set<std::string> allowed = kModelKeys;
  allowed.insert(kPanelKeys.begin(), kPanelKeys.end());
  allowed.insert({"output_dir", "rhat_threshold", "split_rhat", "write_draws", "parallel", "quiet"});
  check_keys(j, allowed, "fit config");
  const ModelSpec spec = model_spec(j);
  const auto options = load_options(j);
  const std::string input = require_text(j, "input");
  const double rhat_threshold = number(j, "rhat_threshold", 1.05);
  if (!(rhat_threshold > 1.0)) throw ConfigError("'rhat_threshold' must exceed 1");
  const bool split = boolean(j, "split_rhat", false);
  const bool write_draws = boolean(j, "write_draws", true);
  const bool parallel = boolean(j, "parallel", true);
  const bool quiet = boolean(j, "quiet", false);
  const std::string output_dir = text(j, "output_dir", ".");

  json resolved = resolve_model(spec);
  resolve_panel_keys(options, input, resolved);
  resolved["output_dir"] = output_dir;
  resolved["rhat_threshold"] = rhat_threshold;
  resolved["split_rhat"] = split;
  resolved["write_draws"] = write_draws;
  resolved["parallel"] = parallel;

  const auto loaded = load_panel_file(input, options);
  const auto& panel = loaded.panel;
  if (panel.empty()) throw ValidationError("panel '" + input + "' has no usable students");
  const auto design = build_design(panel);
  const auto grouping = group_patterns(panel, spec.pattern_threshold);
  const auto data = make_sampler_data(panel, design, spec, &grouping);

  std::mutex progress_mutex;
  ProgressFn progress;
  if (!quiet)
    progress = [&](int chain, long it, long total) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      err << "chain " << chain + 1 << ": " << it << "/" << total << '\n';
    };
  const auto archive = run_chains(data, parallel, progress);

  const auto summary = summarize(archive);
  const auto students = summarize_students(archive);
  ConvergenceOptions copt;
  copt.threshold = rhat_threshold;
  copt.split = split;
  const auto conv = convergence_report(archive, copt);
  std::vector<DicResult> dics{dic(archive, data, DicFocus::score)};
  if (spec.kind == ModelKind::sel || spec.kind == ModelKind::sel2) dics.push_back(dic(archive, data, DicFocus::joint));

  json manifest;
  manifest["model"] = to_string(spec.kind);
  manifest["input"] = input;
  manifest["students"] = panel.size();
  manifest["observed_scores"] = panel.observed_score_count();
  manifest["parameters"] = archive.names.size();
  json hashed = resolved;
  hashed.erase("output_dir");
  manifest["config_hash"] = hex(fnv1a(hashed.dump()));
  json chains = json::array();
  for (const auto& c : archive.chains) {
    json cj{{"chain", c.chain + 1}, {"seed", c.seed}, {"draws", c.draw_count()}};
    if (spec.kind == ModelKind::sel || spec.kind == ModelKind::sel2) {
      cj["delta_acceptance"] = c.delta_acceptance;
      cj["selection_acceptance"] = c.selection_acceptance;
      cj["selection_steps"] = c.selection_steps;
    }
    chains.push_back(cj);
  }
  manifest["chains"] = chains;
  manifest["convergence"] = conv.available ? json(conv.passed() ? "pass" : "fail") : json(conv.note);

  std::ostringstream diag;
  diag << "model " << to_string(spec.kind) << ", " << panel.size() << " students, " << archive.chains.size()
       << " chains x " << spec.settings.draws_per_chain() << " draws\n";
  diag << convergence_text(conv);
  for (const auto& d : dics)
    diag << "DIC (" << to_string(d.focus) << "): " << csv::fixed(d.dic, 2) << "  lbar " << csv::fixed(d.lbar, 2)
         << "  L(mean) " << csv::fixed(d.l_at_mean, 2) << "  pD " << csv::fixed(d.pd(), 2) << '\n';

  StagedOutput staged(output_dir);
  if (write_draws) staged.write("draws.csv", [&](std::ostream& o) { write_draws_csv(archive, o); });
  staged.write("summary.csv", [&](std::ostream& o) { write_summary_csv(summary, o); });
  staged.write("student_effects.csv", [&](std::ostream& o) { write_summary_csv(students, o); });
  staged.write("convergence.csv", [&](std::ostream& o) { write_convergence_csv(conv, o); });
  staged.write("dic.csv", dic_csv(dics));
  staged.write("diagnostics.txt", diag.str());
  staged.write("ingest_report.txt", loaded.report.to_text());
  staged.write("manifest.json", dump(manifest));
  staged.write("resolved_config.json", dump(resolved));
  if (spec.kind == ModelKind::pmix) {
    staged.write("pattern_groups.csv", pattern_groups_csv(grouping));
    ModelSummary ms{spec.kind, "PMIX", summary, students, dics};
    staged.write("pattern_means.csv", [&](std::ostream& o) { write_pattern_means_csv(pattern_means_table(ms, grouping), o); });
  }
  staged.commit();
  if (!quiet) out << diag.str();
  return conv.available && !conv.passed() ? kConvergence : kOk;
}

// ---------------------------------------------------------------- summarize

int cmd_summarize(const json& j, std::ostream& out) {
  check_keys(j, {"draws", "output_dir", "rhat_threshold", "split_rhat", "quiet"}, "summarize config");
  const std::string path = require_text(j, "draws");
  ConvergenceOptions copt;
  copt.threshold = number(j, "rhat_threshold", 1.05);
  copt.split = boolean(j, "split_rhat", false);
  if (!(copt.threshold > 1.0)) throw ConfigError("'rhat_threshold' must exceed 1");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open draws file '" + path + "'");
  const auto archive = read_draws_csv(in);
  const auto summary = summarize(archive);
  const auto conv = convergence_report(archive, copt);
  json r{{"draws", path},
         {"output_dir", text(j, "output_dir", ".")},
         {"rhat_threshold", copt.threshold},
         {"split_rhat", copt.split}};
  StagedOutput staged(text(j, "output_dir", "."));
  staged.write("summary.csv", [&](std::ostream& o) { write_summary_csv(summary, o); });
  staged.write("convergence.csv", [&](std::ostream& o) { write_convergence_csv(conv, o); });
  staged.write("diagnostics.txt", convergence_text(conv));
  staged.write("resolved_config.json", dump(r));
  staged.commit();
  if (!boolean(j, "quiet", false)) out << convergence_text(conv);
  return conv.available && !conv.passed() ? kConvergence : kOk;
}

// ---------------------------------------------------------------- weights

int cmd_weights(const json& j, std::ostream& out) {
  std::set<std::string> allowed = kPanelKeys;
  allowed.insert({"output_dir", "summary", "nu", "sigma", "tau", "alpha", "mu", "quiet"});
  check_keys(j, allowed, "weights config");

  std::optional<double> nu;
  std::optional<PerYear<double>> sigma, tau, mu;
  std::optional<std::array<double, kAlphaCount>> alpha;
  const std::string summary_path = text(j, "summary", "");
  if (!summary_path.empty()) {
    ModelSummary ms;
    ms.parameters = read_summary_file(summary_path);
    auto grab = [&](const std::string& name) -> std::optional<double> {
      const auto* p = ms.find(name);
      return p ? std::optional<double>(p->mean) : std::nullopt;
    };
    nu = grab("nu");
    auto per_year = [&](const std::string& stem) -> std::optional<PerYear<double>> {
      PerYear<double> v{};
      for (int t = 0; t < kYears; ++t) {
        const auto x = grab(stem + "[" + std::to_string(t + 1) + "]");
        if (!x) return std::nullopt;
        v[t] = *x;
      }
      return v;
    };
    sigma = per_year("sigma");
    tau = per_year("tau");
    mu = per_year("mu");
    std::array<double, kAlphaCount> a{};
    bool all = true;
    for (int s = 0; s < kAlphaCount; ++s) {
      const auto x = grab(alpha_name(s));
      all = all && x.has_value();
      if (x) a[s] = *x;
    }
    if (all) alpha = a;
  }
  if (j.contains("nu")) nu = number(j, "nu", 0.0);
  if (j.contains("sigma")) sigma = fixed_array<kYears>(j, "sigma");
  if (j.contains("tau")) tau = fixed_array<kYears>(j, "tau");
  if (j.contains("mu")) mu = fixed_array<kYears>(j, "mu");
  if (j.contains("alpha")) alpha = fixed_array<kAlphaCount>(j, "alpha");
  if (!nu || !sigma) throw ConfigError("weights need nu and sigma, from 'summary' or given directly");
  if (!(*nu >= 0.0)) throw ConfigError("nu must be nonnegative");
  for (double s : *sigma)
    if (!(s > 0.0)) throw ConfigError("sigma values must be positive");
  PerYear<double> sigma2{};
  for (int t = 0; t < kYears; ++t) sigma2[t] = (*sigma)[t] * (*sigma)[t];
  const double nu2 = *nu * *nu;

  json r;
  r["output_dir"] = text(j, "output_dir", ".");
  if (!summary_path.empty()) r["summary"] = summary_path;
  r["nu"] = *nu;
  r["sigma"] = *sigma;
  if (tau) r["tau"] = *tau;
  if (mu) r["mu"] = *mu;
  if (alpha) r["alpha"] = *alpha;

  const auto averages = average_weights_by_count(nu2, sigma2);
  StagedOutput staged(text(j, "output_dir", "."));
  staged.write("average_weights.csv", [&](std::ostream& o) { write_average_weights_csv(averages, o); });
  const std::string input = text(j, "input", "");
  if (!input.empty()) {
    const auto options = load_options(j);
    resolve_panel_keys(options, input, r);
    const auto loaded = load_panel_file(input, options);
    const auto report = weight_report(loaded.panel, nu2, sigma2);
    staged.write("score_weights.csv", [&](std::ostream& o) { write_score_weights_csv(report.scores, o); });
    staged.write("classroom_weights.csv", [&](std::ostream& o) { write_classroom_weights_csv(report.classrooms, o); });
    if (tau && mu && alpha) {
      for (double t : *tau)
        if (!(t > 0.0)) throw ConfigError("tau values must be positive");
      const auto profile = VarianceProfile::from_sds(*nu, *sigma, *tau, *alpha);
      const auto effects =
          gls_teacher_effects(loaded.panel, build_design(loaded.panel), profile, std::vector<PerYear<double>>{*mu});
      staged.write("gls_teacher_effects.csv", [&](std::ostream& o) { write_teacher_effects_csv(effects, o); });
    }
  }
  staged.write("resolved_config.json", dump(r));
  staged.commit();
  if (!boolean(j, "quiet", false)) {
    out << "average weight by number of scores:";
    for (double a : averages) out << ' ' << csv::fixed(a, 4);
    out << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------- compare

struct FitDir {
  ModelSummary summary;
  json config;
};

FitDir load_fit_dir(const std::string& dir, const std::string& label) {
  FitDir f;
  const fs::path p(dir);
  const auto cfg_path = (p / "resolved_config.json").string();
  if (!fs::exists(cfg_path)) throw IoError("'" + dir + "' is not a fit output directory (no resolved_config.json)");
  f.config = load_config(cfg_path);
  f.summary.kind = parse_model_kind(text(f.config, "model", "MAR"));
  f.summary.label = label;
  f.summary.parameters = read_summary_file((p / "summary.csv").string());
  const auto students = p / "student_effects.csv";
  if (fs::exists(students)) f.summary.students = read_summary_file(students.string());
  f.summary.dic = read_dic_csv((p / "dic.csv").string());
  return f;
}

std::string safe_label(std::string s) {
  for (auto& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return s;
}

int cmd_compare(const json& j, std::ostream& out) {
  std::set<std::string> allowed = kPanelKeys;
  allowed.insert({"output_dir", "fits", "labels", "quiet"});
  check_keys(j, allowed, "compare config");
  const auto dirs = strings(j, "fits");
  if (dirs.size() < 2) throw ConfigError("compare needs at least two fit directories in 'fits'");
  auto labels = strings(j, "labels");
  if (!labels.empty() && labels.size() != dirs.size()) throw ConfigError("'labels' must match 'fits' in length");
  std::vector<FitDir> fits;
  for (std::size_t k = 0; k < dirs.size(); ++k) {
    if (labels.size() < dirs.size()) labels.push_back("");
    fits.push_back(load_fit_dir(dirs[k], ""));
  }
  for (std::size_t k = 0; k < dirs.size(); ++k) {
    if (labels[k].empty()) {
      const std::string base = to_string(fits[k].summary.kind);
      std::size_t same = 0;
      for (const auto& f : fits) same += f.summary.kind == fits[k].summary.kind;
      labels[k] = same > 1 ? base + "_" + std::to_string(k + 1) : base;
    }
    fits[k].summary.label = labels[k];
  }

  // panel: explicit input, else the first fit's input with its load options
  json panel_cfg = j.contains("input") ? j : fits[0].config;
  std::optional<LoadResult> loaded;
  const std::string input = text(panel_cfg, "input", "");
  if (!input.empty()) {
    json subset = json::object();
    for (const auto& key : kPanelKeys)
      if (panel_cfg.contains(key)) subset[key] = panel_cfg[key];
    loaded = load_panel_file(input, load_options(subset));
  }
  const ScorePanel* panel = loaded ? &loaded->panel : nullptr;

  json r{{"output_dir", text(j, "output_dir", ".")}, {"fits", dirs}, {"labels", labels}};
  if (!input.empty()) r["input"] = input;

  StagedOutput staged(text(j, "output_dir", "."));
  std::string report;
  for (std::size_t k = 1; k < fits.size(); ++k) {
    const auto& a = fits[0].summary;
    const auto& b = fits[k].summary;
    const std::string prefix = safe_label(a.label) + "_vs_" + safe_label(b.label) + "_";
    staged.write(prefix + "correlations.csv", [&](std::ostream& o) { write_correlations_csv(teacher_correlations(a, b), o); });
    if (dic_comparable(a.kind, b.kind)) {
      std::ostringstream s;
      s << "focus,model,dic\n";
      for (const auto& d : a.dic) s << to_string(d.focus) << ',' << a.label << ',' << csv::exact(d.dic) << '\n';
      for (const auto& d : b.dic) s << to_string(d.focus) << ',' << b.label << ',' << csv::exact(d.dic) << '\n';
      staged.write(prefix + "dic.csv", s.str());
    }
    if (panel) {
      const auto g = completeness_gradient(a, b, classroom_rosters(*panel));
      staged.write(prefix + "gradient.csv", [&](std::ostream& o) { write_gradient_csv(g, o); });
      staged.write(prefix + "gradient_points.csv", [&](std::ostream& o) { write_gradient_points_csv(g, o); });
      if (a.find("nu") && b.find("nu") && !a.students.empty() && !b.students.empty())
        staged.write(prefix + "shift.csv", [&](std::ostream& o) { write_shift_csv(student_effect_shift(a, b, *panel), o); });
    }
    report += comparison_report(a, b, panel) + "\n";
  }
  if (panel)
    for (const auto& f : fits)
      if (f.summary.kind == ModelKind::pmix) {
        const auto grouping = group_patterns(*panel, static_cast<int>(integer(f.config, "pattern_threshold", 25)));
        staged.write("pattern_means_" + safe_label(f.summary.label) + ".csv",
                     [&](std::ostream& o) { write_pattern_means_csv(pattern_means_table(f.summary, grouping), o); });
      }
  staged.write("report.md", report);
  staged.write("resolved_config.json", dump(r));
  staged.commit();
  if (!boolean(j, "quiet", false)) out << report;
  return kOk;
}

// ---------------------------------------------------------------- flags

class Overrides {
 public:
  template <typename T>
  CLI::Option* option(CLI::App* app, const std::string& flag, const std::string& pointer, const std::string& help) {
    auto value = std::make_shared<T>();
    auto* opt = app->add_option(flag, *value, help);
    apply_.push_back([value, opt, pointer](json& j) {
      if (opt->count()) j[json::json_pointer(pointer)] = *value;
    });
    return opt;
  }

  CLI::Option* flag(CLI::App* app, const std::string& flag, const std::string& pointer, bool value,
                    const std::string& help) {
    auto* opt = app->add_flag(flag, help);
    apply_.push_back([opt, pointer, value](json& j) {
      if (opt->count()) j[json::json_pointer(pointer)] = value;
    });
    return opt;
  }

  void apply(json& j) const {
    for (const auto& f : apply_) f(j);
  }

 private:
  std::vector<std::function<void(json&)>> apply_;
};

void add_panel_flags(CLI::App* app, Overrides& ov) {
  ov.option<std::string>(app, "-i,--input", "/input", "panel CSV (stuid,tchid,year,Y)");
  ov.option<std::string>(app, "--scale", "/scale", "score scale of the input: standardized or raw");
  ov.flag(app, "--strict", "/strict", true, "abort on the first malformed row");
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Value-added teacher effects under missing test scores"};
  app.name("mnarvam");
  app.require_subcommand(1);
  std::string config_path;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic panel and its truth");
  auto* fit = app.add_subcommand("fit", "fit MAR, SEL, SEL2 or PMIX by MCMC");
  auto* wts = app.add_subcommand("weights", "leverage weights and fixed-variance teacher effects");
  auto* cmp = app.add_subcommand("compare", "compare two or more fits");
  auto* sum = app.add_subcommand("summarize", "summaries and R-hat from a draws file");
  Overrides ov_sim, ov_fit, ov_wts, ov_cmp, ov_sum;
  for (auto [sub, ov] : std::initializer_list<std::pair<CLI::App*, Overrides*>>{
           {sim, &ov_sim}, {fit, &ov_fit}, {wts, &ov_wts}, {cmp, &ov_cmp}, {sum, &ov_sum}}) {
    sub->add_option("-c,--config", config_path, "JSON config file");
    ov->option<std::string>(sub, "-o,--output-dir", "/output_dir", "output directory");
    ov->flag(sub, "-q,--quiet", "/quiet", true, "no progress or summary output");
  }

  ov_sim.option<long long>(sim, "--students", "/students", "number of students");
  ov_sim.option<long long>(sim, "--teachers", "/teachers_per_year", "teachers per year");
  ov_sim.option<std::uint64_t>(sim, "--seed", "/seed", "generator seed");
  ov_sim.option<std::string>(sim, "--assignment", "/assignment", "random or sorted");
  ov_sim.option<double>(sim, "--mixing", "/mixing", "noise share of the sorting key in [0, 1]");
  ov_sim.option<std::string>(sim, "--missing", "/missingness/kind", "none, mcar, sel_hazard, sel2, score_dependent");
  ov_sim.option<double>(sim, "--missing-rate", "/missingness/rate", "MCAR deletion probability");
  ov_sim.option<std::vector<double>>(sim, "--sel-a", "/missingness/a", "selection intercepts");
  ov_sim.option<std::vector<double>>(sim, "--sel-beta", "/missingness/beta", "selection slope(s)");
  ov_sim.option<std::uint64_t>(sim, "--missing-seed", "/missingness/seed", "missingness seed");
  ov_sim.flag(sim, "--keep-links", "/missingness/co_delete", false, "keep teacher links of deleted scores");

  add_panel_flags(fit, ov_fit);
  ov_fit.option<std::string>(fit, "-m,--model", "/model", "MAR, SEL, SEL2 or PMIX");
  ov_fit.option<std::string>(fit, "--selection-form", "/selection_form", "hazard or cumulative");
  ov_fit.option<long long>(fit, "--chains", "/chains", "number of chains");
  ov_fit.option<long long>(fit, "--burn-in", "/burn_in", "burn-in iterations per chain");
  ov_fit.option<long long>(fit, "--retained", "/retained", "retained iterations per chain");
  ov_fit.option<long long>(fit, "--thin", "/thin", "keep every k-th retained iteration");
  ov_fit.option<std::uint64_t>(fit, "--seed", "/seed", "root seed");
  ov_fit.option<long long>(fit, "--pattern-threshold", "/pattern_threshold", "PMIX rare-pattern threshold");
  ov_fit.option<double>(fit, "--rhat-threshold", "/rhat_threshold", "convergence threshold");
  ov_fit.flag(fit, "--split-rhat", "/split_rhat", true, "use split R-hat");
  ov_fit.flag(fit, "--store-student-draws", "/store_student_draws", true, "keep every student-effect draw");
  ov_fit.flag(fit, "--no-draws", "/write_draws", false, "do not write draws.csv");
  ov_fit.flag(fit, "--serial", "/parallel", false, "run chains one after another");

  add_panel_flags(wts, ov_wts);
  ov_wts.option<std::string>(wts, "--summary", "/summary", "summary.csv of a fit");
  ov_wts.option<double>(wts, "--nu", "/nu", "student-effect SD");
  ov_wts.option<std::vector<double>>(wts, "--sigma", "/sigma", "five residual SDs");

  add_panel_flags(cmp, ov_cmp);
  ov_cmp.option<std::vector<std::string>>(cmp, "--fit", "/fits", "fit output directories (first is the reference)");
  ov_cmp.option<std::vector<std::string>>(cmp, "--labels", "/labels", "labels for the fits");

  ov_sum.option<std::string>(sum, "--draws", "/draws", "draws.csv");
  ov_sum.option<double>(sum, "--rhat-threshold", "/rhat_threshold", "convergence threshold");
  ov_sum.flag(sum, "--split-rhat", "/split_rhat", true, "use split R-hat");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidation;
  }

  json j = load_config(config_path);
  if (sim->parsed()) {
    ov_sim.apply(j);
    return cmd_simulate(j, out);
  }
  if (fit->parsed()) {
    ov_fit.apply(j);
    return cmd_fit(j, out, err);
  }
  if (wts->parsed()) {
    ov_wts.apply(j);
    return cmd_weights(j, out);
  }
  if (cmp->parsed()) {
    ov_cmp.apply(j);
    return cmd_compare(j, out);
  }
  ov_sum.apply(j);
  return cmd_summarize(j, out);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kValidation;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << '\n';
    return kValidation;
  } catch (const ConsistencyError& e) {
    err << "consistency error: " << e.what() << '\n';
    return kValidation;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const ComparisonError& e) {
    err << "comparison error: " << e.what() << '\n';
    return kComparison;
  } catch (const DiagnosticError& e) {
    err << "diagnostic error: " << e.what() << '\n';
    return kComparison;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int k = 1; k < argc; ++k) args.emplace_back(argv[k]);
  return run(args, std::cout, std::cerr);
}

}  // namespace mnarvam::cli
