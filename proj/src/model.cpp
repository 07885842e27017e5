#include "mnarvam/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "mnarvam/errors.hpp"

namespace mnarvam {

namespace {

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

bool positive(double x) { return std::isfinite(x) && x > 0.0; }

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::mar: return "MAR";
    case ModelKind::sel: return "SEL";
    case ModelKind::sel2: return "SEL2";
    case ModelKind::pmix: return "PMIX";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  const auto u = upper(name);
  if (u == "MAR") return ModelKind::mar;
  if (u == "SEL") return ModelKind::sel;
  if (u == "SEL2") return ModelKind::sel2;
  if (u == "PMIX") return ModelKind::pmix;
  throw ConfigError("unknown model '" + name + "' (expected MAR, SEL, SEL2 or PMIX)");
}

std::string to_string(SelectionForm form) { return form == SelectionForm::hazard ? "hazard" : "cumulative"; }

SelectionForm parse_selection_form(const std::string& name) {
  if (name == "hazard") return SelectionForm::hazard;
  if (name == "cumulative") return SelectionForm::cumulative;
  throw ConfigError("unknown selection form '" + name + "' (expected hazard or cumulative)");
}

void PriorSpec::validate() const {
  if (!positive(mean_sd) || !positive(tau_upper) || !positive(nu_upper) || !positive(sigma_upper) ||
      !positive(sel_coef_var) || !positive(sel2_coef_var))
    throw ConfigError("all prior bounds and scales must be strictly positive");
}

void SamplerSettings::validate() const {
  if (chains < 1) throw ConfigError("chain count must be at least 1");
  if (burn_in < 0) throw ConfigError("burn-in must be nonnegative");
  if (retained < 1) throw ConfigError("retained iterations must be at least 1");
  if (thin < 1) throw ConfigError("thin must be at least 1");
  if (retained < thin) throw ConfigError("retained iterations must be at least thin");
  if (adapt_interval < 1) throw ConfigError("adapt interval must be at least 1");
}

void ModelSpec::validate() const {
  prior.validate();
  settings.validate();
  if (pattern_threshold < 0) throw ConfigError("pattern threshold must be nonnegative");
  auto check_sd = [](const std::optional<PerYear<double>>& v, double upper_bound, const char* what) {
    if (!v) return;
    for (double x : *v)
      if (!positive(x) || x >= upper_bound) throw ConfigError(std::string("fixed ") + what + " outside its prior support");
  };
  check_sd(fixed.tau, prior.tau_upper, "tau");
  check_sd(fixed.sigma, prior.sigma_upper, "sigma");
  if (fixed.nu && (!positive(*fixed.nu) || *fixed.nu >= prior.nu_upper))
    throw ConfigError("fixed nu outside its prior support");
  if (kind == ModelKind::pmix && (fixed.mu || fixed.nu || fixed.sigma))
    throw ConfigError("PMIX cannot fix mu, nu or sigma (they are pattern specific)");
  if (fixed.selection_slope_zero && (kind == ModelKind::mar || kind == ModelKind::pmix))
    throw ConfigError("selection slope can only be fixed for SEL or SEL2");
}

int selection_intercept_count(ModelKind kind) {
  return kind == ModelKind::sel ? kYears - 1 : kind == ModelKind::sel2 ? kYears : 0;
}

int selection_slope_count(ModelKind kind) { return kind == ModelKind::sel ? 1 : kind == ModelKind::sel2 ? kYears : 0; }

}  // namespace mnarvam
