#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mnarvam/archive.hpp"
#include "mnarvam/sampler.hpp"

namespace mnarvam {

/// Classical potential scale reduction factor
///   sqrt(((n-1)/n W + B/n) / W)
/// with B = n * var(chain means) and W = mean within-chain variance.
/// NaN when fewer than 2 chains, fewer than 2 draws, unequal lengths or W == 0.
double gelman_rubin(const std::vector<std::vector<double>>& chains);
/// Same statistic after splitting every chain into halves.
double split_gelman_rubin(const std::vector<std::vector<double>>& chains);
/// From per-chain moments (all chains with the same n).
double gelman_rubin_from_moments(const std::vector<RunningMoments>& chains);

enum class ConvergenceStatus { pass, fail, undefined };
std::string to_string(ConvergenceStatus status);

struct ConvergenceRow {
  std::string name;
  double rhat = 0.0;
  ConvergenceStatus status = ConvergenceStatus::undefined;
};

struct ConvergenceReport {
  double threshold = 1.05;
  bool available = true;
  std::string note;
  std::vector<ConvergenceRow> rows;

  std::size_t failures() const;
  std::size_t undefined() const;
  double max_rhat() const;
  bool passed() const { return available && failures() == 0; }
};

struct ConvergenceOptions {
  double threshold = 1.05;
  bool split = false;
  bool include_students = true;
};

ConvergenceReport convergence_report(const ChainArchive& archive, const ConvergenceOptions& options = {});
void write_convergence_csv(const ConvergenceReport& report, std::ostream& out);
std::string convergence_text(const ConvergenceReport& report);

/// score: Gaussian score density only. joint: plus the selection term (SEL/SEL2).
enum class DicFocus { score, joint };
std::string to_string(DicFocus focus);

struct DicResult {
  DicFocus focus = DicFocus::score;
  double lbar = 0.0;
  double l_at_mean = 0.0;
  double dic = 0.0;
  double pd() const { return 2.0 * (l_at_mean - lbar); }
};

/// -4 lbar + 2 l_at_mean.
DicResult dic_from_components(double lbar, double l_at_mean, DicFocus focus = DicFocus::score);
/// lbar from the per-draw log-likelihood trace; l_at_mean at the posterior mean of all unknowns including theta and delta.
DicResult dic(const ChainArchive& archive, const SamplerData& data, DicFocus focus = DicFocus::score);

}  // namespace mnarvam
