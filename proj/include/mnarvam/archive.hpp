#pragma once

// Chain execution and storage of retained draws.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mnarvam/model.hpp"
#include "mnarvam/sampler.hpp"

namespace mnarvam {

/// Welford accumulator.
struct RunningMoments {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  /// Sample variance (n - 1 denominator); NaN when n < 2.
  double variance() const;
};

struct ChainRecord {
  int chain = 0;
  std::uint64_t seed = 0;
  std::size_t parameters = 0;
  /// Row-major: draws x parameters, in ParameterLayout order.
  std::vector<double> draws;
  std::vector<long> iterations;
  std::vector<double> loglik_score;
  std::vector<double> loglik_selection;

  /// Student effects: moments over all retained draws and over each half.
  std::vector<RunningMoments> delta_moments, delta_first_half, delta_second_half;
  /// Only with store_student_draws: draws x students.
  std::vector<double> delta_draws;

  double delta_acceptance = 0.0;
  std::vector<double> selection_acceptance;
  std::vector<double> selection_steps;
  ParameterState final_state;

  std::size_t draw_count() const { return iterations.size(); }
  double at(std::size_t draw, std::size_t parameter) const { return draws[draw * parameters + parameter]; }
  std::vector<double> series(std::size_t parameter) const;
};

struct ChainArchive {
  ModelSpec spec;
  std::vector<std::string> names;
  std::vector<std::string> student_ids;
  std::vector<ChainRecord> chains;

  std::optional<std::size_t> index_of(const std::string& name) const;
  /// All chains concatenated.
  std::vector<double> pooled(std::size_t parameter) const;
  std::size_t total_draws() const;
  bool has_loglik() const;
};

/// Called every `progress_every` iterations with (chain, iteration, total iterations).
using ProgressFn = std::function<void(int, long, long)>;

ChainRecord run_chain(const SamplerData& data, int chain_index, const ProgressFn& progress = {});
/// Runs spec.settings.chains chains, concurrently when `parallel`.
ChainArchive run_chains(const SamplerData& data, bool parallel = true, const ProgressFn& progress = {});

struct PosteriorSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double lower = 0.0;  // 2.5%
  double upper = 0.0;  // 97.5%
  double mcse = 0.0;

  friend bool operator==(const PosteriorSummary&, const PosteriorSummary&) = default;
};

/// Type-7 (linear interpolation) sample quantile. `sorted` must be ascending.
double quantile_sorted(std::span<const double> sorted, double p);
/// Multi-chain effective sample size from Geyer's initial monotone sequence of
/// autocorrelations. Chains are truncated to the shortest; NaN when fewer than
/// four draws per chain or the series is constant.
double effective_sample_size(const std::vector<std::vector<double>>& chains);
/// sd / sqrt(ESS); 0 for a constant series.
double monte_carlo_se(const std::vector<std::vector<double>>& chains);

PosteriorSummary summarize_series(const std::string& name, const std::vector<std::vector<double>>& chains);
std::vector<PosteriorSummary> summarize(const ChainArchive& archive);
/// Student effects from the pooled moments; interval bounds are NaN unless draws were stored.
std::vector<PosteriorSummary> summarize_students(const ChainArchive& archive);

/// Posterior means of every monitored parameter and student effect; fixed
/// parameters keep their fixed values.
ParameterState posterior_mean_state(const ChainArchive& archive, const SamplerData& data);

/// Columns: chain, iteration, loglik_score, loglik_selection, then one per parameter.
void write_draws_csv(const ChainArchive& archive, std::ostream& out);
/// Reads draws back; spec, student ids and moments are not part of the file.
ChainArchive read_draws_csv(std::istream& in);

void write_summary_csv(const std::vector<PosteriorSummary>& rows, std::ostream& out);
std::vector<PosteriorSummary> read_summary_csv(std::istream& in);
std::vector<PosteriorSummary> read_summary_file(const std::string& path);

}  // namespace mnarvam
