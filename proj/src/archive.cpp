#include "mnarvam/archive.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

#include "mnarvam/csv.hpp"
#include "mnarvam/errors.hpp"

namespace mnarvam {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

RunningMoments combine(const std::vector<const RunningMoments*>& parts) {
  RunningMoments out;
  for (const auto* p : parts) out.n += p->n;
  if (out.n == 0) return out;
  for (const auto* p : parts) out.mean += static_cast<double>(p->n) * p->mean;
  out.mean /= static_cast<double>(out.n);
  for (const auto* p : parts) {
    const double d = p->mean - out.mean;
    out.m2 += p->m2 + static_cast<double>(p->n) * d * d;
  }
  return out;
}

}  // namespace

double RunningMoments::variance() const { return n < 2 ? kNaN : m2 / static_cast<double>(n - 1); }

std::vector<double> ChainRecord::series(std::size_t parameter) const {
  std::vector<double> out(draw_count());
  for (std::size_t d = 0; d < out.size(); ++d) out[d] = at(d, parameter);
  return out;
}

std::optional<std::size_t> ChainArchive::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names.begin());
}

std::vector<double> ChainArchive::pooled(std::size_t parameter) const {
  std::vector<double> out;
  out.reserve(total_draws());
  for (const auto& c : chains)
    for (std::size_t d = 0; d < c.draw_count(); ++d) out.push_back(c.at(d, parameter));
  return out;
}

std::size_t ChainArchive::total_draws() const {
  std::size_t n = 0;
  for (const auto& c : chains) n += c.draw_count();
  return n;
}

bool ChainArchive::has_loglik() const {
  if (chains.empty()) return false;
  for (const auto& c : chains)
    if (c.loglik_score.size() != c.draw_count() || c.draw_count() == 0) return false;
  return true;
}

ChainRecord run_chain(const SamplerData& data, int chain_index, const ProgressFn& progress) {
  const auto& settings = data.spec.settings;
  settings.validate();
  ChainRecord rec;
  rec.chain = chain_index;
  rec.seed = chain_seed(settings.seed, chain_index);
  const ParameterLayout layout(data);
  rec.parameters = layout.size();

  GibbsSampler sampler(data, rec.seed);
  const long total = static_cast<long>(settings.burn_in) + settings.retained;
  const long progress_every = std::max<long>(1, total / 20);
  for (long it = 0; it < settings.burn_in; ++it) {
    sampler.sweep(true, it);
    if (progress && (it + 1) % progress_every == 0) progress(chain_index, it + 1, total);
  }
  sampler.reset_acceptance_counters();

  const std::size_t n_draws = static_cast<std::size_t>(settings.draws_per_chain());
  const std::size_t n_students = data.student_count();
  rec.draws.resize(n_draws * rec.parameters);
  rec.iterations.reserve(n_draws);
  rec.loglik_score.reserve(n_draws);
  rec.loglik_selection.reserve(n_draws);
  rec.delta_moments.assign(n_students, {});
  rec.delta_first_half.assign(n_students, {});
  rec.delta_second_half.assign(n_students, {});
  if (settings.store_student_draws) rec.delta_draws.reserve(n_draws * n_students);

  for (long k = 0; k < settings.retained; ++k) {
    const long it = settings.burn_in + k;
    sampler.sweep(false, it);
    if (progress && (it + 1) % progress_every == 0) progress(chain_index, it + 1, total);
    if ((k + 1) % settings.thin != 0) continue;
    const std::size_t d = rec.iterations.size();
    if (d >= n_draws) break;
    const auto& state = sampler.state();
    layout.flatten(state, std::span<double>(rec.draws.data() + d * rec.parameters, rec.parameters));
    rec.iterations.push_back(it + 1);
    const auto ll = sampler.loglik();
    rec.loglik_score.push_back(ll.score);
    rec.loglik_selection.push_back(ll.selection);
    auto& half = 2 * d < n_draws ? rec.delta_first_half : rec.delta_second_half;
    for (std::size_t i = 0; i < n_students; ++i) {
      rec.delta_moments[i].add(state.delta[i]);
      half[i].add(state.delta[i]);
    }
    if (settings.store_student_draws) rec.delta_draws.insert(rec.delta_draws.end(), state.delta.begin(), state.delta.end());
  }
  rec.delta_acceptance = sampler.delta_acceptance_rate();
  rec.selection_acceptance = sampler.selection_acceptance_rates();
  rec.selection_steps = sampler.selection_step_sizes();
  rec.final_state = sampler.state();
  return rec;
}

ChainArchive run_chains(const SamplerData& data, bool parallel, const ProgressFn& progress) {
  ChainArchive archive;
  archive.spec = data.spec;
  archive.names = ParameterLayout(data).names();
  archive.student_ids = data.student_ids;
  const int n = data.spec.settings.chains;
  if (parallel && n > 1) {
    std::vector<std::future<ChainRecord>> futures;
    for (int c = 0; c < n; ++c)
      futures.push_back(std::async(std::launch::async, [&data, c, &progress] { return run_chain(data, c, progress); }));
    for (auto& f : futures) archive.chains.push_back(f.get());
  } else {
    for (int c = 0; c < n; ++c) archive.chains.push_back(run_chain(data, c, progress));
  }
  return archive;
}

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) return kNaN;
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double effective_sample_size(const std::vector<std::vector<double>>& chains) {
  std::size_t n = std::numeric_limits<std::size_t>::max();
  for (const auto& c : chains) n = std::min(n, c.size());
  const std::size_t m = chains.size();
  if (m == 0 || n < 4) return kNaN;
  const double nd = static_cast<double>(n);

  std::vector<double> means(m);
  double w = 0.0;
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = std::accumulate(chains[c].begin(), chains[c].begin() + static_cast<std::ptrdiff_t>(n), 0.0) / nd;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (chains[c][i] - means[c]) * (chains[c][i] - means[c]);
    w += ss / (nd - 1.0);
  }
  w /= static_cast<double>(m);
  double between = 0.0;
  if (m > 1) {
    const double grand = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(m);
    for (double x : means) between += (x - grand) * (x - grand);
    between /= static_cast<double>(m - 1);
  }
  const double var_plus = (nd - 1.0) / nd * w + between;
  if (!(var_plus > 0.0)) return kNaN;

  auto rho = [&](std::size_t lag) {
    double acov = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i + lag < n; ++i) s += (chains[c][i] - means[c]) * (chains[c][i + lag] - means[c]);
      acov += s / nd;
    }
    acov /= static_cast<double>(m);
    return 1.0 - (w - acov) / var_plus;
  };

  double tau = -1.0;
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t lag = 0; lag + 1 < n; lag += 2) {
    double pair = rho(lag) + rho(lag + 1);
    if (!(pair > 0.0)) break;
    pair = std::min(pair, previous);
    previous = pair;
    tau += 2.0 * pair;
  }
  const double total = static_cast<double>(m) * nd;
  const double ess = total / std::max(tau, 1.0 / std::log10(total));
  return ess;
}

double monte_carlo_se(const std::vector<std::vector<double>>& chains) {
  RunningMoments moments;
  for (const auto& c : chains)
    for (double x : c) moments.add(x);
  if (moments.n < 2) return kNaN;
  const double sd = std::sqrt(moments.variance());
  if (sd == 0.0) return 0.0;
  return sd / std::sqrt(effective_sample_size(chains));
}

PosteriorSummary summarize_series(const std::string& name, const std::vector<std::vector<double>>& chains) {
  PosteriorSummary s;
  s.name = name;
  std::vector<double> all;
  for (const auto& c : chains) all.insert(all.end(), c.begin(), c.end());
  if (all.empty()) {
    s.mean = s.sd = s.lower = s.upper = s.mcse = kNaN;
    return s;
  }
  RunningMoments m;
  for (double x : all) m.add(x);
  s.mean = m.mean;
  s.sd = all.size() > 1 ? std::sqrt(m.variance()) : 0.0;
  std::sort(all.begin(), all.end());
  s.lower = quantile_sorted(all, 0.025);
  s.upper = quantile_sorted(all, 0.975);
  s.mcse = monte_carlo_se(chains);
  return s;
}

std::vector<PosteriorSummary> summarize(const ChainArchive& archive) {
  std::vector<PosteriorSummary> out;
  out.reserve(archive.names.size());
  for (std::size_t p = 0; p < archive.names.size(); ++p) {
    std::vector<std::vector<double>> per_chain;
    for (const auto& c : archive.chains) per_chain.push_back(c.series(p));
    out.push_back(summarize_series(archive.names[p], per_chain));
  }
  return out;
}

std::vector<PosteriorSummary> summarize_students(const ChainArchive& archive) {
  std::vector<PosteriorSummary> out;
  const std::size_t n = archive.student_ids.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<const RunningMoments*> parts;
    for (const auto& c : archive.chains)
      if (i < c.delta_moments.size()) parts.push_back(&c.delta_moments[i]);
    const auto m = combine(parts);
    PosteriorSummary s;
    s.name = student_effect_name(archive.student_ids[i]);
    s.mean = m.n ? m.mean : kNaN;
    s.sd = m.n > 1 ? std::sqrt(m.variance()) : kNaN;
    s.lower = s.upper = s.mcse = kNaN;
    bool stored = !archive.chains.empty();
    for (const auto& c : archive.chains) stored = stored && c.delta_draws.size() == c.draw_count() * n;
    if (stored) {
      std::vector<double> draws;
      for (const auto& c : archive.chains)
        for (std::size_t d = 0; d < c.draw_count(); ++d) draws.push_back(c.delta_draws[d * n + i]);
      std::sort(draws.begin(), draws.end());
      s.lower = quantile_sorted(draws, 0.025);
      s.upper = quantile_sorted(draws, 0.975);
    }
    out.push_back(std::move(s));
  }
  return out;
}

ParameterState posterior_mean_state(const ChainArchive& archive, const SamplerData& data) {
  if (archive.chains.empty()) throw DiagnosticError("archive has no chains");
  ParameterState state = archive.chains.front().final_state;
  const ParameterLayout layout(data);
  if (layout.size() != archive.names.size()) throw ConsistencyError("archive does not match the model layout");
  std::vector<double> means(layout.size(), 0.0);
  const double n = static_cast<double>(archive.total_draws());
  if (n == 0) throw DiagnosticError("archive has no retained draws");
  for (const auto& c : archive.chains)
    for (std::size_t d = 0; d < c.draw_count(); ++d)
      for (std::size_t p = 0; p < layout.size(); ++p) means[p] += c.at(d, p);
  for (auto& m : means) m /= n;
  layout.unflatten(means, state);
  for (std::size_t i = 0; i < state.delta.size(); ++i) {
    std::vector<const RunningMoments*> parts;
    for (const auto& c : archive.chains)
      if (i < c.delta_moments.size()) parts.push_back(&c.delta_moments[i]);
    state.delta[i] = combine(parts).mean;
  }
  return state;
}

void write_draws_csv(const ChainArchive& archive, std::ostream& out) {
  out << "chain,iteration,loglik_score,loglik_selection";
  for (const auto& name : archive.names) out << ',' << csv::quote(name);
  out << '\n';
  for (const auto& c : archive.chains)
    for (std::size_t d = 0; d < c.draw_count(); ++d) {
      out << c.chain << ',' << c.iterations[d] << ',' << csv::exact(c.loglik_score[d]) << ','
          << csv::exact(c.loglik_selection[d]);
      for (std::size_t p = 0; p < c.parameters; ++p) out << ',' << csv::exact(c.at(d, p));
      out << '\n';
    }
}

ChainArchive read_draws_csv(std::istream& in) {
  const auto table = csv::read_table(in);
  if (table.header.size() < 4 || table.header[0] != "chain" || table.header[1] != "iteration")
    throw ValidationError("draws file must start with chain,iteration,loglik_score,loglik_selection");
  ChainArchive archive;
  archive.names.assign(table.header.begin() + 4, table.header.end());
  std::map<long long, std::size_t> chain_pos;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    if (row.size() != table.header.size())
      throw ValidationError("draws file row " + std::to_string(r + 2) + " has the wrong number of fields");
    const auto chain = csv::parse_int(row[0]);
    const auto iteration = csv::parse_int(row[1]);
    if (!chain || !iteration) throw ValidationError("draws file row " + std::to_string(r + 2) + ": bad chain/iteration");
    auto [it, inserted] = chain_pos.try_emplace(*chain, archive.chains.size());
    if (inserted) {
      archive.chains.emplace_back();
      archive.chains.back().chain = static_cast<int>(*chain);
      archive.chains.back().parameters = archive.names.size();
    }
    auto& c = archive.chains[it->second];
    c.iterations.push_back(static_cast<long>(*iteration));
    auto num = [&](std::size_t k) {
      if (csv::is_missing(row[k])) return kNaN;
      const auto v = csv::parse_double(row[k]);
      if (!v) throw ValidationError("draws file row " + std::to_string(r + 2) + ": bad number '" + row[k] + "'");
      return *v;
    };
    c.loglik_score.push_back(num(2));
    c.loglik_selection.push_back(num(3));
    for (std::size_t k = 4; k < row.size(); ++k) c.draws.push_back(num(k));
  }
  return archive;
}

void write_summary_csv(const std::vector<PosteriorSummary>& rows, std::ostream& out) {
  out << "parameter,mean,sd,q2.5,q97.5,mcse\n";
  for (const auto& s : rows)
    out << csv::quote(s.name) << ',' << csv::general(s.mean) << ',' << csv::general(s.sd) << ',' << csv::general(s.lower) << ','
        << csv::general(s.upper) << ',' << csv::general(s.mcse) << '\n';
}

std::vector<PosteriorSummary> read_summary_csv(std::istream& in) {
  const auto table = csv::read_table(in);
  const std::size_t c_name = table.require_column("parameter"), c_mean = table.require_column("mean"),
                    c_sd = table.require_column("sd");
  const auto c_lo = table.column("q2.5"), c_hi = table.column("q97.5"), c_mcse = table.column("mcse");
  std::vector<PosteriorSummary> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    auto num = [&](std::optional<std::size_t> k) {
      if (!k) return kNaN;
      if (*k >= row.size()) throw ValidationError("summary row " + std::to_string(r + 2) + " is short");
      if (csv::is_missing(row[*k])) return kNaN;
      const auto v = csv::parse_double(row[*k]);
      if (!v) throw ValidationError("summary row " + std::to_string(r + 2) + ": bad number '" + row[*k] + "'");
      return *v;
    };
    if (c_name >= row.size()) throw ValidationError("summary row " + std::to_string(r + 2) + " is short");
    out.push_back({row[c_name], num(c_mean), num(c_sd), num(c_lo), num(c_hi), num(c_mcse)});
  }
  return out;
}

std::vector<PosteriorSummary> read_summary_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open summary file '" + path + "'");
  return read_summary_csv(in);
}

}  // namespace mnarvam
