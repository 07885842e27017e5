#include "mnarvam/patterns.hpp"

#include <algorithm>
#include <bit>
#include <utility>

#include "mnarvam/errors.hpp"

namespace mnarvam {

namespace {

struct Enumeration {
  std::array<std::uint8_t, kPatternCount> bits_by_index{};  // position = index - 1
  std::array<int, 32> index_by_bits{};
};

const Enumeration& enumeration() {
  static const Enumeration e = [] {
    Enumeration out;
    std::vector<std::uint8_t> all;
    for (unsigned b = 1; b < 32; ++b) all.push_back(static_cast<std::uint8_t>(b));
    auto key = [](std::uint8_t b) {
      std::string s;
      for (int t = 0; t < kYears; ++t) s += ((b >> t) & 1u) ? '1' : '0';
      return s;
    };
    std::sort(all.begin(), all.end(), [&](std::uint8_t a, std::uint8_t b) {
      const int na = std::popcount(a), nb = std::popcount(b);
      if (na != nb) return na > nb;
      return key(a) < key(b);
    });
    for (int i = 0; i < kPatternCount; ++i) {
      out.bits_by_index[i] = all[i];
      out.index_by_bits[all[i]] = i + 1;
    }
    return out;
  }();
  return e;
}

}  // namespace

ResponsePattern ResponsePattern::from_flags(const PerYear<bool>& flags) {
  std::uint8_t b = 0;
  for (int t = 0; t < kYears; ++t)
    if (flags[t]) b |= static_cast<std::uint8_t>(1u << t);
  if (b == 0) throw ValidationError("response pattern needs at least one observed year");
  return ResponsePattern(b);
}

ResponsePattern ResponsePattern::from_index(int index) {
  if (index < 1 || index > kPatternCount) throw ValidationError("pattern index must be in 1..31");
  return ResponsePattern(enumeration().bits_by_index[index - 1]);
}

ResponsePattern ResponsePattern::parse(const std::string& bits) {
  if (bits.size() != kYears) throw ValidationError("pattern string must have 5 characters");
  PerYear<bool> f{};
  for (int t = 0; t < kYears; ++t) {
    if (bits[t] != '0' && bits[t] != '1') throw ValidationError("pattern string must be 0/1");
    f[t] = bits[t] == '1';
  }
  return from_flags(f);
}

const std::array<ResponsePattern, kPatternCount>& ResponsePattern::all() {
  static const auto patterns = []<std::size_t... I>(std::index_sequence<I...>) {
    return std::array<ResponsePattern, kPatternCount>{ResponsePattern(enumeration().bits_by_index[I])...};
  }(std::make_index_sequence<kPatternCount>{});
  return patterns;
}

int ResponsePattern::index() const { return enumeration().index_by_bits[bits_]; }

int ResponsePattern::n_observed() const { return std::popcount(bits_); }

PerYear<bool> ResponsePattern::flags() const {
  PerYear<bool> f{};
  for (int t = 0; t < kYears; ++t) f[t] = observed(t);
  return f;
}

std::vector<int> ResponsePattern::observed_years() const {
  std::vector<int> out;
  for (int t = 0; t < kYears; ++t)
    if (observed(t)) out.push_back(t);
  return out;
}

std::string ResponsePattern::to_string() const {
  std::string s;
  for (int t = 0; t < kYears; ++t) s += observed(t) ? '1' : '0';
  return s;
}

ResponsePattern pattern_of(const StudentRecord& record) { return ResponsePattern::from_flags(record.response_flags); }

PatternCounts pattern_counts(const ScorePanel& panel) {
  PatternCounts counts{};
  for (const auto& s : panel.students()) ++counts[pattern_of(s).index() - 1];
  return counts;
}

PatternGrouping::PatternGrouping(int threshold, std::vector<PatternGroup> groups)
    : threshold_(threshold), groups_(std::move(groups)) {
  position_of_.fill(groups_.size());
  for (std::size_t g = 0; g < groups_.size(); ++g)
    for (const auto& p : groups_[g].patterns) position_of_[p.index() - 1] = g;
  for (auto pos : position_of_)
    if (pos == groups_.size()) throw ConsistencyError("pattern grouping does not cover all 31 patterns");
}

std::size_t PatternGrouping::group_of(ResponsePattern pattern) const { return position_of_[pattern.index() - 1]; }

PatternGrouping group_patterns(const PatternCounts& counts, int threshold) {
  if (threshold < 0) throw ConfigError("pattern threshold must be nonnegative");
  std::vector<PatternGroup> groups;
  PatternGroup rest;
  rest.catch_all = true;
  for (const auto& p : ResponsePattern::all()) {
    const std::size_t n = counts[p.index() - 1];
    if (n >= static_cast<std::size_t>(threshold)) {
      PatternGroup g;
      g.id = static_cast<int>(groups.size()) + 1;
      g.patterns = {p};
      g.students = n;
      g.years = p.flags();
      groups.push_back(std::move(g));
    } else {
      rest.patterns.push_back(p);
      rest.students += n;
      if (n > 0)
        for (int t = 0; t < kYears; ++t) rest.years[t] = rest.years[t] || p.observed(t);
    }
  }
  if (!rest.patterns.empty()) {
    rest.id = static_cast<int>(groups.size()) + 1;
    groups.push_back(std::move(rest));
  }
  return PatternGrouping(threshold, std::move(groups));
}

PatternGrouping group_patterns(const ScorePanel& panel, int threshold) {
  return group_patterns(pattern_counts(panel), threshold);
}

}  // namespace mnarvam
