#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mnarvam/score_panel.hpp"

namespace mnarvam {

inline constexpr int kPatternCount = 31;

/// Which of the five annual scores a student has. Index 1..31 follows the
/// canonical order: descending number observed, then lexicographic on the
/// flags read from grade 1 to grade 5 with "missing" before "observed".
class ResponsePattern {
 public:
  static ResponsePattern from_flags(const PerYear<bool>& flags);
  static ResponsePattern from_index(int index);
  /// Parses "10110" (grade 1 first).
  static ResponsePattern parse(const std::string& bits);
  static const std::array<ResponsePattern, kPatternCount>& all();

  int index() const;
  int n_observed() const;
  bool observed(int year) const { return (bits_ >> year) & 1u; }
  PerYear<bool> flags() const;
  std::vector<int> observed_years() const;
  std::string to_string() const;
  std::uint8_t bits() const { return bits_; }

  auto operator<=>(const ResponsePattern&) const = default;

 private:
  explicit ResponsePattern(std::uint8_t bits) : bits_(bits) {}
  std::uint8_t bits_ = 0;
};

ResponsePattern pattern_of(const StudentRecord& record);

/// Students per pattern, indexed by pattern index - 1.
using PatternCounts = std::array<std::size_t, kPatternCount>;
PatternCounts pattern_counts(const ScorePanel& panel);

struct PatternGroup {
  int id = 0;  // 1-based
  std::vector<ResponsePattern> patterns;
  std::size_t students = 0;
  bool catch_all = false;
  /// Union of the members' observed years; these are the estimated years.
  PerYear<bool> years{};

  /// A standalone single-score pattern: no separate student effect is modeled.
  bool single_score() const { return !catch_all && patterns.size() == 1 && patterns.front().n_observed() == 1; }

  friend bool operator==(const PatternGroup&, const PatternGroup&) = default;
};

class PatternGrouping {
 public:
  PatternGrouping() = default;
  PatternGrouping(int threshold, std::vector<PatternGroup> groups);

  int threshold() const { return threshold_; }
  const std::vector<PatternGroup>& groups() const { return groups_; }
  std::size_t size() const { return groups_.size(); }
  /// 0-based position in groups() of the group holding this pattern.
  std::size_t group_of(ResponsePattern pattern) const;
  const PatternGroup& group(std::size_t position) const { return groups_.at(position); }

  friend bool operator==(const PatternGrouping&, const PatternGrouping&) = default;

 private:
  int threshold_ = 0;
  std::vector<PatternGroup> groups_;
  std::array<std::size_t, kPatternCount> position_of_{};
};

/// Patterns with at least `threshold` students stand alone (in canonical
/// order); the rest share one catch-all group placed last.
PatternGrouping group_patterns(const PatternCounts& counts, int threshold);
PatternGrouping group_patterns(const ScorePanel& panel, int threshold);

}  // namespace mnarvam
