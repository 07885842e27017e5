#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "mnarvam/patterns.hpp"

using namespace mnarvam;

TEST_CASE("canonical enumeration") {
  const auto& all = ResponsePattern::all();
  CHECK(all.size() == 31);
  std::set<std::uint8_t> seen;
  for (const auto& p : all) seen.insert(p.bits());
  CHECK(seen.size() == 31);
  CHECK(!seen.count(0));
  CHECK(ResponsePattern::from_flags({true, true, true, true, true}).index() == 1);
  CHECK(ResponsePattern::from_flags({true, false, false, false, false}).n_observed() == 1);
  for (std::size_t k = 1; k < all.size(); ++k) CHECK(all[k - 1].n_observed() >= all[k].n_observed());
  for (int i = 1; i <= 31; ++i) CHECK(ResponsePattern::from_index(i).index() == i);
}

TEST_CASE("parse and to_string agree") {
  for (const auto& p : ResponsePattern::all()) CHECK(ResponsePattern::parse(p.to_string()) == p);
  const auto p = ResponsePattern::parse("10110");
  CHECK(p.observed(0));
  CHECK_FALSE(p.observed(1));
  CHECK(p.observed_years() == std::vector<int>{0, 2, 3});
}

TEST_CASE("threshold 0 keeps 31 standalone groups") {
  PatternCounts counts{};
  counts[0] = 10;
  const auto g = group_patterns(counts, 0);
  CHECK(g.size() == 31);
  for (const auto& grp : g.groups()) CHECK_FALSE(grp.catch_all);
}

TEST_CASE("rare patterns go to the catch-all group") {
  PatternCounts counts{};
  const auto a = ResponsePattern::parse("10100");
  const auto b = ResponsePattern::parse("11111");
  counts[a.index() - 1] = 3;
  counts[b.index() - 1] = 100;
  const auto g = group_patterns(counts, 10);
  const auto& gb = g.group(g.group_of(b));
  const auto& ga = g.group(g.group_of(a));
  CHECK_FALSE(gb.catch_all);
  CHECK(gb.students == 100);
  CHECK(ga.catch_all);
  CHECK(ga.students == 3);
}

TEST_CASE("regrouping with the same threshold is idempotent") {
  PatternCounts counts{};
  for (int i = 0; i < 31; ++i) counts[i] = static_cast<std::size_t>((i * 37) % 50);
  const auto g = group_patterns(counts, 20);
  PatternCounts regrouped{};
  // standalone groups keep their counts, catch-all members stay below threshold
  for (const auto& p : ResponsePattern::all()) regrouped[p.index() - 1] = counts[p.index() - 1];
  CHECK(group_patterns(regrouped, 20) == g);
  for (const auto& grp : g.groups())
    if (!grp.catch_all)
      for (const auto& p : grp.patterns) CHECK(counts[p.index() - 1] >= 20);
}
