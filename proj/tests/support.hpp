#pragma once

#include "enotab/enotab.hpp"

#include <random>
#include <string>
#include <vector>

namespace enotab::testing {

/// City | District | Population | Founded, three rows.
inline Table demo_table() {
  std::vector<std::string> headers{"City", "District", "Population", "Founded"};
  return Table::make("cities", headers,
                     {{"Tel Aviv", "Tel Aviv", "460613", "1909"},
                      {"Holon", "Tel Aviv", "196282", "1940"},
                      {"Haifa", "Haifa", "285316", "1890"}});
}

inline std::string source_path(const std::string& rel) {
  return std::string{ENOTAB_SOURCE_DIR} + "/" + rel;
}

/// Scripted provider over inline fixture lines.
inline ScriptedProvider scripted(const std::string& jsonl, bool strict = false) {
  auto f = Fixture::parse(jsonl);
  f.strict = strict;
  return ScriptedProvider{std::move(f)};
}

/// Small seeded generator for property tests.
class Gen {
public:
  explicit Gen(std::uint64_t seed) : rng_{seed} {
  }

  std::size_t below(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>{0, n - 1}(rng_);
  }
  int range(int lo, int hi) {
    return std::uniform_int_distribution<int>{lo, hi}(rng_);
  }
  bool coin(double p = 0.5) {
    return std::bernoulli_distribution{p}(rng_);
  }
  template <class T>
  const T& pick(const std::vector<T>& v) {
    return v[below(v.size())];
  }
  std::mt19937_64& engine() {
    return rng_;
  }

private:
  std::mt19937_64 rng_;
};

} // namespace enotab::testing
