#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace enotab;
using enotab::testing::demo_table;
using enotab::testing::Gen;
using enotab::testing::scripted;

namespace {

const Evidence district{"District", "Tel Aviv", Action::string_match};

std::string reply(const std::vector<Evidence>& es) {
  std::string s = "```json\n[";
  for (std::size_t i = 0; i < es.size(); ++i)
    s += (i ? ", " : "") + to_json_text(es[i]);
  return s + "]\n```";
}

std::string line(Role role, const std::string& response) {
  return Fixture::to_line(role, "*", response) + "\n";
}

} // namespace

TEST(EvidenceSet, ParsesArraysAndWrappedObjects) {
  EXPECT_EQ(parse_evidence_set(reply({district})), (std::vector<Evidence>{district}));
  EXPECT_EQ(parse_evidence_set(R"({"evidences": [{"area": "District", "condition": "Tel Aviv", "action": "string_match"}]})"),
            (std::vector<Evidence>{district}));
  EXPECT_EQ(parse_evidence_set("[]"), std::vector<Evidence>{});
  EXPECT_FALSE(parse_evidence_set(R"([{"area": "District"}])"));
  EXPECT_FALSE(parse_evidence_set("I could not find any."));
}

TEST(Generation, EachRoundHasTheUnit) {
  auto t = demo_table();
  auto p = scripted(line(Role::evidence, reply({district, {"Updated", "2018", Action::date_eval}})));
  auto rounds = generate_evidence_rounds("how many cities in Tel Aviv, updated in 2018", t, SubTable::full(t), 5, p);
  ASSERT_EQ(rounds.rounds.size(), 5u);
  for (const auto& r : rounds.rounds)
    EXPECT_NE(std::find(r.begin(), r.end(), district), r.end());
  EXPECT_EQ(p.calls(Role::evidence), 5u);
}

TEST(Generation, MalformedRoundIsRetriedOnceThenEmpty) {
  auto t = demo_table();
  auto p = scripted(line(Role::evidence, reply({district})) + line(Role::evidence, "nonsense") +
                    line(Role::evidence, "still nonsense") + line(Role::evidence, reply({district})));
  auto rounds = generate_evidence_rounds("q", t, SubTable::full(t), 3, p);
  EXPECT_EQ(rounds.rounds[0].size(), 1u);
  EXPECT_TRUE(rounds.rounds[1].empty());
  EXPECT_EQ(rounds.rounds[2].size(), 1u);
  EXPECT_EQ(rounds.attempts, (std::vector<std::size_t>{1, 2, 1}));
  EXPECT_EQ(rounds.dropped, (std::vector<std::size_t>{1}));
}

TEST(Generation, AllEmptyIsExhaustion) {
  auto t = demo_table();
  auto p = scripted(line(Role::evidence, "[]"));
  try {
    generate_evidence_rounds("q", t, SubTable::full(t), 2, p);
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::provider_exhausted);
  }
}

TEST(Grouping, Keys) {
  Evidence numeric{"District", "5", Action::numeric_compare};
  EXPECT_EQ(group_evidence({{district}, {{"district", "in Tel Aviv", Action::string_match}}}).size(), 1u);
  EXPECT_EQ(group_evidence({{district}, {numeric}}).size(), 2u);
  EXPECT_TRUE(group_evidence({{}, {}}).empty());
}

TEST(Consistency, AllEquivalentRetainedOnce) {
  std::vector<std::vector<Evidence>> rounds(4, {district});
  rounds.push_back({{"District", "in Tel Aviv", Action::string_match}});
  Discriminator same;
  auto out = consistency_assess(rounds, 0.8, same);
  for (const auto& e : out.report.entries)
    EXPECT_DOUBLE_EQ(e.score, 1.0);
  EXPECT_EQ(out.candidates, (std::vector<Evidence>{district}));
}

TEST(Consistency, OneDivergentMemberSinksTheGroup) {
  std::vector<std::vector<Evidence>> rounds(4, {district});
  rounds.push_back({{"District", "Haifa", Action::string_match}});
  Discriminator same;
  auto out = consistency_assess(rounds, 0.8, same);
  EXPECT_DOUBLE_EQ(out.report.entries[0].score, 0.75);
  EXPECT_DOUBLE_EQ(out.report.entries[4].score, 0.0);
  EXPECT_TRUE(out.candidates.empty());
}

TEST(Consistency, SingletonScoresZero) {
  Discriminator same;
  auto out = consistency_assess({{district}}, 0.0, same);
  EXPECT_DOUBLE_EQ(out.report.entries[0].score, 0.0);
  EXPECT_TRUE(out.report.entries[0].retained); // 0 >= 0
  auto strict = consistency_assess({{district}}, 0.8, same);
  EXPECT_TRUE(strict.candidates.empty());
}

TEST(Consistency, OneDiscriminatorCallPerPair) {
  std::size_t calls = 0;
  auto counting = [&](const std::string& a, const std::string& b) {
    ++calls;
    return rule_equivalent(a, b);
  };
  std::vector<std::vector<Evidence>> rounds(5, {district});
  consistency_assess(rounds, 0.8, counting);
  EXPECT_EQ(calls, 10u);
}

TEST(Consistency, AlphaOutOfRange) {
  Discriminator same;
  EXPECT_THROW(consistency_assess({}, 1.5, same), error);
}

TEST(ConsistencyProperty, MatchesBruteForce) {
  Gen g{71};
  for (int iter = 0; iter < 300; ++iter) {
    auto rounds = enotab::testing::random_rounds(g);
    double alpha = static_cast<double>(g.range(0, 10)) / 10.0;
    auto same = [](const std::string& a, const std::string& b) { return rule_equivalent(a, b); };
    auto got = consistency_assess(rounds, alpha, same);
    auto want = enotab::testing::brute_force_consistency(rounds, alpha, same);
    ASSERT_EQ(got.report.entries.size(), want.scores.size());
    for (std::size_t i = 0; i < want.scores.size(); ++i) {
      EXPECT_EQ(got.report.entries[i].instance.round, want.scores[i].round);
      EXPECT_DOUBLE_EQ(got.report.entries[i].score, want.scores[i].score);
      EXPECT_EQ(got.report.entries[i].retained, want.scores[i].retained);
    }
    EXPECT_EQ(got.candidates, want.candidates);
  }
}

TEST(ConsistencyProperty, RaisingAlphaNeverGrowsCandidates) {
  Gen g{72};
  for (int iter = 0; iter < 200; ++iter) {
    auto rounds = enotab::testing::random_rounds(g);
    Discriminator same;
    std::size_t previous = SIZE_MAX;
    for (int a = 0; a <= 10; ++a) {
      auto n = consistency_assess(rounds, a / 10.0, same).candidates.size();
      EXPECT_LE(n, previous);
      previous = n;
    }
  }
}

TEST(ConsistencyProperty, IdenticalRoundsScoreOne) {
  Gen g{73};
  for (int iter = 0; iter < 100; ++iter) {
    std::vector<Evidence> one;
    auto drawn = enotab::testing::random_rounds(g, 1);
    if (drawn.empty())
      continue;
    for (const auto& e : drawn.front())
      if (std::none_of(one.begin(), one.end(), [&](const Evidence& x) { return key_of(x) == key_of(e); }))
        one.push_back(e);
    std::vector<std::vector<Evidence>> rounds(2 + g.below(5), one);
    // Exact string equality is reflexive but nothing more.
    auto same = [](const std::string& a, const std::string& b) { return a == b; };
    auto out = consistency_assess(rounds, 1.0, same);
    for (const auto& e : out.report.entries) {
      EXPECT_DOUBLE_EQ(e.score, 1.0);
      EXPECT_TRUE(e.retained);
    }
    EXPECT_EQ(out.candidates, one);
  }
}

TEST(Usability, FiltersUngroundedCandidates) {
  auto t = demo_table();
  Evidence cycle{"Cycle", "4", Action::numeric_compare};
  auto out = usability_filter({district, cycle}, t);
  EXPECT_EQ(out.reliable.evidences, (std::vector<Evidence>{district}));
  EXPECT_EQ(out.unusable, (std::vector<Evidence>{cycle}));
  EXPECT_TRUE(usability_filter({}, t).reliable.empty());
}

TEST(Denoise, ReliableSetIsGroundedSubsetOfRounds) {
  Gen g{74};
  auto t = demo_table();
  for (int iter = 0; iter < 100; ++iter) {
    auto rounds = enotab::testing::random_rounds(g, 5, 4);
    std::string fixture;
    for (const auto& r : rounds)
      fixture += line(Role::evidence, reply(r));
    auto p = scripted(fixture);
    Discriminator same;
    EqdConfig cfg;
    cfg.rounds = rounds.size();
    auto out = denoise_question("q", t, SubTable::full(t), cfg, p, same);
    for (const auto& e : out.reliable.evidences) {
      EXPECT_TRUE(check_usability(t, e));
      bool generated = false;
      for (const auto& r : out.rounds.rounds)
        generated = generated || std::find(r.begin(), r.end(), e) != r.end();
      EXPECT_TRUE(generated);
    }
  }
}

TEST(Denoise, SingleRoundSkipsConsistency) {
  auto t = demo_table();
  auto p = scripted(line(Role::evidence, reply({district, {"Cycle", "4", Action::numeric_compare}})));
  Discriminator same;
  EqdConfig cfg;
  cfg.rounds = 1;
  auto out = denoise_question("q", t, SubTable::full(t), cfg, p, same);
  EXPECT_TRUE(out.consistency_skipped);
  EXPECT_EQ(out.reliable.evidences, (std::vector<Evidence>{district}));
  EXPECT_EQ(out.discarded.size(), 1u);
}

TEST(Denoise, ExhaustionYieldsEmptySet) {
  auto t = demo_table();
  auto p = scripted(line(Role::evidence, "no"));
  Discriminator same;
  auto out = denoise_question("q", t, SubTable::full(t), EqdConfig{}, p, same);
  EXPECT_TRUE(out.exhausted);
  EXPECT_TRUE(out.reliable.empty());
}
