#include "oracles.hpp"
#include "planted.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

using namespace enotab;
using enotab::testing::Gen;

namespace {

// Pinned tolerances and budgets.
constexpr double rate_tolerance = 1e-9;         // one-decimal values compared exactly
constexpr double score_tolerance = 0.0;         // consistency scores must agree bit for bit
constexpr std::size_t property_cases = 1000;
constexpr std::size_t recall_required = 9;      // of 10 planted rows
constexpr std::size_t max_verifier_calls = 2;

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(std::string why) {
    if (pass)
      detail = std::move(why);
    pass = false;
  }
};

int failures = 0;

void criterion(int number, const char* name, double budget_seconds, const std::function<Outcome()>& body) {
  auto start = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out.fail(std::string{"exception: "} + e.what());
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (out.pass && secs > budget_seconds)
    out.fail("took " + std::to_string(secs) + " s, budget " + std::to_string(budget_seconds) + " s");
  if (!out.pass)
    ++failures;
  std::printf("[%s] %d. %s (%.3f s)%s%s\n", out.pass ? "PASS" : "FAIL", number, name, secs,
              out.detail.empty() ? "" : ": ", out.detail.c_str());
}

Outcome compression_arithmetic() {
  Outcome out;
  struct Pair {
    std::int64_t entire, pruned;
    double percent;
  };
  for (auto [e, p, want] : {Pair{343, 216, 37.0}, Pair{627, 294, 53.1}, Pair{8967, 2176, 75.7},
                            Pair{26742, 2893, 89.2}}) {
    double got = compression_rate(e, p);
    if (std::fabs(got - want) > rate_tolerance)
      out.fail("(" + std::to_string(e) + ", " + std::to_string(p) + ") gave " + std::to_string(got));
  }
  return out;
}

Outcome consistency_oracle() {
  Outcome out;
  Gen g{2001};
  auto same = [](const std::string& a, const std::string& b) { return rule_equivalent(a, b); };
  for (std::size_t i = 0; i < property_cases && out.pass; ++i) {
    auto rounds = enotab::testing::random_rounds(g, 6, 8);
    double alpha = static_cast<double>(g.range(0, 10)) / 10.0;
    auto got = consistency_assess(rounds, alpha, same);
    auto want = enotab::testing::brute_force_consistency(rounds, alpha, same);
    if (got.report.entries.size() != want.scores.size()) {
      out.fail("case " + std::to_string(i) + ": entry count differs");
      break;
    }
    for (std::size_t k = 0; k < want.scores.size(); ++k) {
      const auto& e = got.report.entries[k];
      if (e.instance.round != want.scores[k].round || e.instance.position != want.scores[k].position ||
          std::fabs(e.score - want.scores[k].score) > score_tolerance || e.retained != want.scores[k].retained)
        out.fail("case " + std::to_string(i) + ": entry " + std::to_string(k) + " differs");
    }
    if (got.candidates != want.candidates)
      out.fail("case " + std::to_string(i) + ": candidates differ");
  }
  return out;
}

Outcome executor_oracle() {
  Outcome out;
  Gen g{3001};
  for (std::size_t i = 0; i < property_cases && out.pass; ++i) {
    auto t = enotab::testing::random_int_table(g, 20);
    auto f = enotab::testing::random_formula(g, 0, 4, [&] { return enotab::testing::satisfiable_leaf(g, t); });
    auto tree = enotab::testing::to_tree(*f);
    auto run = execute(tree, t, false);
    if (run.result.row_indices() != enotab::testing::formula_rows(*f, t))
      out.fail("case " + std::to_string(i) + ": rows differ for " + to_json_text(tree));
    if (run.trace.entries.size() != tree.size())
      out.fail("case " + std::to_string(i) + ": trace incomplete");
  }
  return out;
}

Outcome rollback_guarantee() {
  Outcome out;
  Gen g{4001};
  std::size_t rollbacks = 0;
  for (std::size_t i = 0; i < property_cases && out.pass; ++i) {
    auto t = enotab::testing::random_int_table(g, 20);
    auto f = enotab::testing::random_formula(g, 0, 4, [&] { return enotab::testing::satisfiable_leaf(g, t); });
    auto run = execute(enotab::testing::to_tree(*f), t, true);
    rollbacks += run.trace.rollback_count();
    if (run.result.empty())
      out.fail("case " + std::to_string(i) + ": empty root");
    for (const auto& e : run.trace.entries)
      if (!std::includes(e.post_rows.begin(), e.post_rows.end(), e.pre_rows.begin(), e.pre_rows.end()))
        out.fail("case " + std::to_string(i) + ": node " + std::to_string(e.node_id) + " shrank");
  }
  if (out.pass && rollbacks == 0)
    out.fail("no case exercised a rollback");
  return out;
}

Outcome verifier_fallback() {
  Outcome out;
  auto t = enotab::testing::demo_table();
  Evidence district{"District", "Tel Aviv", Action::string_match};
  Evidence population{"Population", "> 200000", Action::numeric_compare};
  auto tree = EvidenceTree::join(MergeOp::And, EvidenceTree::leaf(district), EvidenceTree::leaf(population));
  struct Case {
    const char* script;
    std::vector<std::size_t> rows;
    const char* outcome;
  };
  std::vector<Case> cases{
    {R"({"role": "verifier", "response": "True"})", {0}, "root"},
    {"{\"role\": \"verifier\", \"response\": \"False\"}\n{\"role\": \"verifier\", \"response\": \"True\"}", {0, 2},
     "previous_node"},
    {R"({"role": "verifier", "response": "False"})", {0, 1, 2}, "full_table"},
  };
  for (const auto& c : cases) {
    auto run = execute(tree, t, true);
    auto provider = enotab::testing::scripted(c.script);
    auto final_rows = verify_and_finalize(run.result, run.trace, "How many?", provider);
    if (final_rows.row_indices() != c.rows || run.trace.outcome != c.outcome)
      out.fail(std::string{"expected "} + c.outcome + ", got " + run.trace.outcome);
    if (provider.calls(Role::verifier) > max_verifier_calls)
      out.fail("more than two verifier calls");
  }
  return out;
}

Outcome retrieval_recall() {
  Outcome out;
  auto planted = enotab::testing::planted_table(6001);
  auto provider = enotab::testing::scripted("");
  HashingEmbedder embedder;
  RetrievalConfig cfg; // k = 10, lambda = 0.7, C = min(256, ceil(0.1 N))
  auto r = select_representative_rows(planted.table, "Which entries mention zephyrine?", cfg, provider, embedder);
  std::size_t hits = 0;
  for (auto x : r.rows.row_indices())
    hits += std::binary_search(planted.planted.begin(), planted.planted.end(), x);
  out.detail = std::to_string(hits) + "/10 planted rows";
  if (hits < recall_required)
    out.fail(std::to_string(hits) + "/10 planted rows");
  return out;
}

Outcome end_to_end() {
  Outcome out;
  auto once = [] {
    auto cfg = load_config(enotab::testing::source_path("demo/config.json"));
    auto fixture = Fixture::load(cfg.fixture_path);
    fixture.strict = cfg.fixture_strict;
    ScriptedProvider provider{std::move(fixture)};
    HashingEmbedder embedder{cfg.embed_dimension};
    PipelineContext ctx{cfg, provider, embedder, PromptSet{}};
    QuestionRecord rec{"demo", "How many cities are in the Tel Aviv district as of 2020?",
                       std::make_shared<const Table>(load_table_file(enotab::testing::source_path("demo/cities.csv"))),
                       {"2"}};
    return answer_question(rec, ctx);
  };
  auto a = once();
  auto b = once();
  if (a.final_rows != std::vector<std::size_t>{0, 1})
    out.fail("T_final is not rows {0,1}");
  if (a.answer != "2")
    out.fail("answer is '" + a.answer + "'");
  if (a.trace.dump(2) != b.trace.dump(2) || a.answer != b.answer)
    out.fail("traces differ between runs");
  return out;
}

} // namespace

int main() {
  criterion(1, "compression arithmetic reproduces the four reference rates", 1.0, compression_arithmetic);
  criterion(2, "consistency assessment equals brute-force pairwise oracle (1000 cases)", 5.0, consistency_oracle);
  criterion(3, "tree executor equals per-row formula oracle, rollback off (1000 cases)", 10.0, executor_oracle);
  criterion(4, "rollback keeps roots non-empty and nodes monotone (1000 cases)", 10.0, rollback_guarantee);
  criterion(5, "verifier sequences give root, previous node, full table", 1.0, verifier_fallback);
  criterion(6, "retrieval recalls planted rows in a 1000-row table", 5.0, retrieval_recall);
  criterion(7, "demo pipeline is deterministic with rows {0,1} and answer 2", 5.0, end_to_end);
  std::printf("%d of 7 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
