#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace enotab;
using enotab::testing::demo_table;
using enotab::testing::Gen;
using enotab::testing::scripted;

namespace {

const Evidence e1{"District", "Tel Aviv", Action::string_match};
const Evidence e2{"Population", "> 200000", Action::numeric_compare};
const Evidence e3{"City", "Haifa", Action::string_match};
const Evidence holon{"City", "Holon", Action::string_match};

EvidenceTree leaf(const Evidence& e) {
  return EvidenceTree::leaf(e);
}
EvidenceTree both(const EvidenceTree& l, const EvidenceTree& r) {
  return EvidenceTree::join(MergeOp::And, l, r);
}
EvidenceTree either(const EvidenceTree& l, const EvidenceTree& r) {
  return EvidenceTree::join(MergeOp::Or, l, r);
}

using Rows = std::vector<std::size_t>;

} // namespace

TEST(Tree, PostOrder) {
  EXPECT_EQ(postorder(either(both(leaf(e1), leaf(e2)), leaf(e3))), (Rows{2, 3, 1, 4, 0}));
  EXPECT_EQ(postorder(leaf(e1)), (Rows{0}));
  EXPECT_EQ(postorder(both(leaf(e1), either(leaf(e2), leaf(e3)))), (Rows{1, 3, 4, 2, 0}));
}

TEST(Tree, SerializationIsExactAndRoundTrips) {
  auto t = either(both(leaf(e1), leaf(e2)), leaf(e3));
  auto text = to_json_text(t);
  EXPECT_EQ(to_json_text(leaf(e3)), R"({"leaf":{"area": "City", "condition": "Haifa", "action": "string_match"}})");
  EXPECT_EQ(text.rfind(R"({"op":"or","left":{"op":"and","left":{"leaf":)", 0), 0u);
  EXPECT_EQ(to_json_text(parse_tree(text)), text);
}

TEST(Tree, ParseFailures) {
  EXPECT_THROW(parse_tree("no tree"), error);
  EXPECT_THROW(parse_tree(R"({"op": "xor", "left": {}, "right": {}})"), error);
  EXPECT_THROW(parse_tree(R"({"op": "and", "left": {"leaf": {"area": "A"}}})"), error);
}

TEST(Construct, SingleLeaf) {
  auto t = demo_table();
  auto p = scripted(Fixture::to_line(Role::tree, "*", to_json_text(leaf(e1))));
  Discriminator same;
  auto out = construct_tree("q", t, SubTable::full(t), ReliableEvidenceSet{{e1}}, p, same);
  EXPECT_FALSE(out.used_fallback);
  EXPECT_EQ(out.tree.size(), 1u);
  EXPECT_EQ(out.tree.node(0).evidence, e1);
}

TEST(Construct, ParaphrasedLeafMapsToMember) {
  auto t = demo_table();
  Evidence paraphrase{"district", "in Tel Aviv", Action::string_match};
  auto p = scripted(Fixture::to_line(Role::tree, "*", to_json_text(leaf(paraphrase))));
  Discriminator same;
  auto out = construct_tree("q", t, SubTable::full(t), ReliableEvidenceSet{{e1}}, p, same);
  EXPECT_EQ(out.tree.node(0).evidence, e1);
}

TEST(Construct, MismatchFallsBackToAndChain) {
  auto t = demo_table();
  auto p = scripted(Fixture::to_line(Role::tree, "*", to_json_text(leaf(holon))));
  Discriminator same;
  auto out = construct_tree("q", t, SubTable::full(t), ReliableEvidenceSet{{e1, e2, e3}}, p, same);
  EXPECT_TRUE(out.used_fallback);
  EXPECT_EQ(out.attempts, 2u);
  EXPECT_EQ(to_json_text(out.tree), to_json_text(both(both(leaf(e1), leaf(e2)), leaf(e3))));
}

TEST(Construct, ScriptedThreeLeafTree) {
  auto t = demo_table();
  auto want = either(both(leaf(e1), leaf(e2)), leaf(e3));
  auto p = scripted(Fixture::to_line(Role::tree, "*", "```json\n" + to_json_text(want) + "\n```"));
  Discriminator same;
  auto out = construct_tree("q", t, SubTable::full(t), ReliableEvidenceSet{{e1, e2, e3}}, p, same);
  EXPECT_EQ(to_json_text(out.tree), to_json_text(want));
}

TEST(Construct, LeafReuseIsMismatch) {
  Discriminator same;
  EXPECT_THROW(validate_tree(both(leaf(e1), leaf(e1)), ReliableEvidenceSet{{e1}}, same), error);
}

TEST(Execute, DemoExamples) {
  auto t = demo_table();
  EXPECT_EQ(execute(both(leaf(e1), leaf(e2)), t, true).result.row_indices(), (Rows{0}));
  EXPECT_EQ(execute(either(leaf(e1), leaf(e3)), t, true).result.row_indices(), (Rows{0, 1, 2}));
  auto off = execute(both(leaf(holon), leaf(e3)), t, false);
  EXPECT_TRUE(off.result.empty());
  EXPECT_EQ(off.trace.rollback_count(), 0u);
}

TEST(Execute, EmptyLeafIsContractViolation) {
  auto t = demo_table();
  try {
    execute(leaf({"City", "Paris", Action::string_match}), t, true);
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::leaf_not_usable);
  }
}

TEST(Rollback, LeafChildrenFlipTheNode) {
  auto t = demo_table();
  auto run = execute(both(leaf(holon), leaf(e3)), t, true);
  EXPECT_EQ(run.result.row_indices(), (Rows{1, 2}));
  const auto& root = run.trace.entries.back();
  ASSERT_EQ(root.rollbacks.size(), 1u);
  EXPECT_EQ(root.rollbacks[0].target, 0u);
  EXPECT_TRUE(root.flipped);
  EXPECT_TRUE(root.pre_rows.empty());
  EXPECT_EQ(run.executed.node(0).op, MergeOp::Or);
}

TEST(Rollback, FlippingLeftChildCanSuffice) {
  // a = {0,1}, b = {1,2}, c = {2,3}: (a And b) And c is empty; flipping the
  // left child gives {0,1,2} and the root stays And with {2}.
  std::vector<std::string> headers{"P", "Q", "R"};
  auto t = Table::make("four", headers, {{"x", "m", "w"}, {"x", "k", "w"}, {"y", "k", "z"}, {"y", "m", "z"}});
  Evidence a{"P", "x", Action::string_match}, b{"Q", "k", Action::string_match}, c{"R", "z", Action::string_match};
  auto run = execute(both(both(leaf(a), leaf(b)), leaf(c)), t, true);
  EXPECT_EQ(run.result.row_indices(), (Rows{2}));
  EXPECT_EQ(run.executed.node(0).op, MergeOp::And);
  EXPECT_EQ(run.executed.node(1).op, MergeOp::Or);
  const auto& root = run.trace.entries.back();
  ASSERT_EQ(root.rollbacks.size(), 1u);
  EXPECT_EQ(root.rollbacks[0].target, 1u);
  EXPECT_EQ(run.trace.entries[2].post_rows, (Rows{0, 1, 2}));
}

TEST(Rollback, OrNodeIsPreconditionViolation) {
  auto t = demo_table();
  TreeExecutor ex{t, either(leaf(e1), leaf(e3)), true};
  ex.run();
  TreeExecutor ex2{t, either(leaf(e1), leaf(e3)), true};
  EXPECT_THROW(ex2.and2or_rollback(0), std::logic_error);
}

namespace {

struct VerifierCase {
  std::string responses;
  Rows expected;
  std::string outcome;
};

Execution demo_run(const Table& t) {
  // e1 And e2: post-order {0,1}, {0,2}, root {0}
  return execute(both(leaf(e1), leaf(e2)), t, true);
}

} // namespace

TEST(Verify, Sequences) {
  auto t = demo_table();
  std::vector<VerifierCase> cases{
    {R"({"role": "verifier", "response": "True"})", {0}, "root"},
    {"{\"role\": \"verifier\", \"response\": \"False\"}\n{\"role\": \"verifier\", \"response\": \"True\"}", {0, 2},
     "previous_node"},
    {R"({"role": "verifier", "response": "False"})", {0, 1, 2}, "full_table"},
  };
  for (const auto& c : cases) {
    auto run = demo_run(t);
    auto p = scripted(c.responses);
    auto final_rows = verify_and_finalize(run.result, run.trace, "q", p);
    EXPECT_EQ(final_rows.row_indices(), c.expected) << c.outcome;
    EXPECT_EQ(run.trace.outcome, c.outcome);
    EXPECT_LE(p.calls(Role::verifier), 2u);
  }
}

TEST(Verify, NoDifferentEarlierSubtableGoesToFullTable) {
  auto t = demo_table();
  auto run = execute(leaf(e3), t, true);
  auto p = scripted(R"({"role": "verifier", "response": "False"})");
  auto final_rows = verify_and_finalize(run.result, run.trace, "q", p);
  EXPECT_EQ(final_rows.size(), 3u);
  EXPECT_EQ(p.calls(Role::verifier), 1u);
}

TEST(Verify, UnavailableVerifierAcceptsResult) {
  auto t = demo_table();
  auto run = demo_run(t);
  auto p = scripted("", true);
  auto final_rows = verify_and_finalize(run.result, run.trace, "q", p);
  EXPECT_EQ(final_rows.row_indices(), (Rows{0}));
  EXPECT_EQ(run.trace.outcome, "unverified");
}

TEST(TreeProperty, ExecutorMatchesRowOracle) {
  Gen g{81};
  for (int iter = 0; iter < 300; ++iter) {
    auto t = enotab::testing::random_int_table(g);
    auto f = enotab::testing::random_formula(g, 0, 4, [&] { return enotab::testing::satisfiable_leaf(g, t); });
    auto tree = enotab::testing::to_tree(*f);
    auto run = execute(tree, t, false);
    EXPECT_EQ(run.result.row_indices(), enotab::testing::formula_rows(*f, t));
    ASSERT_EQ(run.trace.entries.size(), tree.size());
    auto order = postorder(tree);
    for (std::size_t i = 0; i < order.size(); ++i)
      EXPECT_EQ(run.trace.entries[i].node_id, order[i]);
  }
}

TEST(TreeProperty, RollbackGuaranteeAndSuperset) {
  Gen g{82};
  for (int iter = 0; iter < 300; ++iter) {
    auto t = enotab::testing::random_int_table(g);
    auto f = enotab::testing::random_formula(g, 0, 4, [&] { return enotab::testing::satisfiable_leaf(g, t); });
    auto run = execute(enotab::testing::to_tree(*f), t, true);
    EXPECT_FALSE(run.result.empty());
    for (const auto& e : run.trace.entries) {
      EXPECT_FALSE(e.post_rows.empty());
      EXPECT_TRUE(std::includes(e.post_rows.begin(), e.post_rows.end(), e.pre_rows.begin(), e.pre_rows.end()));
    }
  }
}

TEST(Trace, JsonDocument) {
  auto t = demo_table();
  auto run = execute(both(leaf(holon), leaf(e3)), t, true);
  auto j = to_json(run.trace);
  ASSERT_EQ(j["entries"].size(), 3u);
  EXPECT_EQ(j["entries"][2]["rollbacks"][0]["flipped"], 0);
  EXPECT_EQ(j["entries"][2]["flipped_to_or"], true);
}
