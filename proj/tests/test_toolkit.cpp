#include "support.hpp"

#include <gtest/gtest.h>

using namespace enotab;
using enotab::testing::demo_table;
using enotab::testing::Gen;

TEST(Evidence, JsonTextIsExact) {
  Evidence e{"District", "Tel Aviv", Action::string_match};
  EXPECT_EQ(to_json_text(e), R"({"area": "District", "condition": "Tel Aviv", "action": "string_match"})");
  EXPECT_EQ(evidence_from_json(nlohmann::json::parse(to_json_text(e))), e);
}

TEST(Evidence, FromJsonRejectsBadShapes) {
  using nlohmann::json;
  EXPECT_FALSE(evidence_from_json(json::parse(R"({"area": "A", "condition": "x"})")));
  EXPECT_FALSE(evidence_from_json(json::parse(R"({"area": "A", "condition": "x", "action": "guess"})")));
  EXPECT_FALSE(evidence_from_json(json::parse(R"({"area": "", "condition": "x", "action": "string_match"})")));
  auto numeric = evidence_from_json(json::parse(R"({"area": "A", "condition": 5, "action": "numeric_compare"})"));
  ASSERT_TRUE(numeric);
  EXPECT_EQ(numeric->condition, "5");
}

TEST(Apply, DemoRows) {
  auto t = demo_table();
  EXPECT_EQ(apply_evidence(t, {"District", "Tel Aviv", Action::string_match}).row_indices(),
            (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(apply_evidence(t, {"Population", "> 200000", Action::numeric_compare}).row_indices(),
            (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(apply_evidence(t, {"city", "Haifa", Action::string_match}).row_indices(), (std::vector<std::size_t>{2}));
}

TEST(Apply, ErrorsSurface) {
  auto t = demo_table();
  try {
    apply_evidence(t, {"Continent", "Europe", Action::string_match});
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::unknown_column);
  }
  try {
    apply_evidence(t, {"Population", "lots", Action::numeric_compare});
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::unparsable_condition);
  }
}

TEST(Usability, Examples) {
  auto t = demo_table();
  EXPECT_TRUE(check_usability(t, {"District", "Tel Aviv", Action::string_match}));
  EXPECT_FALSE(check_usability(t, {"Continent", "Europe", Action::string_match}));
  EXPECT_FALSE(check_usability(t, {"District", "in cycle 4", Action::string_match}));
}

TEST(Merge, SetSemantics) {
  auto t = demo_table();
  auto a = subtable(t, {0, 1});
  auto b = subtable(t, {0, 2});
  EXPECT_EQ(merge(a, b, MergeOp::And).row_indices(), (std::vector<std::size_t>{0}));
  EXPECT_EQ(merge(a, b, MergeOp::Or).row_indices(), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_TRUE(merge(subtable(t, {}), subtable(t, {1}), MergeOp::And).empty());
}

TEST(Merge, DifferentSourcesRejected) {
  auto t1 = demo_table();
  auto t2 = demo_table();
  EXPECT_THROW(merge(subtable(t1, {0}), subtable(t2, {0}), MergeOp::Or), error);
}

TEST(ToolkitProperty, ApplyMatchesScanAndMergeIsSetAlgebra) {
  Gen g{31};
  const std::vector<std::string> words{"red", "blue", "green", ""};
  for (int iter = 0; iter < 300; ++iter) {
    std::vector<std::string> headers{"Color", "Size"};
    std::vector<std::vector<std::string>> rows(g.below(10));
    for (auto& r : rows)
      r = {g.pick(words), std::to_string(g.range(0, 9))};
    auto t = Table::make("t", headers, rows);
    Evidence e1{"Color", g.pick(std::vector<std::string>{"red", "blue", "purple"}), Action::string_match};
    Evidence e2{"Size", "> " + std::to_string(g.range(0, 9)), Action::numeric_compare};
    auto s1 = apply_evidence(t, e1);
    auto s2 = apply_evidence(t, e2);
    std::set<std::size_t> o1, o2;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r][0].find(e1.condition) != std::string::npos)
        o1.insert(r);
      if (std::stoi(rows[r][1]) > std::stoi(e2.condition.substr(2)))
        o2.insert(r);
    }
    EXPECT_EQ(std::set<std::size_t>(s1.row_indices().begin(), s1.row_indices().end()), o1);
    EXPECT_EQ(apply_evidence(t, e1), s1);
    EXPECT_EQ(check_usability(t, e1), !o1.empty());
    std::vector<std::size_t> inter, uni;
    std::set_intersection(o1.begin(), o1.end(), o2.begin(), o2.end(), std::back_inserter(inter));
    std::set_union(o1.begin(), o1.end(), o2.begin(), o2.end(), std::back_inserter(uni));
    auto a = merge(s1, s2, MergeOp::And);
    auto o = merge(s1, s2, MergeOp::Or);
    EXPECT_EQ(a.row_indices(), inter);
    EXPECT_EQ(o.row_indices(), uni);
    EXPECT_TRUE(std::includes(o.row_indices().begin(), o.row_indices().end(), a.row_indices().begin(),
                              a.row_indices().end()));
  }
}
