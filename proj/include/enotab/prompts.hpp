#pragma once

#include "enotab/text.hpp"

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>

namespace enotab {

// Built-in prompt templates. The same text ships under assets/prompts/ so
// a deployment can edit them and point `prompts.dir` at the copy.
namespace prompt_text {

inline constexpr std::string_view keywords = R"(Extract the keywords from the question that are likely to appear verbatim in table cells (names, places, numbers, dates). Return a JSON array of lowercase strings inside a ```json fenced block.

Question: {question}
)";

inline constexpr std::string_view evidence = R"(You decompose a table question into evidences. An evidence is a minimal semantic unit of the question aligned with one table column, written as {"area": <column name>, "condition": <cell values satisfying the unit>, "action": "string_match" | "numeric_compare" | "date_eval"}.
Use only column names from the header. Write numeric conditions as "<op> <number>" with op in ==, !=, <, <=, >, >=, or "between X and Y". Write date conditions as "on|before|after <date or year>" or "between X and Y".
Return a JSON array of evidences inside a ```json fenced block.

Header: {header}
Representative rows:
{rows}

Question: {question}
)";

inline constexpr std::string_view tree = R"(Combine the evidences below into a binary evidence tree that mirrors the logic of the question. Every leaf must be one of the listed evidences, copied exactly, and each evidence may be used at most once. Internal nodes combine two children with "and" or "or".
Leaf: {"leaf": <evidence>}
Internal: {"op": "and" | "or", "left": <tree>, "right": <tree>}
Return the tree inside a ```json fenced block.

Header: {header}
Representative rows:
{rows}

Evidences:
{evidence}

Question: {question}
)";

inline constexpr std::string_view discriminator = R"(Do the two conditions below select the same cell values? Answer True or False only.

Condition 1: {condition_a}
Condition 2: {condition_b}
)";

inline constexpr std::string_view verifier = R"(Does the table below contain all the information required to answer the question? Answer True or False only.

Table:
{table}

Question: {question}
)";

inline constexpr std::string_view answer = R"(Answer the question using the table. {highlight}
Reply with the final answer only, on one line starting with "Answer:". Separate multiple answers with "|".

Table:
{table}

Question: {question}
)";

} // namespace prompt_text

/// One template per model role.
struct PromptSet {
  std::string keywords{prompt_text::keywords};
  std::string evidence{prompt_text::evidence};
  std::string tree{prompt_text::tree};
  std::string discriminator{prompt_text::discriminator};
  std::string verifier{prompt_text::verifier};
  std::string answer{prompt_text::answer};

  /// Replaces templates with `<dir>/<role>.txt` where such a file exists.
  void load_overrides(const std::filesystem::path& dir) {
    auto load = [&](std::string& slot, const char* file) {
      std::ifstream in{dir / file, std::ios::binary};
      if (!in)
        return;
      std::ostringstream ss;
      ss << in.rdbuf();
      slot = ss.str();
    };
    load(keywords, "keywords.txt");
    load(evidence, "evidence.txt");
    load(tree, "tree.txt");
    load(discriminator, "discriminator.txt");
    load(verifier, "verifier.txt");
    load(answer, "answer.txt");
  }
};

/// Substitutes `{name}` placeholders in one left-to-right pass, so values
/// containing braces are never re-expanded.
inline std::string fill(std::string_view tmpl,
                        std::initializer_list<std::pair<std::string_view, std::string_view>> vars) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    if (tmpl[i] == '{') {
      for (const auto& [name, value] : vars) {
        if (tmpl.substr(i + 1, name.size()) == name && i + 1 + name.size() < tmpl.size() &&
            tmpl[i + 1 + name.size()] == '}') {
          out += value;
          i += name.size() + 2;
          replaced = true;
          break;
        }
      }
    }
    if (!replaced)
      out += tmpl[i++];
  }
  return out;
}

} // namespace enotab
