#pragma once

#include "enotab/error.hpp"
#include "enotab/prompts.hpp"
#include "enotab/provider.hpp"
#include "enotab/question_denoiser.hpp"
#include "enotab/table.hpp"
#include "enotab/toolkit.hpp"

#include <json.hpp>

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace enotab {

// -- tree -------------------------------------------------------------------

struct TreeNode {
  enum class Kind { leaf, internal };
  Kind kind = Kind::leaf;
  MergeOp op = MergeOp::And; // internal only
  Evidence evidence;         // leaf only
  std::size_t left = 0;
  std::size_t right = 0;

  bool is_leaf() const noexcept {
    return kind == Kind::leaf;
  }
  bool operator==(const TreeNode&) const = default;
};

/// Binary tree of evidence leaves and And/Or internal nodes, stored as an
/// arena. Node ids are pre-order positions; the root is node 0.
class EvidenceTree {
public:
  static EvidenceTree leaf(Evidence e) {
    EvidenceTree t;
    t.nodes_.push_back(TreeNode{TreeNode::Kind::leaf, MergeOp::And, std::move(e), 0, 0});
    return t;
  }

  static EvidenceTree join(MergeOp op, const EvidenceTree& left, const EvidenceTree& right) {
    EvidenceTree t;
    t.nodes_.push_back(TreeNode{TreeNode::Kind::internal, op, {}, 1, 1 + left.size()});
    t.append(left, 1);
    t.append(right, 1 + left.size());
    return t;
  }

  std::size_t size() const noexcept {
    return nodes_.size();
  }
  std::size_t root() const noexcept {
    return 0;
  }
  const TreeNode& node(std::size_t id) const {
    return nodes_.at(id);
  }
  TreeNode& node(std::size_t id) {
    return nodes_.at(id);
  }
  const std::vector<TreeNode>& nodes() const noexcept {
    return nodes_;
  }

  std::vector<Evidence> leaves() const {
    std::vector<Evidence> out;
    for (auto id : preorder())
      if (nodes_[id].is_leaf())
        out.push_back(nodes_[id].evidence);
    return out;
  }

  std::size_t depth() const {
    return depth_of(0);
  }

  bool operator==(const EvidenceTree&) const = default;

private:
  std::vector<std::size_t> preorder() const {
    std::vector<std::size_t> ids(nodes_.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
      ids[i] = i;
    return ids;
  }

  std::size_t depth_of(std::size_t id) const {
    const auto& n = nodes_[id];
    if (n.is_leaf())
      return 1;
    return 1 + std::max(depth_of(n.left), depth_of(n.right));
  }

  void append(const EvidenceTree& sub, std::size_t offset) {
    for (auto n : sub.nodes_) {
      if (!n.is_leaf()) {
        n.left += offset;
        n.right += offset;
      }
      nodes_.push_back(std::move(n));
    }
  }

  std::vector<TreeNode> nodes_;
};

/// Left subtree, right subtree, node.
inline std::vector<std::size_t> postorder(const EvidenceTree& tree) {
  std::vector<std::size_t> out;
  out.reserve(tree.size());
  // Iterative to stay safe on deep model-produced trees.
  std::vector<std::pair<std::size_t, bool>> stack{{tree.root(), false}};
  while (!stack.empty()) {
    auto [id, expanded] = stack.back();
    stack.pop_back();
    const auto& n = tree.node(id);
    if (n.is_leaf() || expanded) {
      out.push_back(id);
      continue;
    }
    stack.emplace_back(id, true);
    stack.emplace_back(n.right, false);
    stack.emplace_back(n.left, false);
  }
  return out;
}

// -- serialization ----------------------------------------------------------

/// `{"op":"and","left":<tree>,"right":<tree>}` or `{"leaf":<evidence>}`.
inline std::string to_json_text(const EvidenceTree& tree, std::size_t id = 0) {
  const auto& n = tree.node(id);
  if (n.is_leaf())
    return "{\"leaf\":" + to_json_text(n.evidence) + "}";
  return "{\"op\":\"" + std::string{to_string(n.op)} + "\",\"left\":" + to_json_text(tree, n.left) +
         ",\"right\":" + to_json_text(tree, n.right) + "}";
}

namespace detail {

inline EvidenceTree tree_from_json(const nlohmann::ordered_json& j, std::size_t depth) {
  if (depth > 64)
    throw error{errc::tree_parse_failure, "tree deeper than 64 levels"};
  if (!j.is_object())
    throw error{errc::tree_parse_failure, "node is not an object"};
  if (auto leaf = j.find("leaf"); leaf != j.end()) {
    auto e = evidence_from_json(*leaf);
    if (!e)
      throw error{errc::tree_parse_failure, "leaf is not an evidence: " + leaf->dump()};
    return EvidenceTree::leaf(std::move(*e));
  }
  auto op = j.find("op");
  auto left = j.find("left");
  auto right = j.find("right");
  if (op == j.end() || left == j.end() || right == j.end() || !op->is_string())
    throw error{errc::tree_parse_failure, "internal node needs op, left and right"};
  auto name = text::casefold(op->get<std::string>());
  MergeOp merge_op;
  if (name == "and")
    merge_op = MergeOp::And;
  else if (name == "or")
    merge_op = MergeOp::Or;
  else
    throw error{errc::tree_parse_failure, "unknown op '" + name + "'"};
  return EvidenceTree::join(merge_op, tree_from_json(*left, depth + 1), tree_from_json(*right, depth + 1));
}

} // namespace detail

template <class Json>
EvidenceTree tree_from_json(const Json& j) {
  return detail::tree_from_json(nlohmann::ordered_json(j), 0);
}

inline EvidenceTree parse_tree(std::string_view reply) {
  auto j = extract_json_block(reply);
  if (!j)
    throw error{errc::tree_parse_failure, "no JSON block in reply"};
  return detail::tree_from_json(*j, 0);
}

// -- construction -----------------------------------------------------------

/// Maps every leaf onto a distinct E_r member (same area/action key and an
/// equivalent condition) and substitutes the member itself. Throws
/// TreeEvidenceMismatch otherwise.
template <class Discriminate>
EvidenceTree validate_tree(EvidenceTree tree, const ReliableEvidenceSet& reliable, Discriminate& same) {
  std::vector<bool> used(reliable.size(), false);
  for (std::size_t id = 0; id < tree.size(); ++id) {
    auto& n = tree.node(id);
    if (!n.is_leaf())
      continue;
    auto key = key_of(n.evidence);
    std::optional<std::size_t> match;
    for (std::size_t i = 0; i < reliable.size() && !match; ++i)
      if (!used[i] && reliable.evidences[i] == n.evidence)
        match = i;
    for (std::size_t i = 0; i < reliable.size() && !match; ++i)
      if (!used[i] && key_of(reliable.evidences[i]) == key && same(reliable.evidences[i].condition, n.evidence.condition))
        match = i;
    if (!match)
      throw error{errc::tree_evidence_mismatch, "leaf " + to_json_text(n.evidence) + " is not a distinct member of E_r"};
    used[*match] = true;
    n.evidence = reliable.evidences[*match];
  }
  return tree;
}

/// Left-deep And chain over E_r in order: ((e1 And e2) And e3) ...
inline EvidenceTree fallback_tree(const ReliableEvidenceSet& reliable) {
  if (reliable.empty())
    throw std::invalid_argument("fallback tree needs a non-empty evidence set");
  auto tree = EvidenceTree::leaf(reliable.evidences.front());
  for (std::size_t i = 1; i < reliable.size(); ++i)
    tree = EvidenceTree::join(MergeOp::And, tree, EvidenceTree::leaf(reliable.evidences[i]));
  return tree;
}

struct TreeConstruction {
  EvidenceTree tree;
  std::size_t attempts = 0;
  bool used_fallback = false;
  std::vector<std::string> errors;
};

inline std::string evidence_list(const ReliableEvidenceSet& reliable) {
  std::string out;
  for (const auto& e : reliable.evidences) {
    if (!out.empty())
      out += '\n';
    out += to_json_text(e);
  }
  return out;
}

/// Asks the tree model for a tree over E_r; on a parse failure or evidence
/// mismatch asks once more, then falls back to the And chain.
template <class Discriminate>
TreeConstruction construct_tree(std::string_view question, const Table& table, const SubTable& representative_rows,
                                const ReliableEvidenceSet& reliable, LlmProvider& provider, Discriminate& same,
                                const PromptSet& prompts = {}) {
  if (reliable.empty())
    throw std::invalid_argument("construct_tree needs a non-empty evidence set");
  auto prompt = fill(prompts.tree, {{"header", header_line(table)},
                                    {"rows", rows_block(representative_rows)},
                                    {"evidence", evidence_list(reliable)},
                                    {"question", question}});
  TreeConstruction out;
  for (int attempt = 0; attempt < 2; ++attempt) {
    ++out.attempts;
    try {
      out.tree = validate_tree(parse_tree(provider.complete(Role::tree, prompt)), reliable, same);
      return out;
    } catch (const error& e) {
      out.errors.emplace_back(e.what());
    }
  }
  out.tree = fallback_tree(reliable);
  out.used_fallback = true;
  return out;
}

// -- execution --------------------------------------------------------------

struct RollbackEvent {
  std::size_t target = 0;      // node flipped from And to Or
  std::size_t result_size = 0; // current node's size after the flip
};

struct TraceEntry {
  std::size_t node_id = 0;
  TreeNode::Kind kind = TreeNode::Kind::leaf;
  MergeOp op = MergeOp::And;   // as generated
  std::optional<Evidence> evidence;
  std::vector<std::size_t> pre_rows;
  std::vector<RollbackEvent> rollbacks; // triggered at this node
  bool flipped = false;                 // this node now executes as Or
  std::vector<std::size_t> post_rows;
};

struct VerifierAttempt {
  std::string subject; // "root", "node <id>"
  std::vector<std::size_t> rows;
  bool verdict = true;
};

struct ExecutionTrace {
  std::vector<TraceEntry> entries; // post-order
  std::vector<VerifierAttempt> verifier;
  std::string outcome; // see verify_and_finalize
  std::vector<std::string> warnings;

  std::size_t rollback_count() const {
    std::size_t n = 0;
    for (const auto& e : entries)
      n += e.rollbacks.size();
    return n;
  }
};

struct Execution {
  SubTable result;
  ExecutionTrace trace;
  EvidenceTree executed; // with And2Or flips applied
};

/// Post-order executor. Leaves filter the full table through the toolkit;
/// internal nodes merge their children. With rollback enabled an empty And
/// node is repaired by And2Or.
class TreeExecutor {
public:
  TreeExecutor(const Table& table, EvidenceTree tree, bool rollback_enabled)
    : table_{table}, tree_{std::move(tree)}, rollback_{rollback_enabled},
      results_(tree_.size()), entry_of_(tree_.size(), 0) {
  }

  Execution run() {
    for (auto id : postorder(tree_)) {
      const auto& n = tree_.node(id);
      TraceEntry entry;
      entry.node_id = id;
      entry.kind = n.kind;
      entry.op = n.op;
      if (n.is_leaf()) {
        entry.evidence = n.evidence;
        results_[id] = run_leaf(n.evidence);
      } else {
        results_[id] = merge(results_[n.left], results_[n.right], n.op);
      }
      entry.pre_rows = results_[id].row_indices();
      entry_of_[id] = trace_.entries.size();
      trace_.entries.push_back(std::move(entry));
      if (rollback_ && !n.is_leaf() && n.op == MergeOp::And && results_[id].empty())
        and2or_rollback(id);
      trace_.entries[entry_of_[id]].post_rows = results_[id].row_indices();
    }
    return Execution{results_[tree_.root()], std::move(trace_), std::move(tree_)};
  }

  /// Flips, one per attempt, the left child (if an And node), the right
  /// child (if an And node) and finally the node itself to Or, re-merging
  /// after each flip and stopping at the first non-empty result. Flips
  /// persist. Flipping the node itself always succeeds when its children
  /// are non-empty.
  void and2or_rollback(std::size_t id) {
    auto& n = tree_.node(id);
    if (n.is_leaf() || n.op != MergeOp::And || !results_[id].empty())
      throw std::logic_error("And2Or applies only to an And node with an empty result");
    std::vector<std::size_t> targets;
    for (auto child : {n.left, n.right})
      if (!tree_.node(child).is_leaf() && tree_.node(child).op == MergeOp::And)
        targets.push_back(child);
    targets.push_back(id);
    for (auto target : targets) {
      auto& t = tree_.node(target);
      t.op = MergeOp::Or;
      auto& target_entry = trace_.entries[entry_of_[target]];
      target_entry.flipped = true;
      if (target != id) {
        results_[target] = merge(results_[t.left], results_[t.right], MergeOp::Or);
        target_entry.post_rows = results_[target].row_indices();
      }
      results_[id] = merge(results_[n.left], results_[n.right], n.op);
      trace_.entries[entry_of_[id]].rollbacks.push_back(RollbackEvent{target, results_[id].size()});
      if (!results_[id].empty())
        break;
    }
  }

private:
  SubTable run_leaf(const Evidence& e) const {
    SubTable rows;
    try {
      rows = apply_evidence(table_, e);
    } catch (const error& err) {
      throw error{errc::leaf_not_usable, to_json_text(e) + ": " + err.what()};
    }
    if (rows.empty())
      throw error{errc::leaf_not_usable, to_json_text(e) + " selects no rows"};
    return rows;
  }

  const Table& table_;
  EvidenceTree tree_;
  bool rollback_;
  std::vector<SubTable> results_;
  std::vector<std::size_t> entry_of_;
  ExecutionTrace trace_;
};

inline Execution execute(const EvidenceTree& tree, const Table& table, bool rollback_enabled) {
  return TreeExecutor{table, tree, rollback_enabled}.run();
}

// -- verification -----------------------------------------------------------

/// Verifies the pruned result. Rejected once, the nearest earlier post-order
/// subtable with a different, non-empty row set is verified instead;
/// rejected twice (or with no such subtable), the full table is returned.
/// At most two verifier calls. `trace.outcome` is one of `root`,
/// `previous_node`, `full_table`, `unverified`.
inline SubTable verify_and_finalize(const SubTable& result, ExecutionTrace& trace, std::string_view question,
                                    LlmProvider& provider, std::string_view prompt_template = prompt_text::verifier) {
  if (result.empty())
    throw std::invalid_argument("verify_and_finalize needs a non-empty result");
  const Table& table = result.source();
  try {
    bool ok = verify_table(provider, serialize(result), question, prompt_template);
    trace.verifier.push_back(VerifierAttempt{"root", result.row_indices(), ok});
    if (ok) {
      trace.outcome = "root";
      return result;
    }
  } catch (const error& e) {
    trace.warnings.emplace_back(std::string{"verifier unavailable, accepting result: "} + e.what());
    trace.outcome = "unverified";
    return result;
  }

  std::optional<std::size_t> previous;
  for (std::size_t i = trace.entries.size(); i-- > 0;) {
    const auto& rows = trace.entries[i].post_rows;
    if (!rows.empty() && rows != result.row_indices()) {
      previous = i;
      break;
    }
  }
  if (!previous) {
    trace.outcome = "full_table";
    return SubTable::full(table);
  }
  SubTable candidate{table, trace.entries[*previous].post_rows};
  auto subject = "node " + std::to_string(trace.entries[*previous].node_id);
  try {
    bool ok = verify_table(provider, serialize(candidate), question, prompt_template);
    trace.verifier.push_back(VerifierAttempt{subject, candidate.row_indices(), ok});
    if (ok) {
      trace.outcome = "previous_node";
      return candidate;
    }
  } catch (const error& e) {
    trace.warnings.emplace_back(std::string{"verifier unavailable, accepting previous node: "} + e.what());
    trace.outcome = "unverified";
    return candidate;
  }
  trace.outcome = "full_table";
  return SubTable::full(table);
}

// -- trace documents --------------------------------------------------------

inline nlohmann::ordered_json to_json(const ExecutionTrace& trace) {
  nlohmann::ordered_json j;
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : trace.entries) {
    nlohmann::ordered_json entry;
    entry["node"] = e.node_id;
    entry["kind"] = e.kind == TreeNode::Kind::leaf ? "leaf" : "internal";
    if (e.kind == TreeNode::Kind::internal)
      entry["op"] = std::string{to_string(e.op)};
    if (e.evidence)
      entry["evidence"] = to_json(*e.evidence);
    entry["pre_rollback_size"] = e.pre_rows.size();
    entry["flipped_to_or"] = e.flipped;
    entry["rollbacks"] = nlohmann::ordered_json::array();
    for (const auto& r : e.rollbacks)
      entry["rollbacks"].push_back({{"flipped", r.target}, {"result_size", r.result_size}});
    entry["rows"] = e.post_rows;
    j["entries"].push_back(std::move(entry));
  }
  j["verifier"] = nlohmann::ordered_json::array();
  for (const auto& v : trace.verifier)
    j["verifier"].push_back({{"subject", v.subject}, {"rows", v.rows}, {"verdict", v.verdict}});
  j["outcome"] = trace.outcome;
  if (!trace.warnings.empty())
    j["warnings"] = trace.warnings;
  return j;
}

} // namespace enotab
