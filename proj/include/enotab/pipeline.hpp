#pragma once

#include "enotab/config.hpp"
#include "enotab/error.hpp"
#include "enotab/evidence_tree.hpp"
#include "enotab/prompts.hpp"
#include "enotab/provider.hpp"
#include "enotab/question_denoiser.hpp"
#include "enotab/retrieval.hpp"
#include "enotab/table.hpp"
#include "enotab/toolkit.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace enotab {

// -- records ----------------------------------------------------------------

struct QuestionRecord {
  std::string id;
  std::string question;
  std::shared_ptr<const Table> table;
  std::vector<std::string> answers;
};

inline Table load_table_file(const std::filesystem::path& path) {
  std::ifstream in{path, std::ios::binary};
  if (!in)
    throw error{errc::malformed_input, "cannot open table " + path.string()};
  std::string data{std::istreambuf_iterator<char>{in}, std::istreambuf_iterator<char>{}};
  auto ext = text::casefold(path.extension().string());
  auto format = (ext == ".jsonl" || ext == ".ndjson") ? TableFormat::records : TableFormat::csv;
  return parse_table(data, format, path.stem().string());
}

// -- highlighting -----------------------------------------------------------

/// The question with the units to rely on and the units to ignore.
struct HighlightedQuestion {
  std::string question;
  std::vector<std::string> relevant;
  std::vector<std::string> irrelevant;

  /// Text spliced into the answer prompt; empty when both lists are.
  std::string render() const {
    std::string out;
    if (!relevant.empty()) {
      out += "Relevant conditions:";
      for (const auto& r : relevant)
        out += "\n- " + r;
    }
    if (!irrelevant.empty()) {
      if (!out.empty())
        out += '\n';
      out += "Ignore these phrases, the table has no data for them:";
      for (const auto& r : irrelevant)
        out += "\n- " + r;
    }
    return out;
  }
};

inline std::string unit_phrase(const Evidence& e) {
  return text::normalize(e.area + " " + e.condition);
}

inline HighlightedQuestion highlight_question(std::string_view question, const ReliableEvidenceSet& reliable,
                                              const std::vector<Evidence>& discarded) {
  HighlightedQuestion out;
  out.question = std::string{question};
  for (const auto& e : reliable.evidences) {
    auto s = describe(e);
    if (std::find(out.relevant.begin(), out.relevant.end(), s) == out.relevant.end())
      out.relevant.push_back(std::move(s));
  }
  for (const auto& e : discarded) {
    auto s = unit_phrase(e);
    bool clash = std::find(reliable.evidences.begin(), reliable.evidences.end(), e) != reliable.evidences.end();
    if (!clash && std::find(out.irrelevant.begin(), out.irrelevant.end(), s) == out.irrelevant.end() &&
        std::find(out.relevant.begin(), out.relevant.end(), s) == out.relevant.end())
      out.irrelevant.push_back(std::move(s));
  }
  return out;
}

inline std::string answer_prompt(const HighlightedQuestion& hq, const SubTable& final_table,
                                 std::string_view prompt_template = prompt_text::answer) {
  auto table_text = serialize(final_table);
  auto highlight = hq.render();
  return fill(prompt_template, {{"highlight", highlight}, {"table", table_text}, {"question", hq.question}});
}

/// Text after the last `Answer:` marker, else the last non-empty line.
inline std::string extract_answer(std::string_view reply) {
  auto folded = text::casefold(reply);
  auto pos = folded.rfind("answer:");
  std::string_view tail = reply;
  if (pos != std::string::npos) {
    tail = reply.substr(pos + 7);
    auto nl = tail.find('\n');
    return std::string{text::trim(tail.substr(0, nl))};
  }
  std::string_view last;
  std::size_t start = 0;
  while (start <= reply.size()) {
    auto nl = reply.find('\n', start);
    auto line = text::trim(reply.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
    if (!line.empty())
      last = line;
    if (nl == std::string_view::npos)
      break;
    start = nl + 1;
  }
  return std::string{last};
}

// -- scoring ----------------------------------------------------------------

namespace detail {

inline std::string normalize_answer(std::string_view s) {
  auto t = std::string{text::strip_enclosing_quotes(s)};
  t = text::normalize(t);
  while (!t.empty() && t.back() == '.')
    t.pop_back();
  return std::string{text::strip_enclosing_quotes(text::trim(t))};
}

inline bool answers_equal(const std::string& a, const std::string& b) {
  if (a == b)
    return true;
  auto x = parse_number(a);
  auto y = parse_number(b);
  return x && y && std::fabs(*x - *y) <= 1e-6;
}

inline std::vector<std::string> answer_parts(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto bar = s.find('|', start);
    out.push_back(normalize_answer(s.substr(start, bar == std::string_view::npos ? std::string_view::npos : bar - start)));
    if (bar == std::string_view::npos)
      break;
    start = bar + 1;
  }
  return out;
}

} // namespace detail

/// Normalized comparison: trimmed, case-folded, enclosing quotes and
/// trailing periods removed, numbers equal within 1e-6, `|`-separated
/// answers compared as multisets.
inline bool exact_match(std::string_view predicted, const std::vector<std::string>& golds) {
  auto pred = detail::answer_parts(predicted);
  for (const auto& gold : golds) {
    auto parts = detail::answer_parts(gold);
    if (parts.size() != pred.size())
      continue;
    std::vector<bool> used(parts.size(), false);
    bool all = true;
    for (const auto& p : pred) {
      bool found = false;
      for (std::size_t i = 0; i < parts.size() && !found; ++i)
        if (!used[i] && detail::answers_equal(p, parts[i]))
          used[i] = found = true;
      if (!found) {
        all = false;
        break;
      }
    }
    if (all)
      return true;
  }
  return false;
}

enum class EvalMode { qa, fact };

/// entailed / refuted, with the usual synonyms.
inline std::optional<bool> fact_label(std::string_view s) {
  auto t = detail::normalize_answer(s);
  if (t == "entailed" || t == "true" || t == "yes" || t == "1" || t == "supported")
    return true;
  if (t == "refuted" || t == "false" || t == "no" || t == "0")
    return false;
  return std::nullopt;
}

inline bool fact_match(std::string_view predicted, const std::vector<std::string>& golds) {
  auto p = fact_label(predicted);
  if (!p)
    return false;
  return std::any_of(golds.begin(), golds.end(), [&](const std::string& g) { return fact_label(g) == p; });
}

// -- answering --------------------------------------------------------------

struct ReportRow {
  std::string id;
  std::size_t repetition = 0;
  std::string predicted;
  bool correct = false;
  std::size_t entire_tokens = 0;
  std::size_t pruned_tokens = 0;
  double compression = 0;
  std::size_t rollbacks = 0;
  std::string verifier_outcome; // root, previous_node, full_table, unverified, skipped, none
  std::size_t reliable_evidence = 0;
  bool provider_exhausted = false;
};

struct QuestionOutcome {
  std::string answer;
  std::vector<std::size_t> final_rows;
  bool full_table = false;
  nlohmann::ordered_json trace;
  ReportRow row;
};

/// Everything the pipeline needs besides the question.
struct PipelineContext {
  const Config& config;
  LlmProvider& provider;
  Embedder& embedder;
  PromptSet prompts;
};

namespace detail {

inline nlohmann::ordered_json evidence_array(const std::vector<Evidence>& es) {
  auto out = nlohmann::ordered_json::array();
  for (const auto& e : es)
    out.push_back(to_json(e));
  return out;
}

} // namespace detail

/// Retrieval, question denoising, table denoising and answer generation for
/// one record. With an empty E_r the tree stage is skipped and the full
/// table is used. No stage failure is fatal; a failed answer call yields an
/// empty answer.
inline QuestionOutcome answer_question(const QuestionRecord& record, PipelineContext& ctx,
                                       EvalMode mode = EvalMode::qa, bool prune_only = false) {
  const auto& cfg = ctx.config;
  const Table& table = *record.table;
  QuestionOutcome out;
  auto& trace = out.trace;
  trace["id"] = record.id;
  trace["question"] = record.question;
  trace["stages"] = nlohmann::ordered_json::array();
  std::vector<std::string> warnings;

  // Retrieval
  auto retrieval = select_representative_rows(table, record.question, cfg.retrieval, ctx.provider, ctx.embedder,
                                              ctx.prompts);
  trace["stages"].push_back("retrieval");
  trace["retrieval"] = {{"keywords", retrieval.keywords},
                        {"candidates", retrieval.candidates},
                        {"rows", retrieval.rows.row_indices()}};
  warnings.insert(warnings.end(), retrieval.warnings.begin(), retrieval.warnings.end());

  // Question denoising
  Discriminator same{cfg.eqd.discriminator, &ctx.provider, ctx.prompts.discriminator};
  auto eqd = denoise_question(record.question, table, retrieval.rows, cfg.eqd, ctx.provider, same, ctx.prompts);
  trace["stages"].push_back("eqd");
  {
    nlohmann::ordered_json j;
    j["rounds"] = nlohmann::ordered_json::array();
    for (const auto& r : eqd.rounds.rounds)
      j["rounds"].push_back(detail::evidence_array(r));
    j["dropped_rounds"] = eqd.rounds.dropped;
    j["exhausted"] = eqd.exhausted;
    j["consistency_skipped"] = eqd.consistency_skipped;
    j["consistency"] = nlohmann::ordered_json::array();
    for (const auto& e : eqd.report.entries)
      j["consistency"].push_back({{"round", e.instance.round},
                                  {"evidence", to_json(e.instance.evidence)},
                                  {"matches", e.matches},
                                  {"group_size", e.group_size},
                                  {"score", e.score},
                                  {"retained", e.retained}});
    j["candidates"] = detail::evidence_array(eqd.candidates);
    j["reliable"] = detail::evidence_array(eqd.reliable.evidences);
    j["discarded"] = detail::evidence_array(eqd.discarded);
    trace["eqd"] = std::move(j);
  }
  out.row.reliable_evidence = eqd.reliable.size();
  out.row.provider_exhausted = eqd.exhausted;

  // Table denoising
  SubTable final_table = SubTable::full(table);
  out.full_table = true;
  out.row.verifier_outcome = "none";
  if (!eqd.reliable.empty()) {
    trace["stages"].push_back("etd");
    auto built = construct_tree(record.question, table, retrieval.rows, eqd.reliable, ctx.provider, same, ctx.prompts);
    nlohmann::ordered_json etd;
    etd["tree"] = to_json_text(built.tree);
    etd["attempts"] = built.attempts;
    etd["fallback"] = built.used_fallback;
    try {
      auto run = execute(built.tree, table, cfg.etd.and2or);
      out.row.rollbacks = run.trace.rollback_count();
      if (run.result.empty()) {
        run.trace.outcome = "full_table";
        run.trace.warnings.emplace_back("tree selected no rows, using the full table");
      } else if (cfg.etd.verifier) {
        final_table = verify_and_finalize(run.result, run.trace, record.question, ctx.provider, ctx.prompts.verifier);
      } else {
        final_table = run.result;
        run.trace.outcome = "skipped";
      }
      out.row.verifier_outcome = run.trace.outcome;
      out.full_table = run.trace.outcome == "full_table";
      etd["executed_tree"] = to_json_text(run.executed);
      etd["execution"] = to_json(run.trace);
    } catch (const error& e) {
      if (e.code() != errc::leaf_not_usable)
        throw;
      etd["error"] = e.what();
      out.row.verifier_outcome = "full_table";
    }
    trace["etd"] = std::move(etd);
  }
  out.final_rows = final_table.row_indices();
  trace["final_rows"] = out.final_rows;
  trace["full_table"] = out.full_table;

  out.row.id = record.id;
  out.row.entire_tokens = count_tokens(table);
  out.row.pruned_tokens = count_tokens(final_table);
  out.row.compression = compression_rate(static_cast<std::int64_t>(out.row.entire_tokens),
                                         static_cast<std::int64_t>(out.row.pruned_tokens));

  if (!prune_only) {
    auto hq = highlight_question(record.question, eqd.reliable, eqd.discarded);
    trace["stages"].push_back("answer");
    nlohmann::ordered_json ans;
    ans["relevant"] = hq.relevant;
    ans["ignore"] = hq.irrelevant;
    try {
      auto reply = ctx.provider.complete(Role::answer, answer_prompt(hq, final_table, ctx.prompts.answer));
      out.answer = extract_answer(reply);
    } catch (const error& e) {
      out.answer.clear();
      out.row.provider_exhausted = true;
      ans["error"] = e.what();
    }
    ans["prediction"] = out.answer;
    trace["answer"] = std::move(ans);
    out.row.predicted = out.answer;
    if (!record.answers.empty())
      out.row.correct = !out.answer.empty() && (mode == EvalMode::fact ? fact_match(out.answer, record.answers)
                                                                       : exact_match(out.answer, record.answers));
  }
  if (!warnings.empty())
    trace["warnings"] = warnings;
  return out;
}

// -- datasets and reports ---------------------------------------------------

enum class Difficulty { easy, medium, hard, extra_hard };

constexpr std::string_view to_string(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "Easy";
    case Difficulty::medium: return "Medium";
    case Difficulty::hard: return "Hard";
    case Difficulty::extra_hard: return "Extra Hard";
  }
  return "";
}

/// Buckets by fraction of correct repetitions, lower edges inclusive:
/// >= 0.9 Easy, >= 0.6 Medium, >= 0.1 Hard, else Extra Hard.
inline Difficulty difficulty(std::size_t correct, std::size_t repeat) {
  if (10 * correct >= 9 * repeat)
    return Difficulty::easy;
  if (10 * correct >= 6 * repeat)
    return Difficulty::medium;
  if (10 * correct >= 1 * repeat)
    return Difficulty::hard;
  return Difficulty::extra_hard;
}

struct RunReport {
  std::vector<ReportRow> rows; // ordered by id, then repetition
  double accuracy = 0;
  double mean_compression = 0;
  std::map<std::string, std::size_t> calls;
  std::size_t repeat = 1;
  /// Only when repeat > 1: per id, correct count and bucket.
  std::vector<std::pair<std::string, std::pair<std::size_t, Difficulty>>> buckets;
};

inline void finalize_report(RunReport& report) {
  std::stable_sort(report.rows.begin(), report.rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return a.id != b.id ? a.id < b.id : a.repetition < b.repetition;
  });
  double correct = 0, compression = 0;
  for (const auto& r : report.rows) {
    correct += r.correct ? 1 : 0;
    compression += r.compression;
  }
  auto n = static_cast<double>(report.rows.size());
  report.accuracy = report.rows.empty() ? 0 : correct / n;
  report.mean_compression = report.rows.empty() ? 0 : compression / n;
  report.buckets.clear();
  if (report.repeat > 1) {
    std::map<std::string, std::size_t> per_id;
    for (const auto& r : report.rows)
      per_id[r.id] += r.correct ? 1 : 0;
    for (const auto& [id, c] : per_id)
      report.buckets.push_back({id, {c, difficulty(c, report.repeat)}});
  }
}

/// Reads line-delimited records `{id, question, table | table_path,
/// answers}`. Inline tables are `{"header": [...], "rows": [[...], ...]}`;
/// table paths resolve against the dataset's directory.
inline std::vector<QuestionRecord> load_dataset(const std::string& path) {
  std::ifstream in{path, std::ios::binary};
  if (!in)
    throw error{errc::dataset_unreadable, "cannot open " + path};
  auto base = std::filesystem::path{path}.parent_path();
  std::map<std::string, std::shared_ptr<const Table>> by_path;
  std::vector<QuestionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty())
      continue;
    auto where = path + ":" + std::to_string(line_no);
    try {
      auto j = nlohmann::json::parse(line);
      QuestionRecord rec;
      if (j.contains("id"))
        rec.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
      else
        rec.id = std::to_string(line_no);
      rec.question = j.at("question").get<std::string>();
      if (text::trim(rec.question).empty())
        throw error{errc::dataset_unreadable, where + ": empty question"};
      if (j.contains("answers")) {
        const auto& a = j["answers"];
        if (a.is_array())
          for (const auto& x : a)
            rec.answers.push_back(x.is_string() ? x.get<std::string>() : x.dump());
        else
          rec.answers.push_back(a.is_string() ? a.get<std::string>() : a.dump());
      }
      if (j.contains("table_path")) {
        auto p = std::filesystem::path{j["table_path"].get<std::string>()};
        if (p.is_relative())
          p = base / p;
        auto& slot = by_path[p.string()];
        if (!slot)
          slot = std::make_shared<const Table>(load_table_file(p));
        rec.table = slot;
      } else if (j.contains("table")) {
        const auto& t = j["table"];
        auto headers = t.at("header").get<std::vector<std::string>>();
        std::vector<std::vector<std::string>> rows;
        for (const auto& r : t.at("rows")) {
          std::vector<std::string> row;
          for (const auto& c : r)
            row.push_back(c.is_string() ? c.get<std::string>() : (c.is_null() ? "" : c.dump()));
          rows.push_back(std::move(row));
        }
        rec.table = std::make_shared<const Table>(Table::make(rec.id, headers, rows));
      } else {
        throw error{errc::dataset_unreadable, where + ": record has neither table nor table_path"};
      }
      out.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw error{errc::dataset_unreadable, where + ": " + e.what()};
    } catch (const error& e) {
      if (e.code() == errc::dataset_unreadable)
        throw;
      throw error{errc::dataset_unreadable, where + ": " + e.what()};
    }
  }
  return out;
}

/// Evaluates each record `repeat` times, up to `config.parallelism`
/// records at a time. Repetitions of one record run in order on one worker,
/// so a scripted provider whose selectors are per question replays the same
/// sequence as a sequential run.
inline RunReport run_records(const std::vector<QuestionRecord>& records, PipelineContext& ctx, std::size_t repeat,
                             EvalMode mode, const std::filesystem::path& trace_dir = {}) {
  if (repeat < 1)
    throw error{errc::invalid_config, "repeat must be positive"};
  std::vector<std::vector<ReportRow>> rows(records.size());
  auto run_record = [&](std::size_t i) {
    for (std::size_t r = 0; r < repeat; ++r) {
      auto outcome = answer_question(records[i], ctx, mode);
      outcome.row.repetition = r;
      if (!trace_dir.empty()) {
        auto name = records[i].id + (repeat > 1 ? "." + std::to_string(r) : "") + ".json";
        std::ofstream{trace_dir / name, std::ios::binary} << outcome.trace.dump(2) << '\n';
      }
      rows[i].push_back(std::move(outcome.row));
    }
  };

  auto workers = std::min<std::size_t>(std::max<std::size_t>(1, ctx.config.parallelism), records.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < records.size(); ++i)
      run_record(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::future<void>> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.push_back(std::async(std::launch::async, [&] {
        for (auto i = next++; i < records.size(); i = next++)
          run_record(i);
      }));
    for (auto& f : pool)
      f.get();
  }

  RunReport report;
  report.repeat = repeat;
  for (auto& per_record : rows)
    for (auto& row : per_record)
      report.rows.push_back(std::move(row));
  for (const auto& [role, n] : ctx.provider.call_counts())
    report.calls[std::string{to_string(role)}] = n;
  finalize_report(report);
  return report;
}

inline RunReport run_dataset(const std::string& dataset_path, PipelineContext& ctx, std::size_t repeat,
                             EvalMode mode = EvalMode::qa, const std::filesystem::path& trace_dir = {}) {
  return run_records(load_dataset(dataset_path), ctx, repeat, mode, trace_dir);
}

inline nlohmann::ordered_json to_json(const RunReport& report) {
  nlohmann::ordered_json j;
  j["accuracy"] = report.accuracy;
  j["mean_compression"] = report.mean_compression;
  j["repeat"] = report.repeat;
  j["calls"] = report.calls;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : report.rows)
    j["rows"].push_back({{"id", r.id},
                         {"repetition", r.repetition},
                         {"predicted", r.predicted},
                         {"correct", r.correct},
                         {"entire_tokens", r.entire_tokens},
                         {"pruned_tokens", r.pruned_tokens},
                         {"compression", r.compression},
                         {"rollbacks", r.rollbacks},
                         {"verifier", r.verifier_outcome},
                         {"reliable_evidence", r.reliable_evidence},
                         {"provider_exhausted", r.provider_exhausted}});
  if (report.repeat > 1) {
    j["buckets"] = nlohmann::ordered_json::array();
    for (const auto& [id, b] : report.buckets)
      j["buckets"].push_back({{"id", id}, {"correct", b.first}, {"difficulty", std::string{to_string(b.second)}}});
  }
  return j;
}

inline RunReport report_from_json(const nlohmann::json& j) {
  RunReport report;
  try {
    report.repeat = j.value("repeat", std::size_t{1});
    for (const auto& r : j.at("rows")) {
      ReportRow row;
      row.id = r.at("id").get<std::string>();
      row.repetition = r.value("repetition", std::size_t{0});
      row.predicted = r.value("predicted", std::string{});
      row.correct = r.value("correct", false);
      row.entire_tokens = r.at("entire_tokens").get<std::size_t>();
      row.pruned_tokens = r.at("pruned_tokens").get<std::size_t>();
      row.compression = r.at("compression").get<double>();
      row.rollbacks = r.value("rollbacks", std::size_t{0});
      row.verifier_outcome = r.value("verifier", std::string{});
      row.reliable_evidence = r.value("reliable_evidence", std::size_t{0});
      row.provider_exhausted = r.value("provider_exhausted", false);
      report.rows.push_back(std::move(row));
    }
    if (j.contains("calls"))
      report.calls = j["calls"].get<std::map<std::string, std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw error{errc::malformed_input, std::string{"report: "} + e.what()};
  }
  finalize_report(report);
  return report;
}

/// Token summary in the style of a before/after pruning table.
struct CompressionSummary {
  std::size_t questions = 0;
  double mean_entire_tokens = 0;
  double mean_pruned_tokens = 0;
  double rate_of_means = 0; // compression_rate of the rounded means
  double mean_rate = 0;     // mean of per-question rates
};

inline CompressionSummary summarize_compression(const RunReport& report) {
  CompressionSummary s;
  s.questions = report.rows.size();
  if (report.rows.empty())
    return s;
  double entire = 0, pruned = 0;
  for (const auto& r : report.rows) {
    entire += static_cast<double>(r.entire_tokens);
    pruned += static_cast<double>(r.pruned_tokens);
  }
  auto n = static_cast<double>(s.questions);
  s.mean_entire_tokens = entire / n;
  s.mean_pruned_tokens = pruned / n;
  s.rate_of_means = compression_rate(std::llround(s.mean_entire_tokens), std::llround(s.mean_pruned_tokens));
  s.mean_rate = report.mean_compression;
  return s;
}

} // namespace enotab
