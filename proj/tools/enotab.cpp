#include "enotab/enotab.hpp"
#include "enotab/remote.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>

namespace {

constexpr int exit_input = 2;
constexpr int exit_provider = 3;

struct Common {
  std::string config_path;
  std::string fixture_path;
  bool strict = false;
  std::string record_path;
  std::string trace_dir;
  std::optional<std::size_t> parallelism;
};

/// Provider, embedder and prompts assembled from the configuration.
struct Runtime {
  enotab::Config config;
  std::unique_ptr<enotab::LlmProvider> base;
  std::unique_ptr<std::ofstream> record_sink;
  std::unique_ptr<enotab::LlmProvider> recorder;
  std::unique_ptr<enotab::Embedder> embedder;
  enotab::PromptSet prompts;

  enotab::LlmProvider& provider() {
    return recorder ? *recorder : *base;
  }
};

Runtime make_runtime(const Common& opts) {
  Runtime rt;
  if (!opts.config_path.empty())
    rt.config = enotab::load_config(opts.config_path);
  if (!opts.fixture_path.empty()) {
    rt.config.provider_kind = enotab::ProviderKind::scripted;
    rt.config.fixture_path = opts.fixture_path;
  }
  if (opts.strict)
    rt.config.fixture_strict = true;
  if (opts.parallelism)
    rt.config.parallelism = std::max<std::size_t>(1, *opts.parallelism);

  if (rt.config.provider_kind == enotab::ProviderKind::scripted) {
    enotab::Fixture fixture;
    if (!rt.config.fixture_path.empty())
      fixture = enotab::Fixture::load(rt.config.fixture_path);
    fixture.strict = rt.config.fixture_strict;
    rt.base = std::make_unique<enotab::ScriptedProvider>(std::move(fixture));
  } else {
    rt.base = std::make_unique<enotab::RemoteProvider>(rt.config.provider);
  }
  if (!opts.record_path.empty()) {
    rt.record_sink = std::make_unique<std::ofstream>(opts.record_path, std::ios::binary | std::ios::app);
    if (!*rt.record_sink)
      throw enotab::error{enotab::errc::invalid_config, "cannot write " + opts.record_path};
    rt.recorder = std::make_unique<enotab::RecordingProvider>(*rt.base, *rt.record_sink);
  }
  if (rt.config.embedder == enotab::EmbedderKind::remote)
    rt.embedder = std::make_unique<enotab::RemoteEmbedder>(rt.config.provider);
  else
    rt.embedder = std::make_unique<enotab::HashingEmbedder>(rt.config.embed_dimension);
  if (!rt.config.prompts_dir.empty())
    rt.prompts.load_overrides(rt.config.prompts_dir);
  return rt;
}

void write_trace(const std::string& dir, const std::string& id, const nlohmann::ordered_json& trace) {
  if (dir.empty())
    return;
  std::filesystem::create_directories(dir);
  std::ofstream{std::filesystem::path{dir} / (id + ".json"), std::ios::binary} << trace.dump(2) << '\n';
}

enotab::QuestionRecord single_record(const std::string& table_path, const std::string& question) {
  enotab::QuestionRecord rec;
  rec.id = std::filesystem::path{table_path}.stem().string();
  rec.question = question;
  rec.table = std::make_shared<const enotab::Table>(enotab::load_table_file(table_path));
  return rec;
}

void print_summary(const enotab::RunReport& report) {
  auto s = enotab::summarize_compression(report);
  std::printf("questions          %zu\n", s.questions);
  std::printf("accuracy           %.4f\n", report.accuracy);
  std::printf("entire tokens      %.1f\n", s.mean_entire_tokens);
  std::printf("pruned tokens      %.1f\n", s.mean_pruned_tokens);
  std::printf("compression        %.1f%% (of means)\n", s.rate_of_means);
  std::printf("mean compression   %.1f%%\n", s.mean_rate);
  if (!report.buckets.empty()) {
    std::map<std::string, std::size_t> counts;
    for (const auto& [id, b] : report.buckets)
      ++counts[std::string{enotab::to_string(b.second)}];
    for (auto d : {enotab::Difficulty::easy, enotab::Difficulty::medium, enotab::Difficulty::hard,
                   enotab::Difficulty::extra_hard}) {
      std::string name{enotab::to_string(d)};
      std::printf("%-18s %zu\n", name.c_str(), counts[name]);
    }
  }
}

int exit_code_for(const enotab::error& e) {
  switch (e.code()) {
    case enotab::errc::provider_exhausted:
    case enotab::errc::transport:
    case enotab::errc::fixture_miss:
    case enotab::errc::embedder_failure:
    case enotab::errc::verifier_unavailable:
      return exit_provider;
    default:
      return exit_input;
  }
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Table question answering with question and table denoising"};
  app.require_subcommand(1);
  app.fallthrough();
  Common opts;
  app.add_option("--config", opts.config_path, "Configuration file")->check(CLI::ExistingFile);
  app.add_option("--fixture", opts.fixture_path, "Replay model responses from a fixture file")
    ->check(CLI::ExistingFile);
  app.add_flag("--strict", opts.strict, "Fail on requests the fixture does not cover");
  app.add_option("--record", opts.record_path, "Append every model exchange to a fixture file");

  std::string table_path, question, dataset_path, report_path, mode_name = "qa";
  std::size_t repeat = 1;

  auto* ask = app.add_subcommand("ask", "Answer one question about a table");
  ask->add_option("--table", table_path, "CSV or JSONL table")->required();
  ask->add_option("--question", question, "Question text")->required();
  ask->add_option("--trace-dir", opts.trace_dir, "Write the pipeline trace here");

  auto* prune = app.add_subcommand("prune", "Print the denoised table and trace without answering");
  prune->add_option("--table", table_path, "CSV or JSONL table")->required();
  prune->add_option("--question", question, "Question text")->required();
  prune->add_option("--trace-dir", opts.trace_dir, "Write the pipeline trace here");

  auto* eval = app.add_subcommand("eval", "Evaluate a dataset");
  eval->add_option("--dataset", dataset_path, "Line-delimited question records")->required();
  eval->add_option("--repeat", repeat, "Answer each question this many times")->check(CLI::PositiveNumber);
  eval->add_option("--mode", mode_name, "qa or fact")->check(CLI::IsMember({"qa", "fact"}));
  eval->add_option("--report", report_path, "Write the run report here");
  eval->add_option("--trace-dir", opts.trace_dir, "Write one trace per question here");
  eval->add_option("--parallelism", opts.parallelism, "Questions evaluated concurrently");

  auto* stats = app.add_subcommand("stats", "Summarize a run report");
  stats->add_option("--report", report_path, "Run report")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    auto code = app.exit(e);
    return code == 0 ? 0 : exit_input;
  }

  try {
    if (stats->parsed()) {
      std::ifstream in{report_path};
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw enotab::error{enotab::errc::malformed_input, report_path + ": " + e.what()};
      }
      print_summary(enotab::report_from_json(j));
      return 0;
    }

    auto rt = make_runtime(opts);
    enotab::PipelineContext ctx{rt.config, rt.provider(), *rt.embedder, rt.prompts};

    if (ask->parsed() || prune->parsed()) {
      auto record = single_record(table_path, question);
      auto outcome = enotab::answer_question(record, ctx, enotab::EvalMode::qa, prune->parsed());
      write_trace(opts.trace_dir, record.id, outcome.trace);
      if (prune->parsed()) {
        std::cout << enotab::serialize(enotab::SubTable{*record.table, outcome.final_rows}) << '\n';
        if (opts.trace_dir.empty())
          std::cout << '\n' << outcome.trace.dump(2) << '\n';
        return 0;
      }
      std::cout << outcome.answer << '\n';
      if (outcome.answer.empty() && outcome.row.provider_exhausted)
        return exit_provider;
      return 0;
    }

    if (eval->parsed()) {
      if (!opts.trace_dir.empty())
        std::filesystem::create_directories(opts.trace_dir);
      auto mode = mode_name == "fact" ? enotab::EvalMode::fact : enotab::EvalMode::qa;
      auto report = enotab::run_dataset(dataset_path, ctx, repeat, mode, opts.trace_dir);
      if (!report_path.empty())
        std::ofstream{report_path, std::ios::binary} << enotab::to_json(report).dump(2) << '\n';
      print_summary(report);
      return 0;
    }
  } catch (const enotab::error& e) {
    std::cerr << "enotab: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "enotab: " << e.what() << '\n';
    return exit_input;
  }
  return 0;
}
