// Command-line pipeline: align -> pair -> train -> encode -> index ->
// search -> eval. Exit codes: 0 ok, 1 usage, 2 data, 3 numeric.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "propenc/cli.hpp"
#include "propenc/config.hpp"
#include "propenc/errors.hpp"

namespace {

using propenc::RunConfig;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path,
                  "config file with 'key = value' lines");
  cmd->add_option("--set", opts.overrides,
                  "override one config key (key=value), repeatable");
}

RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig cfg;
  if (!opts.config_path.empty())
    cfg = propenc::load_config_file(opts.config_path);
  for (const auto& kv : opts.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw propenc::UsageError("--set expects key=value, got: " + kv);
    propenc::set_config_field(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  propenc::apply_env_overrides(cfg);
  return cfg;
}

void print_error(const char* type, const std::string& message) {
  propenc::Json j{{"error", {{"type", type}, {"message", message}}}};
  std::cerr << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "propenc: proposition-level contextual embeddings and retrieval"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string in, out, data, checkpoint, log_path, index_path, queries_path;
  std::string truth_path, results_path, csts_path, corpus_name = "corpus";
  std::string level_name = "prop", query_text, query_prop;
  std::size_t topk = 10;

  auto* align = app.add_subcommand("align", "add token masks to propositions");
  align->add_option("--in", in, "input JSONL")->required();
  align->add_option("--out", out, "output JSONL")->required();
  add_common(align, opts);

  auto* pair = app.add_subcommand("pair", "label positive proposition pairs");
  pair->add_option("--in", in, "aligned JSONL")->required();
  pair->add_option("--out", out, "output JSONL")->required();
  pair->add_option("--oracle", [&opts](const std::vector<std::string>& v) {
        opts.overrides.push_back("oracle=" + v[0]);
        return true;
      },
      "entailment oracle: lexical or pipe:<command>");
  pair->add_flag("--require-positive,!--no-require-positive",
                 [&opts](std::int64_t count) {
                   opts.overrides.push_back(count > 0
                                                ? "require_positive=true"
                                                : "require_positive=false");
                 },
                 "drop sentence pairs without positive propositions");
  add_common(pair, opts);

  auto* train = app.add_subcommand("train", "train the sub-sentence encoder");
  train->add_option("--data", data, "paired JSONL")->required();
  train->add_option("--checkpoint", checkpoint, "checkpoint output path")
      ->required();
  train->add_option("--log", log_path, "training log JSONL output")
      ->required();
  add_common(train, opts);

  auto* encode = app.add_subcommand("encode", "embed corpus propositions");
  encode->add_option("--checkpoint", checkpoint, "trained checkpoint")
      ->required();
  encode->add_option("--in", in, "aligned corpus JSONL")->required();
  encode->add_option("--out", out, "embeddings JSONL output")->required();
  add_common(encode, opts);

  auto* index = app.add_subcommand("index", "build a proposition index");
  index->add_option("--in", in, "embeddings JSONL")->required();
  index->add_option("--out", out, "index file output")->required();
  index->add_option("--corpus-name", corpus_name, "corpus label in metadata");
  add_common(index, opts);

  auto* search = app.add_subcommand("search", "query the proposition index");
  search->add_option("--index", index_path, "index file")->required();
  search->add_option("--checkpoint", checkpoint, "trained checkpoint")
      ->required();
  search->add_option("--queries", queries_path, "queries JSONL");
  search->add_option("--text", query_text, "single query: sentence text");
  search->add_option("--prop", query_prop, "single query: proposition text");
  search->add_option("-k,--topk", topk, "results per query");
  search->add_option("--level", level_name, "prop, sentence or doc");
  search->add_option("--out", out, "results JSONL output ('-' for stdout)");
  add_common(search, opts);

  auto* eval = app.add_subcommand("eval", "compute retrieval or C-STS metrics");
  eval->add_option("--results", results_path, "search results JSONL");
  eval->add_option("--truth", truth_path, "ground truth JSONL");
  eval->add_option("--csts", csts_path, "conditional similarity instances");
  eval->add_option("--checkpoint", checkpoint, "checkpoint (C-STS mode)");
  eval->add_option("--out", out, "metrics JSON output ('-' for stdout)");
  add_common(eval, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return 0;  // --help / --version
    print_error("usage", e.get_name());
    return 1;
  }

  try {
    const RunConfig cfg = resolve_config(opts);
    if (align->parsed()) {
      const auto stats = propenc::cli::cmd_align(in, out, cfg);
      std::cerr << "align: " << stats.records << " records, "
                << stats.propositions << " propositions, " << stats.dropped
                << " dropped\n";
    } else if (pair->parsed()) {
      const auto stats = propenc::cli::cmd_pair(in, out, cfg);
      std::cerr << "pair: kept " << stats.records_out << "/"
                << stats.records_in << " records, " << stats.positive_links
                << " positive links\n";
    } else if (train->parsed()) {
      const auto result = propenc::cli::cmd_train(data, checkpoint, log_path, cfg);
      std::cerr << "train: best epoch " << result.best_epoch << ", val loss "
                << result.best_val_loss
                << (result.diverged ? " (diverged; kept last good checkpoint)"
                                    : "")
                << '\n';
      if (result.diverged) return 3;
    } else if (encode->parsed()) {
      const auto n = propenc::cli::cmd_encode(checkpoint, in, out, cfg);
      std::cerr << "encode: " << n << " proposition embeddings\n";
    } else if (index->parsed()) {
      const auto n = propenc::cli::cmd_index(in, out, corpus_name, cfg);
      std::cerr << "index: " << n << " entries\n";
    } else if (search->parsed()) {
      std::vector<propenc::cli::Query> queries;
      if (!queries_path.empty()) {
        queries = propenc::cli::load_queries(queries_path);
      } else {
        if (query_text.empty() || query_prop.empty())
          throw propenc::UsageError(
              "search needs --queries or both --text and --prop");
        queries.push_back({"q0", query_text, query_prop, std::nullopt});
      }
      if (out.empty()) out = "-";
      propenc::cli::cmd_search(index_path, checkpoint, queries, topk,
                               propenc::level_from_string(level_name), out,
                               cfg);
    } else if (eval->parsed()) {
      if (out.empty()) out = "-";
      propenc::MetricsReport report;
      if (!csts_path.empty()) {
        if (checkpoint.empty())
          throw propenc::UsageError("--csts needs --checkpoint");
        report = propenc::cli::cmd_eval_csts(csts_path, checkpoint);
      } else {
        if (results_path.empty() || truth_path.empty())
          throw propenc::UsageError(
              "eval needs --results and --truth, or --csts");
        report = propenc::cli::cmd_eval_retrieval(results_path, truth_path);
      }
      propenc::cli::write_metrics(report, out, cfg);
    }
  } catch (const propenc::UsageError& e) {
    print_error("usage", e.what());
    return 1;
  } catch (const propenc::NumericError& e) {
    print_error("numeric", e.what());
    return 3;
  } catch (const propenc::DataError& e) {
    print_error("data", e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error("data", e.what());
    return 2;
  }
  return 0;
}
