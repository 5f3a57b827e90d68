#include <spdlog/spdlog.h>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "migrank/commands.hpp"
#include "migrank/error.hpp"

namespace {

void print_error(std::string_view code, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = code;
  j["message"] = message;
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"migrank: information-gain evidence scoring and reranking"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::optional<std::string> log_level;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "TOML configuration file");
  app.add_option("--seed", seed, "Seed for every stochastic step");
  app.add_option("--jobs", jobs, "Worker threads for per-triplet work");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");
  app.add_option("--set", overrides, "Override a config key, e.g. --set train.alpha=0.5");

  std::string triplets, out, logprobs, scored, dataset, model, corpus, query, history, csv;
  std::size_t k = 0;
  std::vector<double> alphas{0.0, 0.74, 1.0};
  std::vector<double> taus{0.2};

  auto* teach = app.add_subcommand("teach", "Fetch with/without-document logprob records");
  teach->add_option("--triplets", triplets, "Triplet JSONL")->required();
  teach->add_option("--out", out, "Logprob record JSONL")->required();

  auto* score = app.add_subcommand("score", "Compute information gain per triplet");
  score->add_option("--triplets", triplets, "Triplet JSONL")->required();
  score->add_option("--logprobs", logprobs, "Recorded logprob JSONL (skips the teacher)");
  score->add_option("--out", out, "Scored triplet JSONL")->required();

  auto* build = app.add_subcommand("build-dataset", "Label, discard neutral, balance");
  build->add_option("--scored", scored, "Scored triplet JSONL")->required();
  build->add_option("--out", out, "Labeled dataset JSONL")->required();

  auto* train = app.add_subcommand("train", "Train the reranker");
  train->add_option("--dataset", dataset, "Labeled dataset JSONL")->required();
  train->add_option("--model", model, "Model JSON output")->required();
  train->add_option("--history", history, "Loss history CSV (default <model>.history.csv)");

  auto* rerank = app.add_subcommand("rerank", "Retrieve, rerank and assemble context for one query");
  rerank->add_option("--model", model, "Model JSON")->required();
  rerank->add_option("--corpus", corpus, "Corpus JSONL")->required();
  rerank->add_option("--query", query, "Query text")->required();
  rerank->add_option("-k,--top-k", k, "Documents to keep (default pipeline.top_k)");

  auto* eval = app.add_subcommand("eval", "Ranking metrics of a model against information gain");
  eval->add_option("--model", model, "Model JSON")->required();
  eval->add_option("--scored", scored, "Scored triplet JSONL")->required();
  eval->add_option("--csv", csv, "Per-query CSV output");

  auto* sweep = app.add_subcommand("sweep", "Grid over alpha and labeling threshold");
  sweep->add_option("--scored", scored, "Scored triplet JSONL")->required();
  sweep->add_option("--alphas", alphas, "Loss weights")->delimiter(',');
  sweep->add_option("--taus", taus, "Labeling thresholds (b1 = tau, b2 = -tau)")->delimiter(',');
  sweep->add_option("--out", out, "Grid CSV output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    auto all_overrides = overrides;
    if (seed) all_overrides.push_back("seed=" + std::to_string(*seed));
    if (jobs) all_overrides.push_back("jobs=" + std::to_string(*jobs));
    if (log_level) all_overrides.push_back("log_level=\"" + *log_level + "\"");
    const auto cfg = migrank::cli::load_config(config_path ? std::optional<std::filesystem::path>(*config_path)
                                                           : std::nullopt,
                                               all_overrides);
    const auto level = spdlog::level::from_str(cfg.log_level);
    if (level == spdlog::level::off && cfg.log_level != "off") {
      throw migrank::Error(migrank::ErrorCode::kConfig, "config key 'log_level' has unknown level '" + cfg.log_level + "'");
    }
    spdlog::set_level(level);
    spdlog::set_default_logger(spdlog::default_logger());

    auto opt_path = [](const std::string& s) {
      return s.empty() ? std::nullopt : std::optional<std::filesystem::path>(s);
    };

    if (*teach) {
      migrank::cli::cmd_teach(cfg, triplets, out, std::cerr);
    } else if (*score) {
      migrank::cli::cmd_score(cfg, triplets, opt_path(logprobs), out, std::cerr);
    } else if (*build) {
      migrank::cli::cmd_build_dataset(cfg, scored, out, std::cout);
    } else if (*train) {
      migrank::cli::cmd_train(cfg, dataset, model, opt_path(history), std::cerr);
    } else if (*rerank) {
      const std::size_t top_k = rerank->count("--top-k") ? k : cfg.pipeline.top_k;
      migrank::cli::cmd_rerank(cfg, model, corpus, query, top_k, std::cout);
    } else if (*eval) {
      migrank::cli::cmd_eval(cfg, model, scored, opt_path(csv), std::cout);
    } else if (*sweep) {
      migrank::cli::cmd_sweep(cfg, scored, alphas, taus, opt_path(out), std::cout);
    }
  } catch (const migrank::Error& e) {
    print_error(migrank::to_string(e.code()), e.what());
    return e.code() == migrank::ErrorCode::kUsage ? 2 : 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
