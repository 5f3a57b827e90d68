#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "migrank/config.hpp"

namespace migrank::cli {

// Builds the configured teacher (mock, http or records).
std::unique_ptr<teacher::TeacherProvider> make_teacher(const AppConfig& cfg);

// Builds the configured confidence strategy. The semantic-anchor strategy
// takes its idf table from confidence.idf_path, or else from `documents`.
confidence::ConfidenceStrategy make_strategy(const AppConfig& cfg, const std::vector<std::string>& documents);

struct TeachSummary {
  std::size_t fetched = 0;
  std::size_t cached = 0;
  std::size_t records = 0;
};

// Writes with_doc / without_doc logprob records for every triplet. The
// query-only baseline is requested once per (query, answer); entries already
// in the cache are not requested again.
TeachSummary cmd_teach(const AppConfig& cfg, const std::filesystem::path& triplets_path,
                       const std::filesystem::path& out_path, std::ostream& log);

// Scores triplets into ScoredTriplet JSONL, from recorded logprobs when
// given, otherwise through the configured (cached) teacher.
void cmd_score(const AppConfig& cfg, const std::filesystem::path& triplets_path,
               const std::optional<std::filesystem::path>& logprobs_path, const std::filesystem::path& out_path,
               std::ostream& log);

mig::DatasetStats cmd_build_dataset(const AppConfig& cfg, const std::filesystem::path& scored_path,
                                    const std::filesystem::path& out_path, std::ostream& out);

// Defaults the history CSV to "<model>.history.csv".
reranker::TrainResult cmd_train(const AppConfig& cfg, const std::filesystem::path& dataset_path,
                                const std::filesystem::path& model_path,
                                const std::optional<std::filesystem::path>& history_path, std::ostream& log);

void cmd_rerank(const AppConfig& cfg, const std::filesystem::path& model_path, const std::filesystem::path& corpus_path,
                const std::string& query, std::size_t k, std::ostream& out);

pipeline::EvaluationReport cmd_eval(const AppConfig& cfg, const std::filesystem::path& model_path,
                                    const std::filesystem::path& scored_path,
                                    const std::optional<std::filesystem::path>& csv_path, std::ostream& out);

struct SweepRow {
  double alpha = 0.0;
  double tau = 0.0;
  std::string condition;
  bool ok = false;
  std::string error;
  std::size_t train_examples = 0;
  double final_loss = 0.0;
  pipeline::RankingMetrics metrics;
  std::string model_hash;
};

// "CE Loss" at alpha = 1, "RankNet Loss" at alpha = 0, "Multi-Loss" otherwise.
std::string sweep_condition(double alpha);

// Splits queries into train / held-out (seeded), then for each tau relabels
// the train split with b1 = tau, b2 = -tau, trains once per alpha and
// evaluates on the held-out split. Rows are written as CSV to `out_path`
// when given.
std::vector<SweepRow> cmd_sweep(const AppConfig& cfg, const std::filesystem::path& scored_path,
                                const std::vector<double>& alphas, const std::vector<double>& taus,
                                const std::optional<std::filesystem::path>& out_path, std::ostream& out);

std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace migrank::cli
