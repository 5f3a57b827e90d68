#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "migrank/confidence.hpp"
#include "migrank/mig.hpp"
#include "migrank/reranker.hpp"

namespace migrank::pipeline {

struct Document {
  std::string text;
  std::vector<std::string> attachments;
};

struct Corpus {
  std::map<std::string, Document> documents;

  void validate() const;
  static Corpus load(const std::filesystem::path& path);
};

struct ScoredDoc {
  std::string id;
  double score = 0.0;

  friend bool operator==(const ScoredDoc&, const ScoredDoc&) = default;
};

// Descending score, ascending id on ties.
bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) noexcept;

using RetrievalResult = std::vector<ScoredDoc>;

// Cosine similarity over tf-idf vectors, with idf from the corpus itself.
class TfidfRetriever {
 public:
  explicit TfidfRetriever(const Corpus& corpus);

  RetrievalResult retrieve(std::string_view query, std::size_t m) const;

 private:
  struct DocVector {
    std::string id;
    std::map<std::string, double> weights;
    double norm = 0.0;
  };

  confidence::IdfTable idf_;
  std::vector<DocVector> docs_;
};

RetrievalResult tfidf_retrieve(std::string_view query, const Corpus& corpus, std::size_t m);

// Top-k by reranker score, ties by ascending id.
std::vector<ScoredDoc> rerank(const reranker::RerankerModel& model, std::string_view query,
                              const RetrievalResult& candidates, const Corpus& corpus, std::size_t k);

// Orders (id, score) candidates and keeps the first k.
std::vector<ScoredDoc> select_top_k(std::vector<ScoredDoc> scored, std::size_t k);

struct ContextTemplate {
  // Placeholders: {rank} (1-based), {id}, {text}.
  std::string document_block = "[Document {rank}]\n{text}\n\n";
  // Placeholders: {query}.
  std::string query_block = "Question: {query}\nAnswer:";
};

struct ContextDoc {
  std::string id;
  std::string text;
};

// Document blocks in the given order, then the query block. An empty list
// yields the query-only prompt.
std::string assemble_context(std::string_view query, std::span<const ContextDoc> docs, const ContextTemplate& tpl);

struct RankingMetrics {
  double pairwise_accuracy = 0.0;
  double kendall_tau = 0.0;
  double ndcg = 0.0;
  std::size_t queries = 0;
  std::size_t evaluated_pairs = 0;
};

struct QueryMetrics {
  std::string query;
  std::size_t documents = 0;
  std::size_t pairs = 0;
  std::size_t correct_pairs = 0;
  std::optional<double> kendall_tau;
  std::optional<double> ndcg;
};

struct RankedItem {
  std::string id;
  double score = 0.0;
  double mig = 0.0;
};

// Tau-b between two orderings of the same items; nullopt when either side
// is entirely tied.
std::optional<double> kendall_tau_b(std::span<const double> x, std::span<const double> y);

// NDCG@k with gain max(0, mig), items ordered by score (ties by id).
// nullopt when the ideal DCG is zero.
std::optional<double> ndcg_at_k(std::span<const RankedItem> items, std::size_t k);

QueryMetrics evaluate_group(std::string query, std::span<const RankedItem> items, std::size_t ndcg_k);

struct EvaluationReport {
  RankingMetrics metrics;
  std::vector<QueryMetrics> per_query;
};

// Aggregates per-query metrics: pairwise accuracy pools pairs across
// queries (mig ties excluded); tau and NDCG average over queries where they
// are defined.
EvaluationReport evaluate_groups(const std::map<std::string, std::vector<RankedItem>>& groups, std::size_t ndcg_k);

// Scores each triplet's (query, document) with the model, groups by query
// and evaluates. Groups with fewer than two documents are skipped.
EvaluationReport eval_ranking(const reranker::RerankerModel& model, std::span<const mig::ScoredTriplet> scored,
                              std::size_t ndcg_k = 3);

std::string metrics_json(const EvaluationReport& report);
std::string metrics_csv(const EvaluationReport& report);

}  // namespace migrank::pipeline
