#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "migrank/losses.hpp"
#include "migrank/mig.hpp"
#include "migrank/reranker.hpp"

namespace migrank::reranker {

enum class Optimizer { kSgd, kAdam };
enum class PairPolicy { kLabel, kMigOrdered };

std::string_view to_string(Optimizer opt) noexcept;
std::string_view to_string(PairPolicy policy) noexcept;
Optimizer parse_optimizer(std::string_view name);
PairPolicy parse_pair_policy(std::string_view name);

struct TrainConfig {
  double alpha = 0.74;
  double sigma = 1.0;
  double learning_rate = 0.01;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::size_t pair_cap = 100;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::kAdam;
  Architecture architecture = Architecture::kLinear;
  std::size_t hidden_units = 8;
  PairPolicy pair_policy = PairPolicy::kLabel;
  // mig-ordered policy: minimum mig gap for a pair.
  double mig_margin = 0.0;
  Reduction rank_reduction = Reduction::kSum;

  void validate() const;
  nlohmann::ordered_json to_json() const;
};

// Pairs per query (grouped by query text). Label policy: positives x
// negatives. Mig-ordered policy: any two examples whose mig differs by more
// than `mig_margin`, higher mig first. Groups with more candidates than
// `cap` keep a seeded uniform subset. Indices refer to `examples`.
std::vector<RankPair> sample_pairs(std::span<const mig::LabeledExample> examples, PairPolicy policy,
                                   std::size_t cap, std::uint64_t seed, double mig_margin = 0.0);

struct LossBreakdown {
  double ce = 0.0;
  double rank = 0.0;
  double total = 0.0;
};

struct ObjectiveInput {
  std::span<const std::vector<double>> features;
  std::span<const int> labels;
  std::span<const RankPair> pairs;  // indices into features
};

// Hybrid objective alpha * CE(mean) + (1 - alpha) * RankNet over the batch.
// An empty pair set contributes a zero ranking term.
LossBreakdown hybrid_objective(const RerankerModel& model, const ObjectiveInput& batch, const TrainConfig& cfg);

struct GradientResult {
  LossBreakdown loss;
  std::vector<double> grad;
};

// Analytic gradient of hybrid_objective with respect to the flat parameter
// vector. A non-finite component raises kNumerical naming its index.
GradientResult gradients(const RerankerModel& model, const ObjectiveInput& batch, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  double ce = 0.0;
  double rank = 0.0;
  double total = 0.0;
};

struct TrainResult {
  RerankerModel model;
  std::vector<EpochRecord> history;
};

// Trains a reranker on labeled examples. The featurizer's idf table is built
// from the distinct documents in `examples`. Batches are formed from whole
// query groups so every sampled pair lands inside one batch.
TrainResult train(std::span<const mig::LabeledExample> examples, const TrainConfig& cfg);

void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history);

}  // namespace migrank::reranker
