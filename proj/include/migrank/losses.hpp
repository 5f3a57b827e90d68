#pragma once

#include <cstddef>
#include <span>
#include <string>

namespace migrank::reranker {

// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] inside ce_loss.
inline constexpr double kProbClamp = 1e-7;

// (positive, negative) indices into a score array, both from one query.
struct RankPair {
  std::string query_id;
  std::size_t positive = 0;
  std::size_t negative = 0;

  friend bool operator==(const RankPair&, const RankPair&) = default;
};

enum class Reduction { kSum, kMean };

// Mean binary cross-entropy.
double ce_loss(std::span<const double> probs, std::span<const int> labels);

// ln(1 + exp(-sigma * margin)), evaluated without overflow.
double ranknet_pair_loss(double margin, double sigma) noexcept;

// Sum (or mean) of ranknet_pair_loss(s_pos - s_neg) over pairs.
double ranknet_loss(std::span<const RankPair> pairs, std::span<const double> scores, double sigma,
                    Reduction reduction = Reduction::kSum);

double hybrid_loss(double alpha, double ce, double rank);

}  // namespace migrank::reranker
