#include "migrank/losses.hpp"

#include <algorithm>
#include <cmath>

#include "migrank/error.hpp"

namespace migrank::reranker {

double ce_loss(std::span<const double> probs, std::span<const int> labels) {
  require(!probs.empty(), ErrorCode::kInvalidInput, "ce_loss on an empty batch");
  require(probs.size() == labels.size(), ErrorCode::kInvalidInput, "ce_loss: probs and labels differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    require(labels[i] == 0 || labels[i] == 1, ErrorCode::kInvalidInput, "ce_loss: labels must be 0 or 1");
    const double p = std::clamp(probs[i], kProbClamp, 1.0 - kProbClamp);
    total += labels[i] == 1 ? -std::log(p) : -std::log(1.0 - p);
  }
  return total / static_cast<double>(probs.size());
}

double ranknet_pair_loss(double margin, double sigma) noexcept {
  const double x = -sigma * margin;
  // softplus(x) = max(x, 0) + log1p(exp(-|x|))
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double ranknet_loss(std::span<const RankPair> pairs, std::span<const double> scores, double sigma,
                    Reduction reduction) {
  require(!pairs.empty(), ErrorCode::kInvalidInput, "ranknet_loss on an empty pair set");
  double total = 0.0;
  for (const auto& pair : pairs) {
    require(pair.positive < scores.size() && pair.negative < scores.size(), ErrorCode::kInvalidInput,
            "rank pair index out of range");
    total += ranknet_pair_loss(scores[pair.positive] - scores[pair.negative], sigma);
  }
  return reduction == Reduction::kMean ? total / static_cast<double>(pairs.size()) : total;
}

double hybrid_loss(double alpha, double ce, double rank) {
  require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::kInvalidInput, "alpha must lie in [0, 1]");
  return alpha * ce + (1.0 - alpha) * rank;
}

}  // namespace migrank::reranker
