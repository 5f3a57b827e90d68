#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "migrank/teacher.hpp"

namespace migrank::confidence {

enum class Scale { kProbability, kLogprob };

std::string_view to_string(Scale scale) noexcept;
Scale parse_scale(std::string_view name);

struct ConfidenceValue {
  double value = 0.0;
  Scale scale = Scale::kProbability;
};

/// Inverse document frequencies over a reference corpus, smoothed as
/// ln((1 + N) / (1 + df)). Terms are stored normalized (see
/// text::normalize_token). Lookups of unknown terms return the largest idf
/// in the table.
class IdfTable {
 public:
  IdfTable(std::map<std::string, double> idf, std::size_t corpus_doc_count);

  double lookup(std::string_view term) const;
  bool contains(std::string_view term) const;
  double max_idf() const noexcept { return max_idf_; }
  std::size_t corpus_doc_count() const noexcept { return corpus_doc_count_; }
  const std::map<std::string, double, std::less<>>& terms() const noexcept { return idf_; }

  // JSONL: a header {"corpus_doc_count": N} followed by {"term", "idf"}
  // records sorted by term.
  void save(const std::filesystem::path& path) const;
  static IdfTable load(const std::filesystem::path& path);

 private:
  std::map<std::string, double, std::less<>> idf_;
  std::size_t corpus_doc_count_;
  double max_idf_ = 0.0;
};

IdfTable build_idf_table(std::span<const std::string> corpus);

enum class PeakMode { kFixed, kMidpoint };

struct PositionalParams {
  double k = 0.2;
  double c = 1.5;
  double peak = 5.0;
  PeakMode peak_mode = PeakMode::kFixed;
  // Divide the weights by their sum before exponentiating.
  bool normalize = false;
};

struct SemanticParams {
  double tau_freq = 0.15;
  std::shared_ptr<const IdfTable> idf;
};

struct ConfidenceStrategy {
  enum class Kind { kEqual, kPositional, kSemanticAnchor };

  Kind kind = Kind::kPositional;
  PositionalParams positional;
  SemanticParams semantic;

  static ConfidenceStrategy equal();
  static ConfidenceStrategy positional_with(PositionalParams params);
  static ConfidenceStrategy semantic_anchor(std::shared_ptr<const IdfTable> idf, double tau_freq = 0.15);

  Scale scale() const noexcept { return kind == Kind::kSemanticAnchor ? Scale::kLogprob : Scale::kProbability; }
  void validate() const;
  // Stable digest of the kind and parameters (including the idf table).
  std::string fingerprint() const;
};

std::string_view to_string(ConfidenceStrategy::Kind kind) noexcept;
ConfidenceStrategy::Kind parse_kind(std::string_view name);

// w_i = max(0, -k (i - peak)^2 + c) for 1-based i.
std::vector<double> positional_weights(std::size_t n, double k, double c, double peak);

// exp(sum w_i ln p_i). Weights must be nonnegative and match the length.
double weighted_confidence(std::span<const double> logprobs, std::span<const double> weights);

std::vector<std::uint8_t> semantic_mask(std::span<const std::string> tokens, const IdfTable& idf, double tau_freq);

// Mean of logprobs over mask=1 entries; all-zero mask falls back to the
// mean over every entry.
double anchored_mean_logprob(std::span<const double> logprobs, std::span<const std::uint8_t> mask,
                             bool* fell_back = nullptr);

struct ConfidenceDetail {
  ConfidenceValue value;
  bool fell_back = false;
};

ConfidenceDetail confidence_detail(const teacher::TokenLogProbSequence& seq, const ConfidenceStrategy& strategy);

// Aggregates a token sequence into one confidence value. Degenerate cases
// (all positional weights zero, all-zero semantic mask) fall back to equal
// weighting / plain mean and log a warning.
ConfidenceValue confidence(const teacher::TokenLogProbSequence& seq, const ConfidenceStrategy& strategy);

}  // namespace migrank::confidence
