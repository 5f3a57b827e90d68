#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "migrank/confidence.hpp"
#include "migrank/teacher.hpp"

namespace migrank::mig {

struct Triplet {
  std::string id;
  std::string query;
  std::string answer;
  std::string document;
  std::vector<std::string> attachments;

  void validate() const;
  teacher::TeacherRequest request() const;
};

struct ScoredTriplet {
  Triplet triplet;
  confidence::ConfidenceValue conf_with;
  confidence::ConfidenceValue conf_without;
  double mig = 0.0;
};

// Builds a ScoredTriplet, enforcing matching scales.
ScoredTriplet make_scored(Triplet triplet, confidence::ConfidenceValue with, confidence::ConfidenceValue without);

struct LabelingConfig {
  double b1 = 0.2;
  double b2 = -0.2;

  void validate() const;
};

enum class Label { kNegative = 0, kPositive = 1, kNeutral = 2 };

std::string_view to_string(Label label) noexcept;

// Strict inequalities: mig == b1 or mig == b2 is Neutral.
Label label(double mig, const LabelingConfig& cfg);
inline Label label(const ScoredTriplet& scored, const LabelingConfig& cfg) { return label(scored.mig, cfg); }

struct LabeledExample {
  ScoredTriplet scored;
  int label = 0;  // 1 positive, 0 negative

  const Triplet& triplet() const noexcept { return scored.triplet; }
  double mig() const noexcept { return scored.mig; }
};

struct MigHistogram {
  double bin_width = 0.05;
  // Bin index b covers [b * bin_width, (b + 1) * bin_width).
  std::map<long long, std::size_t> counts;

  void add(double mig);
};

struct DatasetStats {
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t discarded = 0;
  MigHistogram histogram;
};

struct LabeledDataset {
  std::vector<LabeledExample> examples;
  // Class counts of the input stream, before balancing.
  std::size_t raw_positives = 0;
  std::size_t raw_negatives = 0;
  std::size_t neutral = 0;
};

// Labels, drops Neutral, and (when `balance`) downsamples the majority class
// to the minority count with a seeded uniform draw. Output is sorted by
// triplet id.
LabeledDataset build_dataset(std::span<const ScoredTriplet> scored, const LabelingConfig& cfg, std::uint64_t seed,
                             bool balance = true);

// `discarded` counts Neutral inputs plus majority examples dropped by
// balancing.
DatasetStats dataset_stats(const LabeledDataset& dataset, double bin_width = 0.05);

// Baseline (query-only) confidences keyed by (query, answer). Safe for
// concurrent use.
class BaselineCache {
 public:
  std::optional<confidence::ConfidenceValue> find(const std::string& query, const std::string& answer) const;
  void insert(const std::string& query, const std::string& answer, confidence::ConfidenceValue value);
  std::size_t size() const;

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::pair<std::string, std::string>, confidence::ConfidenceValue> values_;
};

// mig = confidence(with document) - confidence(query only).
ScoredTriplet compute_mig(const Triplet& triplet, const teacher::TeacherProvider& teacher,
                          const confidence::ConfidenceStrategy& strategy, BaselineCache* baseline = nullptr);

// Scores every triplet using up to `jobs` threads; output order matches input.
std::vector<ScoredTriplet> compute_mig_all(std::span<const Triplet> triplets, const teacher::TeacherProvider& teacher,
                                           const confidence::ConfidenceStrategy& strategy, std::size_t jobs = 1);

// JSONL I/O. Scored records extend the triplet schema with conf_with,
// conf_without, scale and mig; labeled records add label.
std::vector<Triplet> load_triplets(const std::filesystem::path& path);
void write_triplets(const std::filesystem::path& path, std::span<const Triplet> triplets);
std::vector<ScoredTriplet> load_scored(const std::filesystem::path& path);
void write_scored(const std::filesystem::path& path, std::span<const ScoredTriplet> scored);
std::vector<LabeledExample> load_labeled(const std::filesystem::path& path);
void write_labeled(const std::filesystem::path& path, std::span<const LabeledExample> examples);

}  // namespace migrank::mig
