#include "migrank/mig.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <set>
#include <thread>

#include "json.hpp"
#include "migrank/error.hpp"
#include "migrank/jsonl.hpp"
#include "migrank/random.hpp"

namespace migrank::mig {

using confidence::ConfidenceValue;

void Triplet::validate() const {
  require(!id.empty(), ErrorCode::kInvalidInput, "triplet has an empty id");
  require(!query.empty() && !answer.empty() && !document.empty(), ErrorCode::kInvalidInput,
          "triplet '" + id + "' has an empty query, answer or document");
}

teacher::TeacherRequest Triplet::request() const {
  return teacher::TeacherRequest{query, answer, document, attachments};
}

ScoredTriplet make_scored(Triplet triplet, ConfidenceValue with, ConfidenceValue without) {
  if (with.scale != without.scale) {
    fail(ErrorCode::kScaleMismatch, "triplet '" + triplet.id + "': with-doc confidence is on the " +
                                        std::string(confidence::to_string(with.scale)) + " scale, baseline on the " +
                                        std::string(confidence::to_string(without.scale)) + " scale");
  }
  ScoredTriplet out{std::move(triplet), with, without, with.value - without.value};
  return out;
}

void LabelingConfig::validate() const {
  require(std::isfinite(b1) && std::isfinite(b2) && b1 > b2, ErrorCode::kInvalidInput,
          "labeling thresholds require b1 > b2");
}

std::string_view to_string(Label label) noexcept {
  switch (label) {
    case Label::kPositive: return "positive";
    case Label::kNegative: return "negative";
    case Label::kNeutral: return "neutral";
  }
  return "unknown";
}

Label label(double mig, const LabelingConfig& cfg) {
  if (mig > cfg.b1) return Label::kPositive;
  if (mig < cfg.b2) return Label::kNegative;
  return Label::kNeutral;
}

void MigHistogram::add(double mig) {
  const auto bin = static_cast<long long>(std::floor(mig / bin_width));
  ++counts[bin];
}

LabeledDataset build_dataset(std::span<const ScoredTriplet> scored, const LabelingConfig& cfg, std::uint64_t seed,
                             bool balance) {
  cfg.validate();
  require(!scored.empty(), ErrorCode::kInvalidInput, "cannot build a dataset from an empty stream");

  std::vector<const ScoredTriplet*> sorted;
  sorted.reserve(scored.size());
  for (const auto& s : scored) sorted.push_back(&s);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ScoredTriplet* a, const ScoredTriplet* b) { return a->triplet.id < b->triplet.id; });

  LabeledDataset out;
  std::vector<const ScoredTriplet*> positives;
  std::vector<const ScoredTriplet*> negatives;
  for (const auto* s : sorted) {
    switch (label(*s, cfg)) {
      case Label::kPositive: positives.push_back(s); break;
      case Label::kNegative: negatives.push_back(s); break;
      case Label::kNeutral: ++out.neutral; break;
    }
  }
  out.raw_positives = positives.size();
  out.raw_negatives = negatives.size();
  if (positives.empty() || negatives.empty()) {
    fail(ErrorCode::kUnbalanceable, "dataset cannot be balanced: positives=" + std::to_string(positives.size()) +
                                        " negatives=" + std::to_string(negatives.size()) +
                                        " neutral=" + std::to_string(out.neutral));
  }

  if (balance && positives.size() != negatives.size()) {
    auto& majority = positives.size() > negatives.size() ? positives : negatives;
    const std::size_t keep = std::min(positives.size(), negatives.size());
    Rng rng(seed);
    const auto picked = rng.sample_indices(majority.size(), keep);
    std::vector<const ScoredTriplet*> kept;
    kept.reserve(keep);
    for (auto idx : picked) kept.push_back(majority[idx]);
    majority = std::move(kept);
  }

  std::vector<std::pair<const ScoredTriplet*, int>> merged;
  merged.reserve(positives.size() + negatives.size());
  for (const auto* p : positives) merged.emplace_back(p, 1);
  for (const auto* n : negatives) merged.emplace_back(n, 0);
  std::stable_sort(merged.begin(), merged.end(),
                   [](const auto& a, const auto& b) { return a.first->triplet.id < b.first->triplet.id; });
  out.examples.reserve(merged.size());
  for (const auto& [s, y] : merged) out.examples.push_back(LabeledExample{*s, y});
  return out;
}

DatasetStats dataset_stats(const LabeledDataset& dataset, double bin_width) {
  require(bin_width > 0.0, ErrorCode::kInvalidInput, "histogram bin width must be > 0");
  DatasetStats stats;
  stats.histogram.bin_width = bin_width;
  for (const auto& ex : dataset.examples) {
    (ex.label == 1 ? stats.positives : stats.negatives) += 1;
    stats.histogram.add(ex.mig());
  }
  const std::size_t labeled_in = dataset.raw_positives + dataset.raw_negatives;
  const std::size_t kept = stats.positives + stats.negatives;
  stats.discarded = dataset.neutral + (labeled_in > kept ? labeled_in - kept : 0);
  return stats;
}

std::optional<ConfidenceValue> BaselineCache::find(const std::string& query, const std::string& answer) const {
  std::shared_lock lock(mutex_);
  auto it = values_.find({query, answer});
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

void BaselineCache::insert(const std::string& query, const std::string& answer, ConfidenceValue value) {
  std::unique_lock lock(mutex_);
  values_.emplace(std::make_pair(query, answer), value);
}

std::size_t BaselineCache::size() const {
  std::shared_lock lock(mutex_);
  return values_.size();
}

ScoredTriplet compute_mig(const Triplet& triplet, const teacher::TeacherProvider& teacher,
                          const confidence::ConfidenceStrategy& strategy, BaselineCache* baseline) {
  triplet.validate();
  try {
    const auto request = triplet.request();
    const auto with_seq = teacher.logprobs(triplet.id, teacher::ContextVariant::kWithDoc, request);
    const auto with = confidence::confidence(with_seq, strategy);

    std::optional<ConfidenceValue> without;
    if (baseline) without = baseline->find(triplet.query, triplet.answer);
    if (!without) {
      auto query_only = request;
      query_only.document.reset();
      const auto seq = teacher.logprobs(triplet.id, teacher::ContextVariant::kWithoutDoc, query_only);
      without = confidence::confidence(seq, strategy);
      if (baseline) baseline->insert(triplet.query, triplet.answer, *without);
    }
    return make_scored(triplet, with, *without);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kScaleMismatch) throw;
    throw Error(e.code(), "triplet '" + triplet.id + "': " + e.what());
  }
}

std::vector<ScoredTriplet> compute_mig_all(std::span<const Triplet> triplets, const teacher::TeacherProvider& teacher,
                                           const confidence::ConfidenceStrategy& strategy, std::size_t jobs) {
  BaselineCache baseline;
  std::vector<std::optional<ScoredTriplet>> results(triplets.size());
  std::vector<std::exception_ptr> errors(triplets.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < triplets.size(); i = next.fetch_add(1)) {
      try {
        results[i] = compute_mig(triplets[i], teacher, strategy, &baseline);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, triplets.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<ScoredTriplet> out;
  out.reserve(results.size());
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

namespace {

Triplet triplet_from_json(const nlohmann::json& j) {
  Triplet t;
  t.id = j.at("id").get<std::string>();
  t.query = j.at("query").get<std::string>();
  t.answer = j.at("answer").get<std::string>();
  t.document = j.at("document").get<std::string>();
  if (j.contains("attachments")) t.attachments = j.at("attachments").get<std::vector<std::string>>();
  return t;
}

nlohmann::ordered_json triplet_to_json(const Triplet& t) {
  nlohmann::ordered_json j;
  j["id"] = t.id;
  j["query"] = t.query;
  j["answer"] = t.answer;
  j["document"] = t.document;
  j["attachments"] = t.attachments;
  return j;
}

ScoredTriplet scored_from_json(const nlohmann::json& j) {
  const auto scale = confidence::parse_scale(j.at("scale").get<std::string>());
  ScoredTriplet s;
  s.triplet = triplet_from_json(j);
  s.conf_with = {j.at("conf_with").get<double>(), scale};
  s.conf_without = {j.at("conf_without").get<double>(), scale};
  s.mig = j.at("mig").get<double>();
  return s;
}

nlohmann::ordered_json scored_to_json(const ScoredTriplet& s) {
  auto j = triplet_to_json(s.triplet);
  j["conf_with"] = s.conf_with.value;
  j["conf_without"] = s.conf_without.value;
  j["scale"] = std::string(confidence::to_string(s.conf_with.scale));
  j["mig"] = s.mig;
  return j;
}

void check_unique(std::set<std::string>& seen, const std::string& id, const std::filesystem::path& path,
                  std::size_t line_no) {
  if (!seen.insert(id).second) {
    fail(ErrorCode::kInvalidInput,
         path.string() + ":" + std::to_string(line_no) + ": duplicate triplet id '" + id + "'");
  }
}

}  // namespace

std::vector<Triplet> load_triplets(const std::filesystem::path& path) {
  std::vector<Triplet> out;
  std::set<std::string> seen;
  jsonl::for_each(path, [&](std::size_t line_no, const nlohmann::json& j) {
    auto t = triplet_from_json(j);
    check_unique(seen, t.id, path, line_no);
    try {
      t.validate();
    } catch (const Error& e) {
      fail(e.code(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(std::move(t));
  });
  return out;
}

void write_triplets(const std::filesystem::path& path, std::span<const Triplet> triplets) {
  std::vector<nlohmann::ordered_json> rows;
  for (const auto& t : triplets) rows.push_back(triplet_to_json(t));
  jsonl::write(path, rows);
}

std::vector<ScoredTriplet> load_scored(const std::filesystem::path& path) {
  std::vector<ScoredTriplet> out;
  std::set<std::string> seen;
  jsonl::for_each(path, [&](std::size_t line_no, const nlohmann::json& j) {
    auto s = scored_from_json(j);
    check_unique(seen, s.triplet.id, path, line_no);
    out.push_back(std::move(s));
  });
  return out;
}

void write_scored(const std::filesystem::path& path, std::span<const ScoredTriplet> scored) {
  std::vector<nlohmann::ordered_json> rows;
  for (const auto& s : scored) rows.push_back(scored_to_json(s));
  jsonl::write(path, rows);
}

std::vector<LabeledExample> load_labeled(const std::filesystem::path& path) {
  std::vector<LabeledExample> out;
  std::set<std::string> seen;
  jsonl::for_each(path, [&](std::size_t line_no, const nlohmann::json& j) {
    LabeledExample ex{scored_from_json(j), j.at("label").get<int>()};
    if (ex.label != 0 && ex.label != 1) {
      fail(ErrorCode::kInvariant, path.string() + ":" + std::to_string(line_no) + ": label must be 0 or 1");
    }
    check_unique(seen, ex.triplet().id, path, line_no);
    out.push_back(std::move(ex));
  });
  return out;
}

void write_labeled(const std::filesystem::path& path, std::span<const LabeledExample> examples) {
  std::vector<nlohmann::ordered_json> rows;
  for (const auto& ex : examples) {
    auto j = scored_to_json(ex.scored);
    j["label"] = ex.label;
    rows.push_back(std::move(j));
  }
  jsonl::write(path, rows);
}

}  // namespace migrank::mig
