#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace migrank::teacher {

// Per-token natural-log probabilities of a forced answer continuation.
struct TokenLogProbSequence {
  std::vector<std::string> tokens;
  std::vector<double> logprobs;

  std::size_t size() const noexcept { return logprobs.size(); }

  // Throws kInvariant unless lengths match, are nonzero, and every
  // logprob is finite and <= 0.
  void validate() const;

  friend bool operator==(const TokenLogProbSequence&, const TokenLogProbSequence&) = default;
};

struct TeacherRequest {
  std::string query;
  std::string answer;
  std::optional<std::string> document;
  std::vector<std::string> attachment_refs;

  void validate() const;
};

struct MockTeacherParams {
  double a0 = -1.0;
  double a1 = 2.5;
  double a2 = 0.5;
  double epsilon = 0.01;

  void validate() const;
};

enum class ContextVariant { kWithDoc, kWithoutDoc };

std::string_view to_string(ContextVariant variant) noexcept;
ContextVariant parse_variant(std::string_view name);

// Deterministic stand-in teacher. For each answer token t:
//   p = clamp(logistic(a0 + a1*[t in doc] + a2*[t in query]), eps, 1 - eps)
// Attachments are ignored.
TokenLogProbSequence mock_logprobs(const TeacherRequest& request, const MockTeacherParams& params);

// Source of teacher log-probabilities. Implementations must be safe to
// call concurrently.
class TeacherProvider {
 public:
  virtual ~TeacherProvider() = default;

  virtual TokenLogProbSequence logprobs(std::string_view triplet_id, ContextVariant variant,
                                        const TeacherRequest& request) const = 0;

  // Identifies the teacher configuration for cache keys.
  virtual std::string fingerprint() const = 0;
};

class MockTeacher final : public TeacherProvider {
 public:
  explicit MockTeacher(MockTeacherParams params = {});

  TokenLogProbSequence logprobs(std::string_view triplet_id, ContextVariant variant,
                                const TeacherRequest& request) const override;
  std::string fingerprint() const override;

 private:
  MockTeacherParams params_;
};

struct LogprobRecord {
  std::string triplet_id;
  ContextVariant variant = ContextVariant::kWithDoc;
  TokenLogProbSequence sequence;
};

std::vector<LogprobRecord> load_logprob_records(const std::filesystem::path& path);

// Canonical line form: {"triplet_id", "variant", "tokens", "logprobs"} in
// that key order, compact.
std::string serialize_logprob_record(const LogprobRecord& record);
void write_logprob_records(const std::filesystem::path& path, const std::vector<LogprobRecord>& records);

// Serves previously recorded sequences keyed by (triplet id, variant).
class RecordTeacher final : public TeacherProvider {
 public:
  explicit RecordTeacher(std::vector<LogprobRecord> records);

  TokenLogProbSequence logprobs(std::string_view triplet_id, ContextVariant variant,
                                const TeacherRequest& request) const override;
  std::string fingerprint() const override;

 private:
  std::map<std::pair<std::string, ContextVariant>, TokenLogProbSequence> records_;
  std::string fingerprint_;
};

// Directory-backed cache of teacher outputs. Keys cover the triplet id,
// variant, teacher fingerprint and the request content, so edits to a
// triplet invalidate its entries.
class LogprobCache {
 public:
  explicit LogprobCache(std::filesystem::path dir);

  static std::string key(std::string_view triplet_id, ContextVariant variant,
                         std::string_view teacher_fingerprint, const TeacherRequest& request);

  std::optional<TokenLogProbSequence> get(const std::string& key) const;
  void put(const std::string& key, const TokenLogProbSequence& seq) const;

 private:
  std::filesystem::path dir_;
  mutable std::shared_mutex mutex_;
};

// Wraps a provider with LogprobCache lookups.
class CachingTeacher final : public TeacherProvider {
 public:
  CachingTeacher(const TeacherProvider& inner, const LogprobCache& cache);

  TokenLogProbSequence logprobs(std::string_view triplet_id, ContextVariant variant,
                                const TeacherRequest& request) const override;
  std::string fingerprint() const override { return inner_.fingerprint(); }

 private:
  const TeacherProvider& inner_;
  const LogprobCache& cache_;
};

}  // namespace migrank::teacher
