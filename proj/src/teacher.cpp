#include "migrank/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include "json.hpp"
#include "migrank/error.hpp"
#include "migrank/hashing.hpp"
#include "migrank/jsonl.hpp"
#include "migrank/text.hpp"

namespace migrank::teacher {

void TokenLogProbSequence::validate() const {
  require(!logprobs.empty(), ErrorCode::kInvariant, "token sequence is empty");
  require(tokens.size() == logprobs.size(), ErrorCode::kInvariant,
          "tokens and logprobs differ in length (" + std::to_string(tokens.size()) + " vs " +
              std::to_string(logprobs.size()) + ")");
  for (std::size_t i = 0; i < logprobs.size(); ++i) {
    require(std::isfinite(logprobs[i]) && logprobs[i] <= 0.0, ErrorCode::kInvariant,
            "logprob at index " + std::to_string(i) + " is not finite and <= 0");
  }
}

void TeacherRequest::validate() const {
  require(!query.empty(), ErrorCode::kInvalidInput, "teacher request has an empty query");
  require(!answer.empty(), ErrorCode::kInvalidInput, "teacher request has an empty answer");
}

void MockTeacherParams::validate() const {
  require(epsilon > 0.0 && epsilon < 0.5, ErrorCode::kInvalidInput, "mock epsilon must lie in (0, 0.5)");
  require(std::isfinite(a0) && std::isfinite(a1) && std::isfinite(a2), ErrorCode::kInvalidInput,
          "mock coefficients must be finite");
}

std::string_view to_string(ContextVariant variant) noexcept {
  return variant == ContextVariant::kWithDoc ? "with_doc" : "without_doc";
}

ContextVariant parse_variant(std::string_view name) {
  if (name == "with_doc") return ContextVariant::kWithDoc;
  if (name == "without_doc") return ContextVariant::kWithoutDoc;
  fail(ErrorCode::kParse, "unknown context variant '" + std::string(name) + "'");
}

namespace {

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::set<std::string> token_set(std::string_view text) {
  auto toks = text::tokenize(text);
  return {toks.begin(), toks.end()};
}

}  // namespace

TokenLogProbSequence mock_logprobs(const TeacherRequest& request, const MockTeacherParams& params) {
  params.validate();
  auto answer_tokens = text::tokenize(request.answer);
  require(!answer_tokens.empty(), ErrorCode::kInvalidInput, "answer is empty after tokenization");

  const auto query_tokens = token_set(request.query);
  const auto doc_tokens = request.document ? token_set(*request.document) : std::set<std::string>{};

  TokenLogProbSequence seq;
  seq.logprobs.reserve(answer_tokens.size());
  for (const auto& tok : answer_tokens) {
    const double in_doc = doc_tokens.count(tok) ? 1.0 : 0.0;
    const double in_query = query_tokens.count(tok) ? 1.0 : 0.0;
    const double z = params.a0 + params.a1 * in_doc + params.a2 * in_query;
    const double p = std::clamp(logistic(z), params.epsilon, 1.0 - params.epsilon);
    seq.logprobs.push_back(std::log(p));
  }
  seq.tokens = std::move(answer_tokens);
  return seq;
}

MockTeacher::MockTeacher(MockTeacherParams params) : params_(params) { params_.validate(); }

TokenLogProbSequence MockTeacher::logprobs(std::string_view, ContextVariant variant,
                                           const TeacherRequest& request) const {
  if (variant == ContextVariant::kWithoutDoc && request.document) {
    TeacherRequest stripped = request;
    stripped.document.reset();
    return mock_logprobs(stripped, params_);
  }
  return mock_logprobs(request, params_);
}

std::string MockTeacher::fingerprint() const {
  nlohmann::ordered_json j{{"kind", "mock"},
                           {"a0", params_.a0},
                           {"a1", params_.a1},
                           {"a2", params_.a2},
                           {"epsilon", params_.epsilon}};
  return sha256_hex(j.dump()).substr(0, 16);
}

std::vector<LogprobRecord> load_logprob_records(const std::filesystem::path& path) {
  std::vector<LogprobRecord> records;
  jsonl::for_each(path, [&](std::size_t line_no, const nlohmann::json& j) {
    LogprobRecord rec;
    rec.triplet_id = j.at("triplet_id").get<std::string>();
    rec.variant = parse_variant(j.at("variant").get<std::string>());
    rec.sequence.tokens = j.at("tokens").get<std::vector<std::string>>();
    rec.sequence.logprobs = j.at("logprobs").get<std::vector<double>>();
    try {
      rec.sequence.validate();
    } catch (const Error& e) {
      fail(ErrorCode::kInvariant, path.string() + ":" + std::to_string(line_no) + ": record '" +
                                      rec.triplet_id + "': " + e.what());
    }
    records.push_back(std::move(rec));
  });
  return records;
}

std::string serialize_logprob_record(const LogprobRecord& record) {
  nlohmann::ordered_json j;
  j["triplet_id"] = record.triplet_id;
  j["variant"] = std::string(to_string(record.variant));
  j["tokens"] = record.sequence.tokens;
  j["logprobs"] = record.sequence.logprobs;
  return j.dump();
}

void write_logprob_records(const std::filesystem::path& path, const std::vector<LogprobRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += serialize_logprob_record(r);
    out += '\n';
  }
  jsonl::write_file(path, out);
}

RecordTeacher::RecordTeacher(std::vector<LogprobRecord> records) {
  std::string digest_input;
  for (auto& rec : records) {
    digest_input += serialize_logprob_record(rec);
    digest_input += '\n';
    auto key = std::make_pair(rec.triplet_id, rec.variant);
    records_.insert_or_assign(std::move(key), std::move(rec.sequence));
  }
  fingerprint_ = "records:" + sha256_hex(digest_input).substr(0, 16);
}

TokenLogProbSequence RecordTeacher::logprobs(std::string_view triplet_id, ContextVariant variant,
                                             const TeacherRequest&) const {
  auto it = records_.find(std::make_pair(std::string(triplet_id), variant));
  if (it == records_.end()) {
    fail(ErrorCode::kMissingLogprobs, "no " + std::string(to_string(variant)) +
                                          " logprob record for triplet '" + std::string(triplet_id) + "'");
  }
  return it->second;
}

std::string RecordTeacher::fingerprint() const { return fingerprint_; }

LogprobCache::LogprobCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create cache directory " + dir_.string() + ": " + ec.message());
}

std::string LogprobCache::key(std::string_view triplet_id, ContextVariant variant,
                              std::string_view teacher_fingerprint, const TeacherRequest& request) {
  nlohmann::ordered_json j;
  j["triplet_id"] = triplet_id;
  j["variant"] = std::string(to_string(variant));
  j["teacher"] = teacher_fingerprint;
  j["query"] = request.query;
  j["answer"] = request.answer;
  j["document"] = variant == ContextVariant::kWithDoc && request.document ? *request.document : "";
  j["attachments"] = request.attachment_refs;
  return sha256_hex(j.dump());
}

std::optional<TokenLogProbSequence> LogprobCache::get(const std::string& key) const {
  std::shared_lock lock(mutex_);
  const auto path = dir_ / (key + ".json");
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    const auto j = nlohmann::json::parse(ss.str());
    TokenLogProbSequence seq;
    seq.tokens = j.at("tokens").get<std::vector<std::string>>();
    seq.logprobs = j.at("logprobs").get<std::vector<double>>();
    seq.validate();
    return seq;
  } catch (const std::exception&) {
    // Corrupt entries are treated as misses and overwritten on the next put.
    return std::nullopt;
  }
}

void LogprobCache::put(const std::string& key, const TokenLogProbSequence& seq) const {
  nlohmann::ordered_json j;
  j["tokens"] = seq.tokens;
  j["logprobs"] = seq.logprobs;
  std::unique_lock lock(mutex_);
  const auto final_path = dir_ / (key + ".json");
  const auto tmp_path = dir_ / (key + ".json.tmp");
  jsonl::write_file(tmp_path, j.dump());
  std::error_code ec;
  std::filesystem::rename(tmp_path, final_path, ec);
  if (ec) fail(ErrorCode::kIo, "cannot write cache entry " + final_path.string() + ": " + ec.message());
}

CachingTeacher::CachingTeacher(const TeacherProvider& inner, const LogprobCache& cache)
    : inner_(inner), cache_(cache) {}

TokenLogProbSequence CachingTeacher::logprobs(std::string_view triplet_id, ContextVariant variant,
                                              const TeacherRequest& request) const {
  const auto key = LogprobCache::key(triplet_id, variant, inner_.fingerprint(), request);
  if (auto hit = cache_.get(key)) return *hit;
  auto seq = inner_.logprobs(triplet_id, variant, request);
  cache_.put(key, seq);
  return seq;
}

}  // namespace migrank::teacher
