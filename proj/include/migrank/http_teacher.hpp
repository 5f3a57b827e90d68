#pragma once

#include <chrono>
#include <cstddef>
#include <string>
#include <vector>

#include "migrank/teacher.hpp"

namespace migrank::teacher {

inline constexpr const char* kDefaultPromptTemplate = "Context: {doc}\nQuestion: {query}\nAnswer: {answer}";
inline constexpr const char* kDefaultPromptTemplateNoDoc = "Question: {query}\nAnswer: {answer}";

struct HttpClientOptions {
  std::string model;
  std::string api_key;
  // Rendered with {doc}, {query}, {answer}; the answer must be the last
  // placeholder so the prompt prefix can be separated from it.
  std::string prompt_template = kDefaultPromptTemplate;
  std::string prompt_template_no_doc = kDefaultPromptTemplateNoDoc;
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
  std::chrono::milliseconds backoff_initial{200};
  std::chrono::milliseconds backoff_max{5000};
  // Some servers reject max_tokens = 0; generated tokens fall outside the
  // answer span and are dropped.
  int max_tokens = 1;
  std::size_t max_in_flight = 4;
};

// Prompt text split at the answer: the answer occupies
// [prefix.size(), prefix.size() + answer.size()) of `full`.
struct ForcedPrompt {
  std::string prefix;
  std::string full;
};

ForcedPrompt build_forced_prompt(const TeacherRequest& request, const HttpClientOptions& opts);

// Extracts the answer-span log-probabilities from an OpenAI-style
// completions response produced with echo=true. Throws kMissingLogprobs or
// kTokenAlignment.
TokenLogProbSequence extract_answer_logprobs(const std::string& response_body, const ForcedPrompt& prompt,
                                             const std::string& answer);

// POSTs a forced-continuation scoring request to `endpoint` (full URL of a
// completions route) and returns the log-probs of exactly the answer tokens.
// Retries network failures, 429 and 5xx with exponential backoff.
TokenLogProbSequence fetch_logprobs(const std::string& endpoint, const TeacherRequest& request,
                                    const HttpClientOptions& opts);

class HttpTeacher final : public TeacherProvider {
 public:
  HttpTeacher(std::string endpoint, HttpClientOptions opts);

  TokenLogProbSequence logprobs(std::string_view triplet_id, ContextVariant variant,
                                const TeacherRequest& request) const override;
  std::string fingerprint() const override;

  const HttpClientOptions& options() const noexcept { return opts_; }

 private:
  std::string endpoint_;
  HttpClientOptions opts_;
};

struct FetchJob {
  std::string triplet_id;
  ContextVariant variant = ContextVariant::kWithDoc;
  TeacherRequest request;
};

// Runs every job through `provider` with at most `max_in_flight` calls
// outstanding. Results are positional (result[i] answers jobs[i]). The
// first failure, by job order, is rethrown with its triplet id attached.
std::vector<TokenLogProbSequence> fetch_bounded(const TeacherProvider& provider, const std::vector<FetchJob>& jobs,
                                                std::size_t max_in_flight);

}  // namespace migrank::teacher
