#include "migrank/http_teacher.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <optional>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "migrank/error.hpp"
#include "migrank/hashing.hpp"
#include "migrank/text.hpp"

namespace migrank::teacher {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path;
};

ParsedUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  require(scheme_end != std::string::npos, ErrorCode::kInvalidInput, "endpoint '" + url + "' has no scheme");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

ForcedPrompt build_forced_prompt(const TeacherRequest& request, const HttpClientOptions& opts) {
  const std::string& tpl = request.document ? opts.prompt_template : opts.prompt_template_no_doc;
  const auto pos = tpl.find("{answer}");
  require(pos != std::string::npos, ErrorCode::kConfig, "prompt template lacks an {answer} placeholder");
  const std::string doc = request.document.value_or("");
  const std::vector<std::pair<std::string_view, std::string_view>> values{{"doc", doc},
                                                                          {"query", request.query}};
  ForcedPrompt out;
  out.prefix = text::render_template(std::string_view(tpl).substr(0, pos), values);
  const auto tail = text::render_template(std::string_view(tpl).substr(pos + 8), values);
  out.full = out.prefix + request.answer + tail;
  return out;
}

TokenLogProbSequence extract_answer_logprobs(const std::string& response_body, const ForcedPrompt& prompt,
                                             const std::string& answer) {
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(response_body);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::kMissingLogprobs, std::string("teacher response is not JSON: ") + e.what());
  }
  const auto* logprobs = [&]() -> const nlohmann::json* {
    if (!body.contains("choices") || !body["choices"].is_array() || body["choices"].empty()) return nullptr;
    const auto& choice = body["choices"][0];
    if (!choice.contains("logprobs") || !choice["logprobs"].is_object()) return nullptr;
    return &choice["logprobs"];
  }();
  if (logprobs == nullptr || !logprobs->contains("tokens") || !logprobs->contains("token_logprobs")) {
    fail(ErrorCode::kMissingLogprobs, "teacher response carries no echoed token log-probabilities");
  }
  const auto& tokens = (*logprobs)["tokens"];
  const auto& values = (*logprobs)["token_logprobs"];
  if (!tokens.is_array() || !values.is_array() || tokens.size() != values.size()) {
    fail(ErrorCode::kMissingLogprobs, "teacher response has mismatched tokens/token_logprobs arrays");
  }

  std::vector<std::size_t> offsets;
  if (logprobs->contains("text_offset") && (*logprobs)["text_offset"].is_array() &&
      (*logprobs)["text_offset"].size() == tokens.size()) {
    offsets = (*logprobs)["text_offset"].get<std::vector<std::size_t>>();
  } else {
    std::size_t cursor = 0;
    for (const auto& t : tokens) {
      offsets.push_back(cursor);
      cursor += t.get<std::string>().size();
    }
  }

  const std::size_t answer_begin = prompt.prefix.size();
  const std::size_t answer_end = answer_begin + answer.size();
  std::size_t trailing_ws = 0;
  while (trailing_ws < prompt.prefix.size() &&
         std::isspace(static_cast<unsigned char>(prompt.prefix[prompt.prefix.size() - 1 - trailing_ws]))) {
    ++trailing_ws;
  }

  TokenLogProbSequence seq;
  std::string joined;
  std::optional<std::size_t> first_offset;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto tok = tokens[i].get<std::string>();
    const std::size_t begin = offsets[i];
    const std::size_t end = begin + tok.size();
    if (end <= answer_begin || begin >= answer_end) continue;
    if (!first_offset) first_offset = begin;
    if (!values[i].is_number()) {
      fail(ErrorCode::kMissingLogprobs, "answer token " + std::to_string(seq.size()) + " has no log-probability");
    }
    double lp = values[i].get<double>();
    if (!std::isfinite(lp)) fail(ErrorCode::kMissingLogprobs, "answer token log-probability is not finite");
    // Servers occasionally report tiny positive values from float rounding.
    if (lp > 0.0 && lp < 1e-6) lp = 0.0;
    seq.tokens.push_back(tok);
    seq.logprobs.push_back(lp);
    joined += tok;
  }
  if (seq.tokens.empty()) fail(ErrorCode::kTokenAlignment, "no returned tokens fall inside the answer span");
  if (*first_offset + trailing_ws < answer_begin) {
    fail(ErrorCode::kTokenAlignment, "first answer token straddles prompt text");
  }
  if (trim(joined) != trim(answer)) {
    fail(ErrorCode::kTokenAlignment, "returned tokens reconstruct '" + std::string(trim(joined)) +
                                         "' instead of the answer '" + answer + "'");
  }
  seq.validate();
  return seq;
}

TokenLogProbSequence fetch_logprobs(const std::string& endpoint, const TeacherRequest& request,
                                    const HttpClientOptions& opts) {
  request.validate();
  const auto prompt = build_forced_prompt(request, opts);
  const auto url = split_url(endpoint);

  nlohmann::ordered_json payload;
  if (!opts.model.empty()) payload["model"] = opts.model;
  payload["prompt"] = prompt.full;
  payload["max_tokens"] = opts.max_tokens;
  payload["echo"] = true;
  payload["logprobs"] = 0;
  payload["temperature"] = 0;
  if (!request.attachment_refs.empty()) payload["attachments"] = request.attachment_refs;
  const auto body = payload.dump();

  httplib::Headers headers;
  if (!opts.api_key.empty()) headers.emplace("Authorization", "Bearer " + opts.api_key);

  auto backoff = opts.backoff_initial;
  std::string last_error;
  for (int attempt = 0; attempt <= opts.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff = std::min(backoff * 2, opts.backoff_max);
    }
    httplib::Client client(url.scheme_host_port);
    const auto secs = opts.timeout.count() / 1000;
    const auto usecs = (opts.timeout.count() % 1000) * 1000;
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);

    auto res = client.Post(url.path, headers, body, "application/json");
    if (!res) {
      last_error = "request to " + endpoint + " failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "endpoint " + endpoint + " returned HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      fail(ErrorCode::kNetwork, "endpoint " + endpoint + " returned HTTP " + std::to_string(res->status));
    }
    return extract_answer_logprobs(res->body, prompt, request.answer);
  }
  fail(ErrorCode::kNetwork, last_error + " (after " + std::to_string(opts.max_retries + 1) + " attempts)");
}

HttpTeacher::HttpTeacher(std::string endpoint, HttpClientOptions opts)
    : endpoint_(std::move(endpoint)), opts_(std::move(opts)) {
  split_url(endpoint_);
}

TokenLogProbSequence HttpTeacher::logprobs(std::string_view, ContextVariant variant,
                                           const TeacherRequest& request) const {
  if (variant == ContextVariant::kWithoutDoc && request.document) {
    TeacherRequest stripped = request;
    stripped.document.reset();
    return fetch_logprobs(endpoint_, stripped, opts_);
  }
  return fetch_logprobs(endpoint_, request, opts_);
}

std::string HttpTeacher::fingerprint() const {
  nlohmann::ordered_json j{{"kind", "http"},
                           {"endpoint", endpoint_},
                           {"model", opts_.model},
                           {"template", opts_.prompt_template},
                           {"template_no_doc", opts_.prompt_template_no_doc}};
  return sha256_hex(j.dump()).substr(0, 16);
}

std::vector<TokenLogProbSequence> fetch_bounded(const TeacherProvider& provider, const std::vector<FetchJob>& jobs,
                                                std::size_t max_in_flight) {
  std::vector<std::optional<TokenLogProbSequence>> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) {
      try {
        results[i] = provider.logprobs(jobs[i].triplet_id, jobs[i].variant, jobs[i].request);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(max_in_flight, jobs.size()));
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!errors[i]) continue;
    const std::string where = "triplet '" + jobs[i].triplet_id + "' (" + std::string(to_string(jobs[i].variant)) + "): ";
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      throw Error(e.code(), where + e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kNetwork, where + e.what());
    }
  }
  std::vector<TokenLogProbSequence> out;
  out.reserve(jobs.size());
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

}  // namespace migrank::teacher
