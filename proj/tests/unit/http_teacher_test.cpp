#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "migrank/error.hpp"
#include "migrank/http_teacher.hpp"

using namespace migrank;
using namespace migrank::teacher;
using nlohmann::json;

namespace {

// Splits text into pieces that keep their leading whitespace, like BPE
// tokenizers do: "a bc" -> ["a", " bc"].
std::vector<std::string> pieces(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if ((ch == ' ' || ch == '\n') && !cur.empty() && cur.back() != ' ' && cur.back() != '\n') {
      out.push_back(cur);
      cur.clear();
    }
    cur.push_back(ch);
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

json echo_response(const std::string& prompt, bool with_offsets = true) {
  json tokens = json::array(), values = json::array(), offsets = json::array();
  std::size_t offset = 0;
  for (const auto& p : pieces(prompt)) {
    tokens.push_back(p);
    values.push_back(tokens.size() == 1 ? json(nullptr) : json(-0.05 * static_cast<double>(tokens.size() % 7)));
    offsets.push_back(offset);
    offset += p.size();
  }
  tokens.push_back(" done");
  values.push_back(-3.0);
  offsets.push_back(offset);
  json lp{{"tokens", tokens}, {"token_logprobs", values}};
  if (with_offsets) lp["text_offset"] = offsets;
  return json{{"choices", json::array({json{{"text", prompt + " done"}, {"logprobs", lp}}})}};
}

class FakeServer {
 public:
  FakeServer() {
    server_.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests;
      last_auth = req.get_header_value("Authorization");
      const auto body = json::parse(req.body);
      last_body = body;
      if (failures_left > 0) {
        --failures_left;
        res.status = 503;
        return;
      }
      if (status_override) {
        res.status = status_override;
        return;
      }
      res.set_content(echo_response(body["prompt"].get<std::string>()).dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/completions"; }

  std::atomic<int> requests{0};
  std::atomic<int> failures_left{0};
  int status_override = 0;
  std::string last_auth;
  json last_body;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

HttpClientOptions fast_options() {
  HttpClientOptions o;
  o.backoff_initial = std::chrono::milliseconds(1);
  o.backoff_max = std::chrono::milliseconds(4);
  o.timeout = std::chrono::milliseconds(5000);
  return o;
}

}  // namespace

TEST(ForcedPrompt, AnswerIsTheSuffixSpan) {
  TeacherRequest req{"Who?", "Leonardo da Vinci", "The painter.", {}};
  const auto p = build_forced_prompt(req, {});
  EXPECT_EQ(p.full, "Context: The painter.\nQuestion: Who?\nAnswer: Leonardo da Vinci");
  EXPECT_EQ(p.full.substr(p.prefix.size()), "Leonardo da Vinci");
  req.document.reset();
  EXPECT_EQ(build_forced_prompt(req, {}).full, "Question: Who?\nAnswer: Leonardo da Vinci");
}

TEST(ExtractAnswer, SelectsOnlyAnswerTokens) {
  TeacherRequest req{"Who?", "Leonardo da Vinci", std::nullopt, {}};
  const auto prompt = build_forced_prompt(req, {});
  const auto seq = extract_answer_logprobs(echo_response(prompt.full).dump(), prompt, req.answer);
  ASSERT_EQ(seq.size(), 3u);
  EXPECT_EQ(seq.tokens[0], " Leonardo");
  EXPECT_EQ(seq.tokens[2], " Vinci");
}

TEST(ExtractAnswer, WorksWithoutTextOffsets) {
  TeacherRequest req{"Who?", "Leonardo da Vinci", std::nullopt, {}};
  const auto prompt = build_forced_prompt(req, {});
  const auto seq = extract_answer_logprobs(echo_response(prompt.full, false).dump(), prompt, req.answer);
  EXPECT_EQ(seq.size(), 3u);
}

TEST(ExtractAnswer, MissingLogprobs) {
  TeacherRequest req{"Who?", "Leo", std::nullopt, {}};
  const auto prompt = build_forced_prompt(req, {});
  try {
    extract_answer_logprobs(R"({"choices":[{"text":"x"}]})", prompt, req.answer);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingLogprobs);
  }
}

TEST(ExtractAnswer, AlignmentFailure) {
  TeacherRequest req{"Who?", "Leonardo", std::nullopt, {}};
  const auto prompt = build_forced_prompt(req, {});
  // The server tokenized a different text than the one we sent.
  const auto body = echo_response(prompt.prefix + "Raphael").dump();
  try {
    extract_answer_logprobs(body, prompt, req.answer);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTokenAlignment);
  }
}

TEST(ExtractAnswer, TokenStraddlingPromptIsRejected) {
  TeacherRequest req{"Who?", "Leonardo", std::nullopt, {}};
  auto opts = HttpClientOptions{};
  opts.prompt_template_no_doc = "Q: {query} A:{answer}";
  const auto prompt = build_forced_prompt(req, opts);
  // "A:Leonardo" arrives as one token.
  json lp{{"tokens", {"Q:", " Who?", " A:Leonardo"}}, {"token_logprobs", {nullptr, -1.0, -0.5}}, {"text_offset", {0, 2, 7}}};
  json body{{"choices", {json{{"logprobs", lp}}}}};
  EXPECT_THROW(extract_answer_logprobs(body.dump(), prompt, req.answer), Error);
}

TEST(FetchLogprobs, AgainstLocalServer) {
  FakeServer server;
  auto opts = fast_options();
  opts.api_key = "secret";
  opts.model = "teacher-7b";
  TeacherRequest req{"Who painted it?", "Leonardo da Vinci", "Painted by Leonardo.", {"img://a.png"}};
  const auto seq = fetch_logprobs(server.endpoint(), req, opts);
  EXPECT_EQ(seq.size(), 3u);
  EXPECT_EQ(server.last_auth, "Bearer secret");
  EXPECT_EQ(server.last_body["echo"], true);
  EXPECT_EQ(server.last_body["model"], "teacher-7b");
  EXPECT_EQ(server.last_body["attachments"], json::array({"img://a.png"}));
}

TEST(FetchLogprobs, RetriesServerErrors) {
  FakeServer server;
  server.failures_left = 2;
  TeacherRequest req{"Who?", "Leonardo", std::nullopt, {}};
  EXPECT_EQ(fetch_logprobs(server.endpoint(), req, fast_options()).size(), 1u);
  EXPECT_EQ(server.requests, 3);
}

TEST(FetchLogprobs, GivesUpAfterRetryCap) {
  FakeServer server;
  server.failures_left = 100;
  auto opts = fast_options();
  opts.max_retries = 2;
  TeacherRequest req{"Who?", "Leonardo", std::nullopt, {}};
  try {
    fetch_logprobs(server.endpoint(), req, opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNetwork);
  }
  EXPECT_EQ(server.requests, 3);
}

TEST(FetchLogprobs, ClientErrorIsNotRetried) {
  FakeServer server;
  server.status_override = 401;
  TeacherRequest req{"Who?", "Leonardo", std::nullopt, {}};
  EXPECT_THROW(fetch_logprobs(server.endpoint(), req, fast_options()), Error);
  EXPECT_EQ(server.requests, 1);
}

TEST(FetchLogprobs, UnreachableEndpoint) {
  auto opts = fast_options();
  opts.max_retries = 1;
  opts.timeout = std::chrono::milliseconds(300);
  TeacherRequest req{"Who?", "Leonardo", std::nullopt, {}};
  try {
    fetch_logprobs("http://127.0.0.1:1/v1/completions", req, opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNetwork);
  }
}

namespace {

class SlowTeacher final : public TeacherProvider {
 public:
  TokenLogProbSequence logprobs(std::string_view id, ContextVariant, const TeacherRequest& req) const override {
    const int now = ++active;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    --active;
    if (id == "boom") fail(ErrorCode::kNetwork, "refused");
    return mock_logprobs(req, {});
  }
  std::string fingerprint() const override { return "slow"; }
  mutable std::atomic<int> active{0};
  mutable std::atomic<int> peak{0};
};

}  // namespace

TEST(FetchBounded, RespectsInFlightLimitAndOrder) {
  SlowTeacher teacher;
  std::vector<FetchJob> jobs;
  for (int i = 0; i < 24; ++i) {
    jobs.push_back({"t" + std::to_string(i), ContextVariant::kWithDoc,
                    {"q", i % 2 ? "alpha beta" : "alpha", std::string("alpha"), {}}});
  }
  const auto out = fetch_bounded(teacher, jobs, 3);
  ASSERT_EQ(out.size(), jobs.size());
  for (std::size_t i = 0; i < jobs.size(); ++i) EXPECT_EQ(out[i].size(), i % 2 ? 2u : 1u);
  EXPECT_LE(teacher.peak.load(), 3);
}

TEST(FetchBounded, ErrorCarriesTripletId) {
  SlowTeacher teacher;
  std::vector<FetchJob> jobs{{"ok", ContextVariant::kWithDoc, {"q", "a", std::nullopt, {}}},
                             {"boom", ContextVariant::kWithDoc, {"q", "a", std::nullopt, {}}}};
  try {
    fetch_bounded(teacher, jobs, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNetwork);
    EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
  }
}
