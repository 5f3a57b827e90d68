#include "migrank/config.hpp"

#include <cmath>
#include <set>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include "toml.hpp"

#include "migrank/error.hpp"
#include "migrank/jsonl.hpp"

namespace migrank::cli {

namespace {

class Reader {
 public:
  Reader(const toml::table& table, std::string prefix) : table_(table), prefix_(std::move(prefix)) {}

  // Rejects keys outside `allowed`.
  void only(const std::set<std::string>& allowed) const {
    for (const auto& [key, _] : table_) {
      if (!allowed.count(std::string(key.str()))) fail(ErrorCode::kConfig, "unknown config key '" + name(key.str()) + "'");
    }
  }

  std::optional<Reader> sub(std::string_view key) const {
    const auto* node = table_.get(key);
    if (!node) return std::nullopt;
    const auto* t = node->as_table();
    if (!t) fail(ErrorCode::kConfig, "config key '" + name(key) + "' must be a table");
    return Reader(*t, name(key));
  }

  void read(std::string_view key, double& out) const {
    const auto* node = table_.get(key);
    if (!node) return;
    if (auto v = node->as_floating_point()) {
      out = v->get();
    } else if (auto i = node->as_integer()) {
      out = static_cast<double>(i->get());
    } else {
      fail(ErrorCode::kConfig, "config key '" + name(key) + "' must be a number");
    }
    if (!std::isfinite(out)) fail(ErrorCode::kConfig, "config key '" + name(key) + "' must be finite");
  }

  template <typename Int>
    requires std::is_integral_v<Int>
  void read(std::string_view key, Int& out) const {
    const auto* node = table_.get(key);
    if (!node) return;
    const auto* i = node->as_integer();
    if (!i) fail(ErrorCode::kConfig, "config key '" + name(key) + "' must be an integer");
    if (std::is_unsigned_v<Int> && i->get() < 0) {
      fail(ErrorCode::kConfig, "config key '" + name(key) + "' must be nonnegative");
    }
    out = static_cast<Int>(i->get());
  }

  void read(std::string_view key, bool& out) const {
    const auto* node = table_.get(key);
    if (!node) return;
    const auto* b = node->as_boolean();
    if (!b) fail(ErrorCode::kConfig, "config key '" + name(key) + "' must be a boolean");
    out = b->get();
  }

  void read(std::string_view key, std::string& out) const {
    const auto* node = table_.get(key);
    if (!node) return;
    const auto* s = node->as_string();
    if (!s) fail(ErrorCode::kConfig, "config key '" + name(key) + "' must be a string");
    out = s->get();
  }

  bool has(std::string_view key) const { return table_.get(key) != nullptr; }
  const toml::node* node(std::string_view key) const { return table_.get(key); }

  std::string name(std::string_view key) const {
    return prefix_.empty() ? std::string(key) : prefix_ + "." + std::string(key);
  }

 private:
  const toml::table& table_;
  std::string prefix_;
};

// Re-raises parse-level failures from enum parsers as config errors naming
// the key.
template <typename F>
auto with_key(const Reader& r, std::string_view key, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    fail(ErrorCode::kConfig, "config key '" + r.name(key) + "': " + e.what());
  }
}

void apply_override(toml::table& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    fail(ErrorCode::kConfig, "override '" + assignment + "' must look like section.key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  if (path == "teacher.api_key") {
    fail(ErrorCode::kUsage, "teacher.api_key cannot be set from the command line; use the config file or " +
                                std::string("the variable named by teacher.api_key_env"));
  }

  toml::table parsed;
  try {
    parsed = toml::parse("v = " + raw);
  } catch (const toml::parse_error&) {
    parsed = toml::table{{"v", raw}};
  }

  toml::table* cursor = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) fail(ErrorCode::kConfig, "override key '" + path + "' has an empty component");
    if (dot == std::string::npos) {
      parsed["v"].node()->visit([&](auto& value) { cursor->insert_or_assign(part, value); });
      return;
    }
    auto* next = cursor->get_as<toml::table>(part);
    if (!next) {
      cursor->insert_or_assign(part, toml::table{});
      next = cursor->get_as<toml::table>(part);
    }
    cursor = next;
    start = dot + 1;
  }
}

AppConfig from_table(const toml::table& root) {
  AppConfig cfg;
  const Reader top(root, "");
  top.only({"seed", "jobs", "log_level", "teacher", "confidence", "labeling", "train", "pipeline", "sweep", "paths"});
  top.read("seed", cfg.seed);
  top.read("jobs", cfg.jobs);
  top.read("log_level", cfg.log_level);

  if (auto t = top.sub("teacher")) {
    t->only({"provider", "endpoint", "model", "api_key", "api_key_env", "records_path", "prompt_template",
             "prompt_template_no_doc", "timeout_ms", "max_retries", "backoff_initial_ms", "backoff_max_ms",
             "max_tokens", "max_in_flight", "mock"});
    auto& ts = cfg.teacher;
    t->read("provider", ts.provider);
    t->read("endpoint", ts.endpoint);
    t->read("model", ts.http.model);
    t->read("api_key", ts.api_key);
    t->read("api_key_env", ts.api_key_env);
    t->read("records_path", ts.records_path);
    t->read("prompt_template", ts.http.prompt_template);
    t->read("prompt_template_no_doc", ts.http.prompt_template_no_doc);
    long long timeout_ms = ts.http.timeout.count();
    long long backoff_initial = ts.http.backoff_initial.count();
    long long backoff_max = ts.http.backoff_max.count();
    t->read("timeout_ms", timeout_ms);
    t->read("backoff_initial_ms", backoff_initial);
    t->read("backoff_max_ms", backoff_max);
    ts.http.timeout = std::chrono::milliseconds(timeout_ms);
    ts.http.backoff_initial = std::chrono::milliseconds(backoff_initial);
    ts.http.backoff_max = std::chrono::milliseconds(backoff_max);
    t->read("max_retries", ts.http.max_retries);
    t->read("max_tokens", ts.http.max_tokens);
    t->read("max_in_flight", ts.http.max_in_flight);
    if (auto m = t->sub("mock")) {
      m->only({"a0", "a1", "a2", "epsilon"});
      m->read("a0", ts.mock.a0);
      m->read("a1", ts.mock.a1);
      m->read("a2", ts.mock.a2);
      m->read("epsilon", ts.mock.epsilon);
    }
  }

  if (auto c = top.sub("confidence")) {
    c->only({"strategy", "k", "c", "peak", "normalize", "tau_freq", "idf_path"});
    std::string strategy;
    c->read("strategy", strategy);
    if (!strategy.empty()) cfg.confidence.kind = with_key(*c, "strategy", [&] { return confidence::parse_kind(strategy); });
    c->read("k", cfg.confidence.positional.k);
    c->read("c", cfg.confidence.positional.c);
    if (const auto* peak = c->node("peak")) {
      if (const auto* s = peak->as_string()) {
        if (s->get() != "midpoint") fail(ErrorCode::kConfig, "config key 'confidence.peak' must be a number or \"midpoint\"");
        cfg.confidence.positional.peak_mode = confidence::PeakMode::kMidpoint;
      } else {
        c->read("peak", cfg.confidence.positional.peak);
        cfg.confidence.positional.peak_mode = confidence::PeakMode::kFixed;
      }
    }
    c->read("normalize", cfg.confidence.positional.normalize);
    c->read("tau_freq", cfg.confidence.tau_freq);
    c->read("idf_path", cfg.confidence.idf_path);
  }

  if (auto l = top.sub("labeling")) {
    l->only({"b1", "b2", "balance", "histogram_bin_width"});
    l->read("b1", cfg.labeling.thresholds.b1);
    l->read("b2", cfg.labeling.thresholds.b2);
    l->read("balance", cfg.labeling.balance);
    l->read("histogram_bin_width", cfg.labeling.histogram_bin_width);
  }

  if (auto t = top.sub("train")) {
    t->only({"alpha", "sigma", "learning_rate", "epochs", "batch_size", "pair_cap", "optimizer", "architecture",
             "hidden_units", "pair_policy", "mig_margin", "rank_reduction"});
    auto& tc = cfg.train;
    t->read("alpha", tc.alpha);
    t->read("sigma", tc.sigma);
    t->read("learning_rate", tc.learning_rate);
    t->read("epochs", tc.epochs);
    t->read("batch_size", tc.batch_size);
    t->read("pair_cap", tc.pair_cap);
    t->read("hidden_units", tc.hidden_units);
    t->read("mig_margin", tc.mig_margin);
    std::string s;
    if (t->has("optimizer")) {
      t->read("optimizer", s);
      tc.optimizer = with_key(*t, "optimizer", [&] { return reranker::parse_optimizer(s); });
    }
    if (t->has("architecture")) {
      t->read("architecture", s);
      tc.architecture = with_key(*t, "architecture", [&] { return reranker::parse_architecture(s); });
    }
    if (t->has("pair_policy")) {
      t->read("pair_policy", s);
      tc.pair_policy = with_key(*t, "pair_policy", [&] { return reranker::parse_pair_policy(s); });
    }
    if (t->has("rank_reduction")) {
      t->read("rank_reduction", s);
      if (s == "sum") {
        tc.rank_reduction = reranker::Reduction::kSum;
      } else if (s == "mean") {
        tc.rank_reduction = reranker::Reduction::kMean;
      } else {
        fail(ErrorCode::kConfig, "config key 'train.rank_reduction' must be \"sum\" or \"mean\"");
      }
    }
  }

  if (auto p = top.sub("pipeline")) {
    p->only({"candidates", "top_k", "eval_k", "document_block", "query_block"});
    p->read("candidates", cfg.pipeline.candidates);
    p->read("top_k", cfg.pipeline.top_k);
    p->read("eval_k", cfg.pipeline.eval_k);
    p->read("document_block", cfg.pipeline.context.document_block);
    p->read("query_block", cfg.pipeline.context.query_block);
  }

  if (auto s = top.sub("sweep")) {
    s->only({"holdout_fraction"});
    s->read("holdout_fraction", cfg.sweep.holdout_fraction);
  }

  if (auto p = top.sub("paths")) {
    p->only({"cache_dir"});
    p->read("cache_dir", cfg.cache_dir);
  }

  cfg.train.seed = cfg.seed;
  return cfg;
}

}  // namespace

void AppConfig::validate() const {
  auto check = [](bool ok, const std::string& key, const std::string& what) {
    if (!ok) fail(ErrorCode::kConfig, "config key '" + key + "' " + what);
  };
  check(teacher.provider == "mock" || teacher.provider == "http" || teacher.provider == "records", "teacher.provider",
        "must be one of mock, http, records");
  check(teacher.mock.epsilon > 0.0 && teacher.mock.epsilon < 0.5, "teacher.mock.epsilon", "must lie in (0, 0.5)");
  check(teacher.http.max_in_flight >= 1, "teacher.max_in_flight", "must be >= 1");
  check(teacher.http.max_retries >= 0, "teacher.max_retries", "must be >= 0");
  check(teacher.http.prompt_template.find("{answer}") != std::string::npos, "teacher.prompt_template",
        "must contain {answer}");
  check(teacher.http.prompt_template_no_doc.find("{answer}") != std::string::npos, "teacher.prompt_template_no_doc",
        "must contain {answer}");
  check(confidence.positional.k > 0.0, "confidence.k", "must be > 0");
  check(confidence.positional.c > 0.0, "confidence.c", "must be > 0");
  check(confidence.positional.peak_mode == confidence::PeakMode::kMidpoint || confidence.positional.peak >= 1.0,
        "confidence.peak", "must be >= 1");
  check(confidence.tau_freq >= 0.0, "confidence.tau_freq", "must be >= 0");
  check(labeling.thresholds.b1 > labeling.thresholds.b2, "labeling.b1", "must be greater than labeling.b2");
  check(labeling.histogram_bin_width > 0.0, "labeling.histogram_bin_width", "must be > 0");
  check(pipeline.candidates >= 1, "pipeline.candidates", "must be >= 1");
  check(pipeline.top_k >= 1, "pipeline.top_k", "must be >= 1");
  check(pipeline.eval_k >= 1, "pipeline.eval_k", "must be >= 1");
  check(sweep.holdout_fraction > 0.0 && sweep.holdout_fraction < 1.0, "sweep.holdout_fraction", "must lie in (0, 1)");
  check(jobs >= 1, "jobs", "must be >= 1");
  train.validate();
}

AppConfig parse_config(std::string_view toml_text, const std::vector<std::string>& overrides) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream ss;
    ss << "invalid TOML: " << e.description() << " at line " << e.source().begin.line;
    fail(ErrorCode::kConfig, ss.str());
  }
  for (const auto& o : overrides) apply_override(root, o);
  auto cfg = from_table(root);
  cfg.validate();
  return cfg;
}

AppConfig load_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides) {
  if (!path) return parse_config("", overrides);
  std::string text;
  try {
    text = jsonl::read_file(*path);
  } catch (const Error& e) {
    fail(ErrorCode::kConfig, "cannot read config file " + path->string());
  }
  try {
    return parse_config(text, overrides);
  } catch (const Error& e) {
    throw Error(e.code(), path->string() + ": " + e.what());
  }
}

}  // namespace migrank::cli
