#include "migrank/confidence.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "json.hpp"
#include "migrank/error.hpp"
#include "migrank/hashing.hpp"
#include "migrank/jsonl.hpp"
#include "migrank/text.hpp"

namespace migrank::confidence {

std::string_view to_string(Scale scale) noexcept {
  return scale == Scale::kProbability ? "probability" : "logprob";
}

Scale parse_scale(std::string_view name) {
  if (name == "probability") return Scale::kProbability;
  if (name == "logprob") return Scale::kLogprob;
  fail(ErrorCode::kParse, "unknown confidence scale '" + std::string(name) + "'");
}

IdfTable::IdfTable(std::map<std::string, double> idf, std::size_t corpus_doc_count)
    : idf_(idf.begin(), idf.end()), corpus_doc_count_(corpus_doc_count) {
  require(corpus_doc_count_ >= 1, ErrorCode::kInvalidInput, "idf table needs corpus_doc_count >= 1");
  for (const auto& [term, value] : idf_) {
    require(std::isfinite(value) && value >= 0.0, ErrorCode::kInvariant, "idf for '" + term + "' is negative");
    max_idf_ = std::max(max_idf_, value);
  }
}

double IdfTable::lookup(std::string_view term) const {
  auto it = idf_.find(term);
  return it == idf_.end() ? max_idf_ : it->second;
}

bool IdfTable::contains(std::string_view term) const { return idf_.find(term) != idf_.end(); }

void IdfTable::save(const std::filesystem::path& path) const {
  std::vector<nlohmann::ordered_json> records;
  records.reserve(idf_.size() + 1);
  records.push_back({{"corpus_doc_count", corpus_doc_count_}});
  for (const auto& [term, value] : idf_) records.push_back({{"term", term}, {"idf", value}});
  jsonl::write(path, records);
}

IdfTable IdfTable::load(const std::filesystem::path& path) {
  std::map<std::string, double> idf;
  std::size_t count = 0;
  bool have_header = false;
  jsonl::for_each(path, [&](std::size_t line_no, const nlohmann::json& j) {
    if (j.contains("corpus_doc_count")) {
      count = j.at("corpus_doc_count").get<std::size_t>();
      have_header = true;
      return;
    }
    const auto value = j.at("idf").get<double>();
    if (!(value >= 0.0)) {
      fail(ErrorCode::kInvariant, path.string() + ":" + std::to_string(line_no) + ": negative idf");
    }
    idf.emplace(j.at("term").get<std::string>(), value);
  });
  require(have_header, ErrorCode::kParse, path.string() + ": missing corpus_doc_count header");
  return IdfTable(std::move(idf), count);
}

IdfTable build_idf_table(std::span<const std::string> corpus) {
  require(!corpus.empty(), ErrorCode::kInvalidInput, "cannot build an idf table from an empty corpus");
  std::map<std::string, std::size_t> df;
  for (const auto& doc : corpus) {
    auto toks = text::tokenize(doc);
    std::set<std::string> unique(toks.begin(), toks.end());
    for (const auto& t : unique) ++df[t];
  }
  const double n = static_cast<double>(corpus.size());
  std::map<std::string, double> idf;
  for (const auto& [term, count] : df) {
    idf.emplace(term, std::log((1.0 + n) / (1.0 + static_cast<double>(count))));
  }
  return IdfTable(std::move(idf), corpus.size());
}

ConfidenceStrategy ConfidenceStrategy::equal() {
  ConfidenceStrategy s;
  s.kind = Kind::kEqual;
  return s;
}

ConfidenceStrategy ConfidenceStrategy::positional_with(PositionalParams params) {
  ConfidenceStrategy s;
  s.kind = Kind::kPositional;
  s.positional = params;
  return s;
}

ConfidenceStrategy ConfidenceStrategy::semantic_anchor(std::shared_ptr<const IdfTable> idf, double tau_freq) {
  ConfidenceStrategy s;
  s.kind = Kind::kSemanticAnchor;
  s.semantic.idf = std::move(idf);
  s.semantic.tau_freq = tau_freq;
  return s;
}

void ConfidenceStrategy::validate() const {
  switch (kind) {
    case Kind::kEqual:
      return;
    case Kind::kPositional:
      require(positional.k > 0.0 && positional.c > 0.0, ErrorCode::kInvalidInput,
              "positional strategy requires k > 0 and c > 0");
      require(positional.peak_mode == PeakMode::kMidpoint || positional.peak >= 1.0, ErrorCode::kInvalidInput,
              "positional strategy requires peak >= 1");
      return;
    case Kind::kSemanticAnchor:
      require(semantic.idf != nullptr, ErrorCode::kInvalidInput, "semantic_anchor strategy requires an idf table");
      require(semantic.tau_freq >= 0.0, ErrorCode::kInvalidInput, "tau_freq must be >= 0");
      return;
  }
}

std::string ConfidenceStrategy::fingerprint() const {
  nlohmann::ordered_json j;
  j["kind"] = std::string(to_string(kind));
  if (kind == Kind::kPositional) {
    j["k"] = positional.k;
    j["c"] = positional.c;
    j["peak"] = positional.peak_mode == PeakMode::kMidpoint ? nlohmann::ordered_json("midpoint")
                                                           : nlohmann::ordered_json(positional.peak);
    j["normalize"] = positional.normalize;
  } else if (kind == Kind::kSemanticAnchor) {
    j["tau_freq"] = semantic.tau_freq;
    std::string table;
    if (semantic.idf) {
      table += std::to_string(semantic.idf->corpus_doc_count());
      for (const auto& [term, value] : semantic.idf->terms()) {
        table += '\n' + term + '\t' + nlohmann::json(value).dump();
      }
    }
    j["idf"] = sha256_hex(table);
  }
  return sha256_hex(j.dump()).substr(0, 16);
}

std::string_view to_string(ConfidenceStrategy::Kind kind) noexcept {
  switch (kind) {
    case ConfidenceStrategy::Kind::kEqual: return "equal";
    case ConfidenceStrategy::Kind::kPositional: return "positional";
    case ConfidenceStrategy::Kind::kSemanticAnchor: return "semantic_anchor";
  }
  return "unknown";
}

ConfidenceStrategy::Kind parse_kind(std::string_view name) {
  if (name == "equal") return ConfidenceStrategy::Kind::kEqual;
  if (name == "positional") return ConfidenceStrategy::Kind::kPositional;
  if (name == "semantic_anchor") return ConfidenceStrategy::Kind::kSemanticAnchor;
  fail(ErrorCode::kConfig, "unknown confidence strategy '" + std::string(name) + "'");
}

std::vector<double> positional_weights(std::size_t n, double k, double c, double peak) {
  require(n >= 1, ErrorCode::kInvalidInput, "positional_weights needs n >= 1");
  require(k > 0.0 && c > 0.0, ErrorCode::kInvalidInput, "positional_weights needs k > 0 and c > 0");
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i + 1) - peak;
    w[i] = std::max(0.0, -k * d * d + c);
  }
  return w;
}

namespace {

// Keeps probability-scale values inside (0, 1] when the sum underflows.
double to_probability(double log_value) {
  return std::max(std::exp(log_value), std::numeric_limits<double>::denorm_min());
}

}  // namespace

double weighted_confidence(std::span<const double> logprobs, std::span<const double> weights) {
  require(logprobs.size() == weights.size(), ErrorCode::kInvalidInput, "weights and logprobs differ in length");
  double acc = 0.0;
  for (std::size_t i = 0; i < logprobs.size(); ++i) acc += weights[i] * logprobs[i];
  return to_probability(acc);
}

std::vector<std::uint8_t> semantic_mask(std::span<const std::string> tokens, const IdfTable& idf, double tau_freq) {
  std::vector<std::uint8_t> mask(tokens.size(), 0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto term = text::normalize_token(tokens[i]);
    if (term.empty()) continue;
    mask[i] = idf.lookup(term) > tau_freq ? 1 : 0;
  }
  return mask;
}

double anchored_mean_logprob(std::span<const double> logprobs, std::span<const std::uint8_t> mask,
                             bool* fell_back) {
  require(logprobs.size() == mask.size() && !logprobs.empty(), ErrorCode::kInvalidInput,
          "mask and logprobs must be nonempty and of equal length");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < logprobs.size(); ++i) {
    if (mask[i]) {
      sum += logprobs[i];
      ++count;
    }
  }
  if (fell_back) *fell_back = count == 0;
  if (count == 0) {
    for (double lp : logprobs) sum += lp;
    count = logprobs.size();
  }
  return sum / static_cast<double>(count);
}

ConfidenceDetail confidence_detail(const teacher::TokenLogProbSequence& seq, const ConfidenceStrategy& strategy) {
  seq.validate();
  strategy.validate();
  const std::span<const double> lp(seq.logprobs);
  ConfidenceDetail out;
  out.value.scale = strategy.scale();

  switch (strategy.kind) {
    case ConfidenceStrategy::Kind::kEqual: {
      double acc = 0.0;
      for (double v : lp) acc += v;
      out.value.value = to_probability(acc);
      break;
    }
    case ConfidenceStrategy::Kind::kPositional: {
      const auto& p = strategy.positional;
      const double peak =
          p.peak_mode == PeakMode::kMidpoint ? std::max(1.0, static_cast<double>(lp.size()) / 2.0) : p.peak;
      auto w = positional_weights(lp.size(), p.k, p.c, peak);
      double total = 0.0;
      for (double x : w) total += x;
      if (total == 0.0) {
        out.fell_back = true;
        std::fill(w.begin(), w.end(), 1.0);
      } else if (p.normalize) {
        for (double& x : w) x /= total;
      }
      out.value.value = weighted_confidence(lp, w);
      break;
    }
    case ConfidenceStrategy::Kind::kSemanticAnchor: {
      const auto mask = semantic_mask(seq.tokens, *strategy.semantic.idf, strategy.semantic.tau_freq);
      out.value.value = anchored_mean_logprob(lp, mask, &out.fell_back);
      break;
    }
  }
  return out;
}

ConfidenceValue confidence(const teacher::TokenLogProbSequence& seq, const ConfidenceStrategy& strategy) {
  const auto detail = confidence_detail(seq, strategy);
  if (detail.fell_back) {
    if (strategy.kind == ConfidenceStrategy::Kind::kPositional) {
      spdlog::warn("positional weights sum to zero for a {}-token answer; using equal weights", seq.size());
    } else {
      spdlog::warn("semantic mask selects no anchors in a {}-token answer; averaging all tokens", seq.size());
    }
  }
  return detail.value;
}

}  // namespace migrank::confidence
