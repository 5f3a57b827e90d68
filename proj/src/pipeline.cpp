#include "migrank/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"
#include "migrank/error.hpp"
#include "migrank/jsonl.hpp"
#include "migrank/text.hpp"

namespace migrank::pipeline {

void Corpus::validate() const {
  require(!documents.empty(), ErrorCode::kInvalidInput, "corpus is empty");
  for (const auto& [id, doc] : documents) {
    require(!id.empty(), ErrorCode::kInvalidInput, "corpus document has an empty id");
    require(!doc.text.empty(), ErrorCode::kInvalidInput, "corpus document '" + id + "' has empty text");
  }
}

Corpus Corpus::load(const std::filesystem::path& path) {
  Corpus corpus;
  jsonl::for_each(path, [&](std::size_t line_no, const nlohmann::json& j) {
    auto id = j.at("id").get<std::string>();
    Document doc{j.at("text").get<std::string>(), {}};
    if (j.contains("attachments")) doc.attachments = j.at("attachments").get<std::vector<std::string>>();
    if (!corpus.documents.emplace(id, std::move(doc)).second) {
      fail(ErrorCode::kInvalidInput, path.string() + ":" + std::to_string(line_no) + ": duplicate document id '" + id + "'");
    }
  });
  corpus.validate();
  return corpus;
}

bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) noexcept {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

namespace {

std::map<std::string, double> tfidf_vector(std::string_view text, const confidence::IdfTable& idf) {
  std::map<std::string, double> tf;
  for (const auto& t : text::tokenize(text)) tf[t] += 1.0;
  for (auto& [term, w] : tf) w *= idf.lookup(term);
  return tf;
}

double norm_of(const std::map<std::string, double>& v) {
  double s = 0.0;
  for (const auto& [_, w] : v) s += w * w;
  return std::sqrt(s);
}

std::vector<std::string> corpus_texts(const Corpus& corpus) {
  corpus.validate();
  std::vector<std::string> texts;
  texts.reserve(corpus.documents.size());
  for (const auto& [_, doc] : corpus.documents) texts.push_back(doc.text);
  return texts;
}

}  // namespace

TfidfRetriever::TfidfRetriever(const Corpus& corpus) : idf_(confidence::build_idf_table(corpus_texts(corpus))) {
  docs_.reserve(corpus.documents.size());
  for (const auto& [id, doc] : corpus.documents) {
    DocVector v{id, tfidf_vector(doc.text, idf_), 0.0};
    v.norm = norm_of(v.weights);
    docs_.push_back(std::move(v));
  }
}

RetrievalResult TfidfRetriever::retrieve(std::string_view query, std::size_t m) const {
  require(m >= 1, ErrorCode::kUsage, "candidate count m must be >= 1");
  const auto q = tfidf_vector(query, idf_);
  const double q_norm = norm_of(q);
  std::vector<ScoredDoc> scored;
  scored.reserve(docs_.size());
  for (const auto& d : docs_) {
    double dot = 0.0;
    for (const auto& [term, w] : q) {
      auto it = d.weights.find(term);
      if (it != d.weights.end()) dot += w * it->second;
    }
    const double cos = (q_norm == 0.0 || d.norm == 0.0) ? 0.0 : dot / (q_norm * d.norm);
    scored.push_back({d.id, cos});
  }
  return select_top_k(std::move(scored), m);
}

RetrievalResult tfidf_retrieve(std::string_view query, const Corpus& corpus, std::size_t m) {
  return TfidfRetriever(corpus).retrieve(query, m);
}

std::vector<ScoredDoc> select_top_k(std::vector<ScoredDoc> scored, std::size_t k) {
  const std::size_t keep = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), ranks_before);
  scored.resize(keep);
  return scored;
}

std::vector<ScoredDoc> rerank(const reranker::RerankerModel& model, std::string_view query,
                              const RetrievalResult& candidates, const Corpus& corpus, std::size_t k) {
  require(k >= 1, ErrorCode::kUsage, "rerank needs k >= 1");
  std::vector<ScoredDoc> scored;
  scored.reserve(candidates.size());
  std::set<std::string_view> seen;
  for (const auto& c : candidates) {
    if (!seen.insert(c.id).second) continue;
    auto it = corpus.documents.find(c.id);
    require(it != corpus.documents.end(), ErrorCode::kInvalidInput, "candidate '" + c.id + "' is not in the corpus");
    scored.push_back({c.id, model.score_text(query, it->second.text)});
  }
  return select_top_k(std::move(scored), k);
}

std::string assemble_context(std::string_view query, std::span<const ContextDoc> docs, const ContextTemplate& tpl) {
  std::string out;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto rank = std::to_string(i + 1);
    out += text::render_template(tpl.document_block, {{"rank", rank}, {"id", docs[i].id}, {"text", docs[i].text}});
  }
  out += text::render_template(tpl.query_block, {{"query", query}});
  return out;
}

std::optional<double> kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorCode::kInvalidInput, "kendall_tau_b: length mismatch");
  long long concordant = 0;
  long long discordant = 0;
  long long ties_x = 0;
  long long ties_y = 0;
  long long total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      ++total;
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0.0) ++ties_x;
      if (dy == 0.0) ++ties_y;
      if (dx == 0.0 || dy == 0.0) continue;
      ((dx > 0) == (dy > 0) ? concordant : discordant) += 1;
    }
  }
  const double denom = std::sqrt(static_cast<double>(total - ties_x) * static_cast<double>(total - ties_y));
  if (denom == 0.0) return std::nullopt;
  return static_cast<double>(concordant - discordant) / denom;
}

std::optional<double> ndcg_at_k(std::span<const RankedItem> items, std::size_t k) {
  std::vector<const RankedItem*> by_score;
  for (const auto& it : items) by_score.push_back(&it);
  std::sort(by_score.begin(), by_score.end(), [](const RankedItem* a, const RankedItem* b) {
    if (a->score != b->score) return a->score > b->score;
    return a->id < b->id;
  });
  std::vector<double> ideal;
  for (const auto& it : items) ideal.push_back(std::max(0.0, it.mig));
  std::sort(ideal.begin(), ideal.end(), std::greater<>());

  const std::size_t depth = std::min(k, items.size());
  double dcg = 0.0;
  double idcg = 0.0;
  for (std::size_t r = 0; r < depth; ++r) {
    const double discount = 1.0 / std::log2(static_cast<double>(r) + 2.0);
    dcg += std::max(0.0, by_score[r]->mig) * discount;
    idcg += ideal[r] * discount;
  }
  if (idcg <= 0.0) return std::nullopt;
  return std::min(1.0, dcg / idcg);
}

QueryMetrics evaluate_group(std::string query, std::span<const RankedItem> items, std::size_t ndcg_k) {
  QueryMetrics qm;
  qm.query = std::move(query);
  qm.documents = items.size();
  std::vector<double> scores;
  std::vector<double> migs;
  for (const auto& it : items) {
    scores.push_back(it.score);
    migs.push_back(it.mig);
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t j = i + 1; j < items.size(); ++j) {
      const double dm = migs[i] - migs[j];
      if (dm == 0.0) continue;
      ++qm.pairs;
      const double ds = scores[i] - scores[j];
      if (ds != 0.0 && (ds > 0) == (dm > 0)) ++qm.correct_pairs;
    }
  }
  qm.kendall_tau = kendall_tau_b(scores, migs);
  qm.ndcg = ndcg_at_k(items, ndcg_k);
  return qm;
}

EvaluationReport evaluate_groups(const std::map<std::string, std::vector<RankedItem>>& groups, std::size_t ndcg_k) {
  EvaluationReport report;
  std::size_t correct = 0;
  double tau_sum = 0.0;
  std::size_t tau_n = 0;
  double ndcg_sum = 0.0;
  std::size_t ndcg_n = 0;
  for (const auto& [query, items] : groups) {
    if (items.size() < 2) continue;
    auto qm = evaluate_group(query, items, ndcg_k);
    report.metrics.evaluated_pairs += qm.pairs;
    correct += qm.correct_pairs;
    if (qm.kendall_tau) {
      tau_sum += *qm.kendall_tau;
      ++tau_n;
    }
    if (qm.ndcg) {
      ndcg_sum += *qm.ndcg;
      ++ndcg_n;
    }
    report.per_query.push_back(std::move(qm));
  }
  if (report.metrics.evaluated_pairs == 0) {
    fail(ErrorCode::kInvalidInput, "no evaluable pairs: every query group has fewer than two documents or tied migs");
  }
  report.metrics.queries = report.per_query.size();
  report.metrics.pairwise_accuracy =
      static_cast<double>(correct) / static_cast<double>(report.metrics.evaluated_pairs);
  report.metrics.kendall_tau = tau_n ? tau_sum / static_cast<double>(tau_n) : 0.0;
  report.metrics.ndcg = ndcg_n ? ndcg_sum / static_cast<double>(ndcg_n) : 0.0;
  return report;
}

EvaluationReport eval_ranking(const reranker::RerankerModel& model, std::span<const mig::ScoredTriplet> scored,
                              std::size_t ndcg_k) {
  std::map<std::string, std::vector<RankedItem>> groups;
  for (const auto& s : scored) {
    groups[s.triplet.query].push_back({s.triplet.id, model.score_text(s.triplet.query, s.triplet.document), s.mig});
  }
  return evaluate_groups(groups, ndcg_k);
}

std::string metrics_json(const EvaluationReport& report) {
  nlohmann::ordered_json j;
  j["pairwise_accuracy"] = report.metrics.pairwise_accuracy;
  j["kendall_tau"] = report.metrics.kendall_tau;
  j["ndcg"] = report.metrics.ndcg;
  j["queries"] = report.metrics.queries;
  j["evaluated_pairs"] = report.metrics.evaluated_pairs;
  return j.dump(2);
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string opt_number(const std::optional<double>& v) { return v ? nlohmann::json(*v).dump() : ""; }

}  // namespace

std::string metrics_csv(const EvaluationReport& report) {
  std::string out = "query,documents,pairs,correct_pairs,pairwise_accuracy,kendall_tau,ndcg\n";
  for (const auto& q : report.per_query) {
    const std::optional<double> acc =
        q.pairs ? std::optional<double>(static_cast<double>(q.correct_pairs) / static_cast<double>(q.pairs))
                : std::nullopt;
    out += csv_field(q.query) + "," + std::to_string(q.documents) + "," + std::to_string(q.pairs) + "," +
           std::to_string(q.correct_pairs) + "," + opt_number(acc) + "," + opt_number(q.kendall_tau) + "," +
           opt_number(q.ndcg) + "\n";
  }
  return out;
}

}  // namespace migrank::pipeline
