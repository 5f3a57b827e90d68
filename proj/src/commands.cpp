#include "migrank/commands.hpp"

#include <spdlog/spdlog.h>

#include <cstdlib>
#include <map>
#include <set>

#include "json.hpp"
#include "migrank/error.hpp"
#include "migrank/jsonl.hpp"
#include "migrank/random.hpp"

namespace migrank::cli {

namespace {

std::string number(double v) { return nlohmann::json(v).dump(); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> unique_documents(std::span<const mig::Triplet> triplets) {
  std::set<std::string> docs;
  for (const auto& t : triplets) docs.insert(t.document);
  return {docs.begin(), docs.end()};
}

}  // namespace

std::unique_ptr<teacher::TeacherProvider> make_teacher(const AppConfig& cfg) {
  const auto& ts = cfg.teacher;
  if (ts.provider == "mock") return std::make_unique<teacher::MockTeacher>(ts.mock);
  if (ts.provider == "records") {
    if (ts.records_path.empty()) fail(ErrorCode::kConfig, "config key 'teacher.records_path' is required for records");
    return std::make_unique<teacher::RecordTeacher>(teacher::load_logprob_records(ts.records_path));
  }
  std::string endpoint = ts.endpoint;
  if (endpoint.empty()) {
    if (const char* env = std::getenv("MIGRANK_TEACHER_ENDPOINT")) endpoint = env;
  }
  if (endpoint.empty()) {
    fail(ErrorCode::kConfig, "config key 'teacher.endpoint' (or MIGRANK_TEACHER_ENDPOINT) is required for http");
  }
  auto opts = ts.http;
  opts.api_key = ts.api_key;
  if (opts.api_key.empty() && !ts.api_key_env.empty()) {
    if (const char* env = std::getenv(ts.api_key_env.c_str())) opts.api_key = env;
  }
  return std::make_unique<teacher::HttpTeacher>(endpoint, std::move(opts));
}

confidence::ConfidenceStrategy make_strategy(const AppConfig& cfg, const std::vector<std::string>& documents) {
  using Kind = confidence::ConfidenceStrategy::Kind;
  switch (cfg.confidence.kind) {
    case Kind::kEqual:
      return confidence::ConfidenceStrategy::equal();
    case Kind::kPositional:
      return confidence::ConfidenceStrategy::positional_with(cfg.confidence.positional);
    case Kind::kSemanticAnchor: {
      std::shared_ptr<const confidence::IdfTable> idf;
      if (!cfg.confidence.idf_path.empty()) {
        idf = std::make_shared<const confidence::IdfTable>(confidence::IdfTable::load(cfg.confidence.idf_path));
      } else {
        idf = std::make_shared<const confidence::IdfTable>(confidence::build_idf_table(documents));
      }
      return confidence::ConfidenceStrategy::semantic_anchor(std::move(idf), cfg.confidence.tau_freq);
    }
  }
  fail(ErrorCode::kConfig, "unknown confidence strategy");
}

TeachSummary cmd_teach(const AppConfig& cfg, const std::filesystem::path& triplets_path,
                       const std::filesystem::path& out_path, std::ostream& log) {
  const auto triplets = mig::load_triplets(triplets_path);
  const auto provider = make_teacher(cfg);
  const teacher::LogprobCache cache(cfg.cache_dir);
  const auto fingerprint = provider->fingerprint();

  struct Slot {
    std::string cache_key;
    std::optional<teacher::TokenLogProbSequence> seq;
  };
  std::vector<Slot> slots;
  std::vector<teacher::FetchJob> jobs;
  std::vector<std::size_t> job_slot;
  std::map<std::pair<std::string, std::string>, std::size_t> baseline_slot;
  // Per triplet: slot of its with_doc and without_doc sequences.
  std::vector<std::pair<std::size_t, std::size_t>> triplet_slots;

  TeachSummary summary;
  auto add_slot = [&](const std::string& id, teacher::ContextVariant variant, teacher::TeacherRequest request) {
    Slot slot{teacher::LogprobCache::key(id, variant, fingerprint, request), std::nullopt};
    slot.seq = cache.get(slot.cache_key);
    if (slot.seq) {
      ++summary.cached;
    } else {
      job_slot.push_back(slots.size());
      jobs.push_back({id, variant, std::move(request)});
    }
    slots.push_back(std::move(slot));
    return slots.size() - 1;
  };

  for (const auto& t : triplets) {
    const auto with = add_slot(t.id, teacher::ContextVariant::kWithDoc, t.request());
    const auto key = std::make_pair(t.query, t.answer);
    auto it = baseline_slot.find(key);
    if (it == baseline_slot.end()) {
      auto req = t.request();
      req.document.reset();
      it = baseline_slot.emplace(key, add_slot(t.id, teacher::ContextVariant::kWithoutDoc, std::move(req))).first;
    }
    triplet_slots.emplace_back(with, it->second);
  }

  const std::size_t in_flight = cfg.teacher.provider == "http" ? cfg.teacher.http.max_in_flight : cfg.jobs;
  auto fetched = teacher::fetch_bounded(*provider, jobs, in_flight);
  for (std::size_t i = 0; i < fetched.size(); ++i) {
    auto& slot = slots[job_slot[i]];
    cache.put(slot.cache_key, fetched[i]);
    slot.seq = std::move(fetched[i]);
  }
  summary.fetched = fetched.size();

  std::vector<teacher::LogprobRecord> records;
  records.reserve(triplets.size() * 2);
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    records.push_back({triplets[i].id, teacher::ContextVariant::kWithDoc, *slots[triplet_slots[i].first].seq});
    records.push_back({triplets[i].id, teacher::ContextVariant::kWithoutDoc, *slots[triplet_slots[i].second].seq});
  }
  teacher::write_logprob_records(out_path, records);
  summary.records = records.size();
  log << "teach: " << summary.records << " records (" << summary.fetched << " fetched, " << summary.cached
      << " from cache) -> " << out_path.string() << "\n";
  return summary;
}

void cmd_score(const AppConfig& cfg, const std::filesystem::path& triplets_path,
               const std::optional<std::filesystem::path>& logprobs_path, const std::filesystem::path& out_path,
               std::ostream& log) {
  const auto triplets = mig::load_triplets(triplets_path);
  const auto strategy = make_strategy(cfg, unique_documents(triplets));

  std::vector<mig::ScoredTriplet> scored;
  if (logprobs_path) {
    const teacher::RecordTeacher records(teacher::load_logprob_records(*logprobs_path));
    scored = mig::compute_mig_all(triplets, records, strategy, cfg.jobs);
  } else {
    const auto provider = make_teacher(cfg);
    const teacher::LogprobCache cache(cfg.cache_dir);
    const teacher::CachingTeacher cached(*provider, cache);
    scored = mig::compute_mig_all(triplets, cached, strategy, cfg.jobs);
  }
  mig::write_scored(out_path, scored);
  log << "score: " << scored.size() << " triplets (" << confidence::to_string(strategy.kind) << ", "
      << confidence::to_string(strategy.scale()) << " scale) -> " << out_path.string() << "\n";
}

mig::DatasetStats cmd_build_dataset(const AppConfig& cfg, const std::filesystem::path& scored_path,
                                    const std::filesystem::path& out_path, std::ostream& out) {
  const auto scored = mig::load_scored(scored_path);
  const auto dataset = mig::build_dataset(scored, cfg.labeling.thresholds, cfg.seed, cfg.labeling.balance);
  mig::write_labeled(out_path, dataset.examples);
  const auto stats = mig::dataset_stats(dataset, cfg.labeling.histogram_bin_width);

  nlohmann::ordered_json j;
  j["input"] = scored.size();
  j["raw_positives"] = dataset.raw_positives;
  j["raw_negatives"] = dataset.raw_negatives;
  j["neutral"] = dataset.neutral;
  j["positives"] = stats.positives;
  j["negatives"] = stats.negatives;
  j["discarded"] = stats.discarded;
  auto hist = nlohmann::ordered_json::array();
  for (const auto& [bin, count] : stats.histogram.counts) {
    hist.push_back({{"lo", static_cast<double>(bin) * stats.histogram.bin_width},
                    {"hi", static_cast<double>(bin + 1) * stats.histogram.bin_width},
                    {"count", count}});
  }
  j["mig_histogram"] = hist;
  out << j.dump(2) << "\n";
  return stats;
}

reranker::TrainResult cmd_train(const AppConfig& cfg, const std::filesystem::path& dataset_path,
                                const std::filesystem::path& model_path,
                                const std::optional<std::filesystem::path>& history_path, std::ostream& log) {
  const auto examples = mig::load_labeled(dataset_path);
  auto result = reranker::train(examples, cfg.train);
  result.model.save(model_path);
  const auto history_file = history_path.value_or(std::filesystem::path(model_path.string() + ".history.csv"));
  reranker::write_history_csv(history_file, result.history);
  const auto& last = result.history.back();
  log << "train: " << examples.size() << " examples, " << result.history.size() << " epochs, final loss "
      << number(last.total) << " (ce " << number(last.ce) << ", rank " << number(last.rank) << ") -> "
      << model_path.string() << " [" << result.model.content_hash().substr(0, 16) << "]\n";
  return result;
}

void cmd_rerank(const AppConfig& cfg, const std::filesystem::path& model_path, const std::filesystem::path& corpus_path,
                const std::string& query, std::size_t k, std::ostream& out) {
  if (k < 1) fail(ErrorCode::kUsage, "k must be >= 1");
  if (query.empty()) fail(ErrorCode::kUsage, "query must be nonempty");
  const auto model = reranker::RerankerModel::load(model_path);
  const auto corpus = pipeline::Corpus::load(corpus_path);
  const auto candidates = pipeline::tfidf_retrieve(query, corpus, cfg.pipeline.candidates);
  const auto top = pipeline::rerank(model, query, candidates, corpus, k);

  std::vector<pipeline::ContextDoc> docs;
  out << "rank\tid\tscore\n";
  for (std::size_t i = 0; i < top.size(); ++i) {
    out << (i + 1) << "\t" << top[i].id << "\t" << number(top[i].score) << "\n";
    docs.push_back({top[i].id, corpus.documents.at(top[i].id).text});
  }
  out << "\n" << pipeline::assemble_context(query, docs, cfg.pipeline.context) << "\n";
}

pipeline::EvaluationReport cmd_eval(const AppConfig& cfg, const std::filesystem::path& model_path,
                                    const std::filesystem::path& scored_path,
                                    const std::optional<std::filesystem::path>& csv_path, std::ostream& out) {
  const auto model = reranker::RerankerModel::load(model_path);
  const auto scored = mig::load_scored(scored_path);
  auto report = pipeline::eval_ranking(model, scored, cfg.pipeline.eval_k);
  out << pipeline::metrics_json(report) << "\n";
  if (csv_path) jsonl::write_file(*csv_path, pipeline::metrics_csv(report));
  return report;
}

std::string sweep_condition(double alpha) {
  if (alpha == 1.0) return "CE Loss";
  if (alpha == 0.0) return "RankNet Loss";
  return "Multi-Loss";
}

std::vector<SweepRow> cmd_sweep(const AppConfig& cfg, const std::filesystem::path& scored_path,
                                const std::vector<double>& alphas, const std::vector<double>& taus,
                                const std::optional<std::filesystem::path>& out_path, std::ostream& out) {
  if (alphas.empty() || taus.empty()) fail(ErrorCode::kUsage, "sweep needs at least one alpha and one tau");
  for (double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) fail(ErrorCode::kUsage, "sweep alpha " + number(a) + " is outside [0, 1]");
  }
  for (double t : taus) {
    if (!(t > 0.0)) fail(ErrorCode::kUsage, "sweep tau " + number(t) + " must be > 0");
  }
  const auto scored = mig::load_scored(scored_path);

  std::set<std::string> query_set;
  for (const auto& s : scored) query_set.insert(s.triplet.query);
  std::vector<std::string> queries(query_set.begin(), query_set.end());
  Rng rng(derive_seed(cfg.seed, 77));
  rng.shuffle(queries);
  auto holdout_count = static_cast<std::size_t>(std::llround(cfg.sweep.holdout_fraction * queries.size()));
  holdout_count = std::clamp<std::size_t>(holdout_count, 1, queries.size() > 1 ? queries.size() - 1 : 1);
  const std::set<std::string> holdout(queries.begin(), queries.begin() + static_cast<std::ptrdiff_t>(holdout_count));

  std::vector<mig::ScoredTriplet> train_split;
  std::vector<mig::ScoredTriplet> eval_split;
  for (const auto& s : scored) (holdout.count(s.triplet.query) ? eval_split : train_split).push_back(s);

  std::vector<SweepRow> rows;
  for (double tau : taus) {
    mig::LabelingConfig labeling{tau, -tau};
    std::optional<mig::LabeledDataset> dataset;
    std::string dataset_error;
    try {
      dataset = mig::build_dataset(train_split, labeling, cfg.seed, cfg.labeling.balance);
    } catch (const Error& e) {
      dataset_error = e.what();
    }
    for (double alpha : alphas) {
      SweepRow row;
      row.alpha = alpha;
      row.tau = tau;
      row.condition = sweep_condition(alpha);
      if (!dataset) {
        row.error = dataset_error;
        rows.push_back(row);
        continue;
      }
      try {
        auto tc = cfg.train;
        tc.alpha = alpha;
        auto result = reranker::train(dataset->examples, tc);
        row.train_examples = dataset->examples.size();
        row.final_loss = result.history.back().total;
        row.metrics = pipeline::eval_ranking(result.model, eval_split, cfg.pipeline.eval_k).metrics;
        row.model_hash = result.model.content_hash();
        row.ok = true;
      } catch (const Error& e) {
        row.error = e.what();
      }
      rows.push_back(row);
    }
  }

  const auto csv = sweep_csv(rows);
  if (out_path) jsonl::write_file(*out_path, csv);
  out << csv;
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out =
      "alpha,tau,condition,status,train_examples,final_loss,pairwise_accuracy,kendall_tau,ndcg,model_hash,error\n";
  for (const auto& r : rows) {
    out += number(r.alpha) + "," + number(r.tau) + "," + r.condition + ",";
    if (r.ok) {
      out += "ok," + std::to_string(r.train_examples) + "," + number(r.final_loss) + "," +
             number(r.metrics.pairwise_accuracy) + "," + number(r.metrics.kendall_tau) + "," +
             number(r.metrics.ndcg) + "," + r.model_hash + ",\n";
    } else {
      out += "error,,,,,,," + csv_field(r.error) + "\n";
    }
  }
  return out;
}

}  // namespace migrank::cli
