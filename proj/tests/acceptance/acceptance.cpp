// Acceptance checks. One PASS/FAIL line per criterion; exit status 1 if any
// criterion fails.

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <string>

#include "migrank/commands.hpp"
#include "migrank/confidence.hpp"
#include "migrank/losses.hpp"
#include "migrank/mig.hpp"
#include "migrank/pipeline.hpp"
#include "migrank/random.hpp"
#include "migrank/trainer.hpp"
#include "synthetic.hpp"

namespace fs = std::filesystem;
using namespace migrank;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream ss;
  ss.precision(precision);
  ss << v;
  return ss.str();
}

Outcome weight_formula() {
  const std::array<double, 8> expected{0, 0, 0.7, 1.3, 1.5, 1.3, 0.7, 0};
  const auto t0 = Clock::now();
  const auto w = confidence::positional_weights(8, 0.2, 1.5, 5);
  const double elapsed = seconds_since(t0);
  double worst = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) worst = std::max(worst, std::abs(w[i] - expected[i]));
  const bool ok = w.size() == 8 && worst <= 1e-12 && elapsed < 1e-3;
  return {ok, "max abs err " + fmt(worst) + ", " + fmt(elapsed * 1e6) + " us"};
}

Outcome loss_identities() {
  using namespace reranker;
  const double ln2 = std::log(2.0);
  const double rank0 = ranknet_pair_loss(0.0, 1.0);
  const std::vector<double> p{0.5};
  const std::vector<int> y{1};
  const double ce = ce_loss(p, y);
  bool endpoints = true;
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(0, 5), b = rng.uniform(0, 50);
    endpoints = endpoints && hybrid_loss(1.0, a, b) == a && hybrid_loss(0.0, a, b) == b;
  }
  const bool ok = std::abs(rank0 - ln2) <= 1e-12 && std::abs(ce - ln2) <= 1e-12 && endpoints;
  return {ok, "ranknet(0)-ln2 " + fmt(rank0 - ln2) + ", ce(0.5,1)-ln2 " + fmt(ce - ln2) +
                  ", hybrid endpoints bit-equal " + (endpoints ? "yes" : "no")};
}

// Central differences carry roundoff of order eps * |L| / h. Components whose
// analytic/numeric gap is inside that bound (true gradient zero, e.g. the bias
// weight under a pure pairwise loss) are counted separately instead of being
// divided by a near-zero magnitude.
double fd_roundoff_bound(double loss, double step) {
  return 8.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(loss)) / step;
}

Outcome gradient_check() {
  using namespace reranker;
  const auto t0 = Clock::now();
  Rng rng(20240611);
  std::size_t instances = 0;
  std::size_t components = 0;
  std::size_t at_roundoff = 0;
  double worst = 0;
  std::string worst_where;
  const std::array<double, 4> alphas{0.0, 0.5, 0.74, 1.0};
  for (int rep = 0; rep < 13; ++rep) {
    for (auto arch : {Architecture::kLinear, Architecture::kMlp}) {
      for (double alpha : alphas) {
        const std::size_t hidden = 1 + rng.uniform_index(6);
        auto model = synthetic::random_model(arch, hidden, rng.next(), 0.6);
        const std::size_t n = 2 + rng.uniform_index(9);
        std::vector<std::vector<double>> f(n, std::vector<double>(kBuiltinFeatureCount));
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j + 1 < kBuiltinFeatureCount; ++j) f[i][j] = rng.uniform(-1.5, 1.5);
          f[i].back() = 1.0;
          labels[i] = static_cast<int>(rng.uniform_index(2));
        }
        labels[0] = 1;
        labels[1] = 0;
        std::vector<RankPair> pairs;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            if (labels[i] == 1 && labels[j] == 0) pairs.push_back({"q", i, j});
          }
        }
        TrainConfig cfg;
        cfg.alpha = alpha;
        cfg.sigma = rng.uniform(0.5, 2.0);
        const ObjectiveInput in{f, labels, pairs};
        const auto analytic_result = gradients(model, in, cfg);
        const auto& analytic = analytic_result.grad;
        const double bound = fd_roundoff_bound(analytic_result.loss.total, 1e-5);
        auto params = model.parameters();
        for (std::size_t k = 0; k < params.size(); ++k) {
          const double orig = params[k];
          params[k] = orig + 1e-5;
          const double up = hybrid_objective(model, in, cfg).total;
          params[k] = orig - 1e-5;
          const double down = hybrid_objective(model, in, cfg).total;
          params[k] = orig;
          const double numeric = (up - down) / 2e-5;
          ++components;
          const double gap = std::abs(analytic[k] - numeric);
          const double scale = std::max(std::abs(analytic[k]), std::abs(numeric));
          const double rel = scale > 0 ? gap / scale : 0.0;
          if (rel >= 1e-4 && gap <= bound) {
            ++at_roundoff;
            continue;
          }
          if (rel > worst) {
            worst = rel;
            worst_where = std::string(to_string(arch)) + " alpha=" + fmt(alpha) + " param " + std::to_string(k);
          }
        }
        ++instances;
      }
    }
  }
  const double elapsed = seconds_since(t0);
  const bool ok = instances >= 100 && worst < 1e-4 && elapsed < 30.0;
  return {ok, std::to_string(instances) + " instances, " + std::to_string(components) + " components (" +
                  std::to_string(at_roundoff) + " near-zero, gap within fd roundoff), max rel err " + fmt(worst) + " (" +
                  worst_where + "), " + fmt(elapsed) + " s"};
}

Outcome labeling_oracle() {
  const auto migs = synthetic::synthetic_migs(10000, 4242);
  std::vector<mig::ScoredTriplet> scored;
  scored.reserve(migs.size());
  char id[32];
  for (std::size_t i = 0; i < migs.size(); ++i) {
    std::snprintf(id, sizeof id, "m%05zu", i);
    scored.push_back(mig::make_scored({id, "q", "a", "d", {}}, {migs[i], confidence::Scale::kLogprob},
                                      {0.0, confidence::Scale::kLogprob}));
  }
  std::size_t pos = 0, neg = 0, neutral = 0;
  for (double m : migs) {
    if (m > 0.2) {
      ++pos;
    } else if (m < -0.2) {
      ++neg;
    } else {
      ++neutral;
    }
  }
  const auto ds = mig::build_dataset(scored, {}, 7);
  std::size_t out_pos = 0, out_neg = 0;
  for (const auto& e : ds.examples) (e.label ? out_pos : out_neg)++;
  const auto stats = mig::dataset_stats(ds);
  const std::size_t minority = std::min(pos, neg);
  const bool ok = ds.raw_positives == pos && ds.raw_negatives == neg && ds.neutral == neutral &&
                  out_pos == minority && out_neg == minority && stats.discarded == migs.size() - 2 * minority;
  return {ok, "pos/neg/neutral " + std::to_string(pos) + "/" + std::to_string(neg) + "/" + std::to_string(neutral) +
                  ", balanced " + std::to_string(ds.examples.size())};
}

Outcome mig_separation() {
  const auto t0 = Clock::now();
  const auto cases = synthetic::separation_corpus(1000, 31337);
  const teacher::MockTeacher teacher;
  const auto strategy = confidence::ConfidenceStrategy::positional_with({});
  std::size_t wins = 0;
  for (const auto& c : cases) {
    const auto rel = mig::compute_mig(c.relevant, teacher, strategy);
    const auto irr = mig::compute_mig(c.irrelevant, teacher, strategy);
    wins += rel.mig > irr.mig;
  }
  const double frac = static_cast<double>(wins) / static_cast<double>(cases.size());
  const double elapsed = seconds_since(t0);
  return {frac >= 0.95 && elapsed < 10.0,
          std::to_string(wins) + "/" + std::to_string(cases.size()) + " strictly greater, " + fmt(elapsed) + " s"};
}

Outcome training_convergence() {
  const auto t0 = Clock::now();
  const auto all = synthetic::separable_scored(500, 3, 99);
  // Hold out the last 100 queries.
  std::vector<mig::ScoredTriplet> train_split(all.begin(), all.begin() + 400 * 4);
  std::vector<mig::ScoredTriplet> held_out(all.begin() + 400 * 4, all.end());
  const auto dataset = mig::build_dataset(train_split, {}, 5);
  reranker::TrainConfig cfg;
  cfg.seed = 5;
  const auto a = reranker::train(dataset.examples, cfg);
  const auto b = reranker::train(dataset.examples, cfg);
  const auto report = pipeline::eval_ranking(a.model, held_out);
  const double elapsed = seconds_since(t0);
  const bool same = a.model.content_hash() == b.model.content_hash();
  const bool ok = report.metrics.pairwise_accuracy >= 0.95 && report.metrics.kendall_tau >= 0.8 && same &&
                  a.history.size() <= 50 && elapsed < 60.0;
  return {ok, "held-out pairwise " + fmt(report.metrics.pairwise_accuracy) + ", tau " +
                  fmt(report.metrics.kendall_tau) + ", epochs " + std::to_string(a.history.size()) +
                  ", rerun hash " + (same ? "identical" : "DIFFERENT") + ", " + fmt(elapsed) + " s (two runs)"};
}

Outcome ablation_configurations() {
  const auto dir = fs::temp_directory_path() / "migrank_acceptance_sweep";
  fs::create_directories(dir);
  mig::write_scored(dir / "scored.jsonl", synthetic::benchmark_scored(300, 6, 8));
  auto cfg = cli::parse_config("seed = 3");
  std::ostringstream sink;
  const auto rows = cli::cmd_sweep(cfg, dir / "scored.jsonl", {0.0, 0.74, 1.0}, {0.2}, std::nullopt, sink);
  if (rows.size() != 3) return {false, "expected 3 rows, got " + std::to_string(rows.size())};
  const std::array<std::string, 3> names{"RankNet Loss", "Multi-Loss", "CE Loss"};
  bool complete = true;
  for (std::size_t i = 0; i < 3; ++i) {
    complete = complete && rows[i].ok && rows[i].condition == names[i] && !rows[i].model_hash.empty() &&
               rows[i].train_examples > 0;
  }
  if (!complete) return {false, "incomplete row: " + rows[0].error + rows[1].error + rows[2].error};
  const double a0 = rows[0].metrics.pairwise_accuracy;
  const double mid = rows[1].metrics.pairwise_accuracy;
  const double a1 = rows[2].metrics.pairwise_accuracy;
  const bool ok = mid >= std::max(a0, a1) - 0.02;
  return {ok, "pairwise accuracy RankNet " + fmt(a0) + ", Multi-Loss " + fmt(mid) + ", CE " + fmt(a1)};
}

std::string run_binary(const std::string& args) {
  const std::string cmd = std::string(MIGRANK_BINARY) + " " + args + " 2>/dev/null";
  std::string out;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return out;
  std::array<char, 4096> buf{};
  while (auto n = std::fread(buf.data(), 1, buf.size(), pipe)) out.append(buf.data(), n);
  if (pclose(pipe) != 0) out = "<failed>" + out;
  return out;
}

Outcome pipeline_determinism() {
  const fs::path data = MIGRANK_TEST_DATA;
  const auto dir = fs::temp_directory_path() / "migrank_acceptance_rerank";
  fs::create_directories(dir);
  const auto model = synthetic::random_model(reranker::Architecture::kMlp, 4, 12);
  model.save(dir / "model.json");
  const std::string args = "rerank --model " + (dir / "model.json").string() + " --corpus " +
                           (data / "corpus.jsonl").string() + " --query \"Which gas do plants absorb?\" -k 3";
  const auto first = run_binary(args);
  const auto second = run_binary(args);
  const bool identical = first == second && first.rfind("<failed>", 0) != 0 && !first.empty();

  Rng rng(555);
  std::size_t violations = 0;
  pipeline::Corpus corpus;
  for (int i = 0; i < 40; ++i) {
    std::string text;
    for (int j = 0; j < 5; ++j) text += "t" + std::to_string(rng.uniform_index(15)) + " ";
    char id[16];
    std::snprintf(id, sizeof id, "doc%02d", i);
    corpus.documents[id] = {text, {}};
  }
  const pipeline::TfidfRetriever retriever(corpus);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto m = synthetic::random_model(rng.uniform_index(2) ? reranker::Architecture::kLinear
                                                              : reranker::Architecture::kMlp,
                                         2, rng.next(), rng.uniform_index(4) == 0 ? 0.0 : 1.0);
    const std::string query = "t" + std::to_string(rng.uniform_index(15)) + " t" + std::to_string(rng.uniform_index(15));
    const auto cands = retriever.retrieve(query, 1 + rng.uniform_index(40));
    const std::size_t k = 1 + rng.uniform_index(45);
    const auto out = pipeline::rerank(m, query, cands, corpus, k);
    std::set<std::string> cand_ids, seen;
    for (const auto& c : cands) cand_ids.insert(c.id);
    bool ok = out.size() == std::min(k, cands.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      ok = ok && cand_ids.count(out[i].id) && seen.insert(out[i].id).second;
      if (i > 0) ok = ok && pipeline::ranks_before(out[i - 1], out[i]);
    }
    // Nothing left out may outrank the last kept document.
    if (ok && !out.empty() && out.size() < cands.size()) {
      for (const auto& c : cands) {
        if (seen.count(c.id)) continue;
        const pipeline::ScoredDoc other{c.id, m.score_text(query, corpus.documents.at(c.id).text)};
        ok = ok && !pipeline::ranks_before(other, out.back());
      }
    }
    violations += !ok;
  }
  return {identical && violations == 0, std::string("rerank output ") + (identical ? "byte-identical" : "DIFFERS") +
                                            ", invariant violations " + std::to_string(violations) + "/10000"};
}

Outcome confidence_equivalence() {
  Rng rng(8080);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.uniform_index(30);
    teacher::TokenLogProbSequence seq;
    for (std::size_t j = 0; j < n; ++j) {
      seq.tokens.push_back("tok" + std::to_string(j));
      seq.logprobs.push_back(std::log(rng.uniform(1e-4, 1.0)));
    }
    const double eq = confidence::confidence(seq, confidence::ConfidenceStrategy::equal()).value;
    const std::vector<double> ones(n, 1.0);
    const double pos = confidence::weighted_confidence(seq.logprobs, ones);
    worst = std::max(worst, std::abs(eq - pos) / std::abs(pos));
  }

  bool exact = true;
  const std::vector<std::string> docs{"apple banana", "cherry date", "elder fig", "grape"};
  auto idf = std::make_shared<const confidence::IdfTable>(confidence::build_idf_table(docs));
  const std::vector<std::string> vocab{"apple", "banana", "cherry", "date", "elder", "fig", "grape", "kiwi"};
  const auto strategy = confidence::ConfidenceStrategy::semantic_anchor(idf, 0.15);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.uniform_index(20);
    teacher::TokenLogProbSequence seq;
    double sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      seq.tokens.push_back(vocab[rng.uniform_index(vocab.size())]);
      seq.logprobs.push_back(std::log(rng.uniform(1e-4, 1.0)));
      sum += seq.logprobs.back();
    }
    const auto mask = confidence::semantic_mask(seq.tokens, *idf, 0.15);
    exact = exact && std::all_of(mask.begin(), mask.end(), [](auto m) { return m == 1; });
    exact = exact && confidence::confidence(seq, strategy).value == sum / static_cast<double>(n);
  }
  return {worst <= 1e-12 && exact, "equal vs all-ones positional max rel diff " + fmt(worst) +
                                       ", all-ones mask equals mean exactly " + (exact ? "yes" : "no")};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"weight formula", weight_formula},
      {"loss identities", loss_identities},
      {"gradient check", gradient_check},
      {"labeling oracle", labeling_oracle},
      {"mig sign separation", mig_separation},
      {"training convergence", training_convergence},
      {"ablation configurations", ablation_configurations},
      {"pipeline determinism", pipeline_determinism},
      {"confidence strategy equivalence", confidence_equivalence},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
