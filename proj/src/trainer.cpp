#include "migrank/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "migrank/error.hpp"
#include "migrank/jsonl.hpp"
#include "migrank/random.hpp"

namespace migrank::reranker {

std::string_view to_string(Optimizer opt) noexcept { return opt == Optimizer::kSgd ? "sgd" : "adam"; }

std::string_view to_string(PairPolicy policy) noexcept {
  return policy == PairPolicy::kLabel ? "label" : "mig_ordered";
}

Optimizer parse_optimizer(std::string_view name) {
  if (name == "sgd") return Optimizer::kSgd;
  if (name == "adam") return Optimizer::kAdam;
  fail(ErrorCode::kConfig, "unknown optimizer '" + std::string(name) + "'");
}

PairPolicy parse_pair_policy(std::string_view name) {
  if (name == "label") return PairPolicy::kLabel;
  if (name == "mig_ordered") return PairPolicy::kMigOrdered;
  fail(ErrorCode::kConfig, "unknown pair policy '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::kConfig, "train.alpha must lie in [0, 1]");
  require(sigma > 0.0, ErrorCode::kConfig, "train.sigma must be > 0");
  require(learning_rate > 0.0, ErrorCode::kConfig, "train.learning_rate must be > 0");
  require(epochs >= 1, ErrorCode::kConfig, "train.epochs must be >= 1");
  require(batch_size >= 1, ErrorCode::kConfig, "train.batch_size must be >= 1");
  require(pair_cap >= 1, ErrorCode::kConfig, "train.pair_cap must be >= 1");
  require(architecture == Architecture::kLinear || hidden_units >= 1, ErrorCode::kConfig,
          "train.hidden_units must be >= 1 for the mlp");
  require(mig_margin >= 0.0, ErrorCode::kConfig, "train.mig_margin must be >= 0");
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["alpha"] = alpha;
  j["sigma"] = sigma;
  j["learning_rate"] = learning_rate;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["pair_cap"] = pair_cap;
  j["seed"] = seed;
  j["optimizer"] = std::string(to_string(optimizer));
  j["architecture"] = std::string(to_string(architecture));
  j["hidden_units"] = hidden_units;
  j["pair_policy"] = std::string(to_string(pair_policy));
  j["mig_margin"] = mig_margin;
  j["rank_reduction"] = rank_reduction == Reduction::kSum ? "sum" : "mean";
  return j;
}

std::vector<RankPair> sample_pairs(std::span<const mig::LabeledExample> examples, PairPolicy policy,
                                   std::size_t cap, std::uint64_t seed, double mig_margin) {
  require(cap >= 1, ErrorCode::kInvalidInput, "pair cap must be >= 1");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < examples.size(); ++i) groups[examples[i].triplet().query].push_back(i);

  std::vector<RankPair> out;
  std::uint64_t group_index = 0;
  for (const auto& [query, members] : groups) {
    std::vector<RankPair> candidates;
    if (policy == PairPolicy::kLabel) {
      for (auto i : members) {
        if (examples[i].label != 1) continue;
        for (auto j : members) {
          if (examples[j].label == 0) candidates.push_back({query, i, j});
        }
      }
    } else {
      for (auto i : members) {
        for (auto j : members) {
          if (examples[i].mig() - examples[j].mig() > mig_margin) candidates.push_back({query, i, j});
        }
      }
    }
    if (candidates.size() > cap) {
      Rng rng(derive_seed(seed, group_index));
      for (auto idx : rng.sample_indices(candidates.size(), cap)) out.push_back(candidates[idx]);
    } else {
      out.insert(out.end(), candidates.begin(), candidates.end());
    }
    ++group_index;
  }
  return out;
}

namespace {

void check_batch(const RerankerModel& model, const ObjectiveInput& batch) {
  require(!batch.features.empty(), ErrorCode::kInvalidInput, "empty training batch");
  require(batch.features.size() == batch.labels.size(), ErrorCode::kInvalidInput,
          "features and labels differ in length");
  for (const auto& p : batch.pairs) {
    require(p.positive < batch.features.size() && p.negative < batch.features.size(), ErrorCode::kInvalidInput,
            "rank pair index out of range");
  }
  (void)model;
}

// Loss and gradient without finiteness checks; callers decide which error
// applies.
GradientResult objective_and_gradient(const RerankerModel& model, const ObjectiveInput& batch,
                                      const TrainConfig& cfg) {
  check_batch(model, batch);
  const std::size_t n = batch.features.size();
  std::vector<double> scores(n);
  std::vector<double> probs(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = model.score(batch.features[i]);
    probs[i] = logistic(scores[i]);
  }

  GradientResult out;
  out.loss.ce = ce_loss(probs, batch.labels);
  out.loss.rank = batch.pairs.empty() ? 0.0 : ranknet_loss(batch.pairs, scores, cfg.sigma, cfg.rank_reduction);
  out.loss.total = hybrid_loss(cfg.alpha, out.loss.ce, out.loss.rank);

  // d total / d s_i
  std::vector<double> upstream(n, 0.0);
  const double ce_scale = cfg.alpha / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    // The clamp in ce_loss is flat outside its range.
    if (probs[i] < kProbClamp || probs[i] > 1.0 - kProbClamp) continue;
    upstream[i] += ce_scale * (probs[i] - static_cast<double>(batch.labels[i]));
  }
  if (!batch.pairs.empty()) {
    double rank_scale = 1.0 - cfg.alpha;
    if (cfg.rank_reduction == Reduction::kMean) rank_scale /= static_cast<double>(batch.pairs.size());
    for (const auto& p : batch.pairs) {
      const double margin = scores[p.positive] - scores[p.negative];
      // d/dm ln(1 + exp(-sigma m)) = -sigma * logistic(-sigma m)
      const double d = -cfg.sigma * logistic(-cfg.sigma * margin) * rank_scale;
      upstream[p.positive] += d;
      upstream[p.negative] -= d;
    }
  }

  out.grad.assign(model.shape().parameter_count(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (upstream[i] != 0.0) model.accumulate_gradient(batch.features[i], upstream[i], out.grad);
  }
  return out;
}

void check_gradient_finite(const std::vector<double>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      fail(ErrorCode::kNumerical, "non-finite gradient at parameter index " + std::to_string(i));
    }
  }
}

}  // namespace

LossBreakdown hybrid_objective(const RerankerModel& model, const ObjectiveInput& batch, const TrainConfig& cfg) {
  check_batch(model, batch);
  const std::size_t n = batch.features.size();
  std::vector<double> scores(n);
  std::vector<double> probs(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = model.score(batch.features[i]);
    probs[i] = logistic(scores[i]);
  }
  LossBreakdown out;
  out.ce = ce_loss(probs, batch.labels);
  out.rank = batch.pairs.empty() ? 0.0 : ranknet_loss(batch.pairs, scores, cfg.sigma, cfg.rank_reduction);
  out.total = hybrid_loss(cfg.alpha, out.ce, out.rank);
  return out;
}

GradientResult gradients(const RerankerModel& model, const ObjectiveInput& batch, const TrainConfig& cfg) {
  auto out = objective_and_gradient(model, batch, cfg);
  check_gradient_finite(out.grad);
  return out;
}

namespace {

class OptimizerState {
 public:
  OptimizerState(const TrainConfig& cfg, std::size_t n) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad) {
    if (cfg_.optimizer == Optimizer::kSgd) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= cfg_.learning_rate * grad[i];
      return;
    }
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grad[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      params[i] -= cfg_.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + kEps);
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

struct Batch {
  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  std::vector<RankPair> pairs;
};

}  // namespace

TrainResult train(std::span<const mig::LabeledExample> examples, const TrainConfig& cfg) {
  cfg.validate();
  require(!examples.empty(), ErrorCode::kInvalidInput, "cannot train on an empty dataset");

  std::set<std::string> docs;
  for (const auto& ex : examples) docs.insert(ex.triplet().document);
  const std::vector<std::string> corpus(docs.begin(), docs.end());
  auto idf = std::make_shared<const confidence::IdfTable>(confidence::build_idf_table(corpus));
  Featurizer featurizer(idf);

  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  features.reserve(examples.size());
  for (const auto& ex : examples) {
    features.push_back(featurizer.featurize(ex.triplet().query, ex.triplet().document).values);
    labels.push_back(ex.label);
  }

  std::map<std::string, std::vector<std::size_t>> group_map;
  for (std::size_t i = 0; i < examples.size(); ++i) group_map[examples[i].triplet().query].push_back(i);
  std::vector<const std::string*> group_keys;
  for (const auto& [q, _] : group_map) group_keys.push_back(&q);

  ModelShape shape{cfg.architecture, featurizer.dimension(),
                   cfg.architecture == Architecture::kMlp ? cfg.hidden_units : 0};
  auto model = RerankerModel::initialized(shape, featurizer, derive_seed(cfg.seed, 1));
  OptimizerState optimizer(cfg, shape.parameter_count());

  TrainResult result{model, {}};
  bool warned_no_pairs = false;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto pairs = sample_pairs(examples, cfg.pair_policy, cfg.pair_cap, derive_seed(cfg.seed, 1000 + epoch),
                                    cfg.mig_margin);
    if (pairs.empty() && !warned_no_pairs) {
      spdlog::warn("no ranking pairs available; training on the classification loss only");
      warned_no_pairs = true;
    }
    std::map<std::string_view, std::vector<const RankPair*>> pairs_by_query;
    for (const auto& p : pairs) pairs_by_query[p.query_id].push_back(&p);

    auto order = group_keys;
    Rng rng(derive_seed(cfg.seed, 2000000 + epoch));
    rng.shuffle(order);

    std::size_t cursor = 0;
    while (cursor < order.size()) {
      Batch batch;
      std::map<std::size_t, std::size_t> local;
      while (cursor < order.size() && batch.features.size() < cfg.batch_size) {
        const auto& key = *order[cursor++];
        for (auto idx : group_map[key]) {
          local[idx] = batch.features.size();
          batch.features.push_back(features[idx]);
          batch.labels.push_back(labels[idx]);
        }
        if (auto it = pairs_by_query.find(key); it != pairs_by_query.end()) {
          for (const auto* p : it->second) batch.pairs.push_back({p->query_id, local[p->positive], local[p->negative]});
        }
      }
      const ObjectiveInput input{batch.features, batch.labels, batch.pairs};
      auto step = objective_and_gradient(result.model, input, cfg);
      if (!std::isfinite(step.loss.total)) {
        fail(ErrorCode::kDivergence, "training diverged in epoch " + std::to_string(epoch) + " (non-finite loss)");
      }
      check_gradient_finite(step.grad);
      optimizer.step(result.model.parameters(), step.grad);
    }

    const auto full = hybrid_objective(result.model, ObjectiveInput{features, labels, pairs}, cfg);
    if (!std::isfinite(full.total)) {
      fail(ErrorCode::kDivergence, "training diverged in epoch " + std::to_string(epoch) + " (non-finite loss)");
    }
    result.history.push_back({epoch, full.ce, full.rank, full.total});
    spdlog::debug("epoch {} ce={:.6f} rank={:.6f} total={:.6f}", epoch, full.ce, full.rank, full.total);
  }
  result.model.set_train_config(cfg.to_json());
  return result;
}

void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history) {
  std::string out = "epoch,l_ce,l_rank,l_total\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + nlohmann::json(r.ce).dump() + "," + nlohmann::json(r.rank).dump() + "," +
           nlohmann::json(r.total).dump() + "\n";
  }
  jsonl::write_file(path, out);
}

}  // namespace migrank::reranker
