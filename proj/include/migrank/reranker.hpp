#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "migrank/confidence.hpp"

namespace migrank::reranker {

inline constexpr std::size_t kBuiltinFeatureCount = 5;
inline constexpr const char* kModelVersion = "migrank-reranker/1";

struct FeatureVector {
  std::vector<double> values;
  std::string schema_id;
};

// Maps (query, document) text to a fixed-order feature vector:
//   [tf-idf cosine, token Jaccard, ln(|doc tokens| / |query tokens|),
//    query-term coverage, 1.0 bias, external features...]
// Without an idf table every term weighs 1 in the cosine.
class Featurizer {
 public:
  explicit Featurizer(std::shared_ptr<const confidence::IdfTable> idf = nullptr, std::size_t extra_dims = 0);

  std::size_t dimension() const noexcept { return kBuiltinFeatureCount + extra_dims_; }
  std::size_t extra_dims() const noexcept { return extra_dims_; }
  const std::shared_ptr<const confidence::IdfTable>& idf() const noexcept { return idf_; }
  std::string schema_id() const;

  FeatureVector featurize(std::string_view query, std::string_view document,
                          std::span<const double> extra = {}) const;

 private:
  std::shared_ptr<const confidence::IdfTable> idf_;
  std::size_t extra_dims_;
};

FeatureVector featurize(std::string_view query, std::string_view document, const confidence::IdfTable* idf = nullptr,
                        std::span<const double> extra = {});

enum class Architecture { kLinear, kMlp };

std::string_view to_string(Architecture arch) noexcept;
Architecture parse_architecture(std::string_view name);

struct ModelShape {
  Architecture architecture = Architecture::kLinear;
  std::size_t input_dim = kBuiltinFeatureCount;
  std::size_t hidden_units = 0;  // mlp only

  std::size_t parameter_count() const noexcept;
};

/// Scalar scorer over feature vectors.
///
/// linear: s = w . f
/// mlp:    s = w2 . tanh(W1 f + b1) + b2
///
/// Parameters live in one flat vector. For the mlp the layout is W1
/// (row-major, hidden x input), b1, w2, b2.
class RerankerModel {
 public:
  RerankerModel(ModelShape shape, Featurizer featurizer);
  RerankerModel(ModelShape shape, Featurizer featurizer, std::vector<double> parameters);

  // Weights ~ uniform(-0.1, 0.1), biases 0.
  static RerankerModel initialized(ModelShape shape, Featurizer featurizer, std::uint64_t seed);

  const ModelShape& shape() const noexcept { return shape_; }
  const Featurizer& featurizer() const noexcept { return featurizer_; }
  std::string schema_id() const { return featurizer_.schema_id(); }

  std::span<const double> parameters() const noexcept { return params_; }
  std::span<double> parameters() noexcept { return params_; }

  double score(std::span<const double> features) const;
  double score(const FeatureVector& f) const;
  double prob(const FeatureVector& f) const;
  double score_text(std::string_view query, std::string_view document) const;

  // grad += upstream * d score / d parameters.
  void accumulate_gradient(std::span<const double> features, double upstream, std::span<double> grad) const;

  const nlohmann::ordered_json& train_config() const noexcept { return train_config_; }
  void set_train_config(nlohmann::ordered_json snapshot) { train_config_ = std::move(snapshot); }

  // Self-describing document: version, architecture, schema_id, featurizer,
  // parameters, train_config, content_hash.
  nlohmann::ordered_json to_json() const;
  static RerankerModel from_json(const nlohmann::ordered_json& doc);
  std::string content_hash() const;

  void save(const std::filesystem::path& path) const;
  static RerankerModel load(const std::filesystem::path& path);

 private:
  nlohmann::ordered_json body_json() const;

  ModelShape shape_;
  Featurizer featurizer_;
  std::vector<double> params_;
  nlohmann::ordered_json train_config_ = nlohmann::ordered_json::object();
};

double logistic(double x) noexcept;

}  // namespace migrank::reranker
