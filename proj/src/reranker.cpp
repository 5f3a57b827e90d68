#include "migrank/reranker.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "migrank/error.hpp"
#include "migrank/hashing.hpp"
#include "migrank/jsonl.hpp"
#include "migrank/random.hpp"
#include "migrank/text.hpp"

namespace migrank::reranker {

double logistic(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Featurizer::Featurizer(std::shared_ptr<const confidence::IdfTable> idf, std::size_t extra_dims)
    : idf_(std::move(idf)), extra_dims_(extra_dims) {}

std::string Featurizer::schema_id() const {
  std::string id = "migrank.features.v1/builtin5";
  if (extra_dims_ > 0) id += "+ext" + std::to_string(extra_dims_);
  return id;
}

namespace {

std::map<std::string, double> weighted_tf(const std::vector<std::string>& tokens, const confidence::IdfTable* idf) {
  std::map<std::string, double> tf;
  for (const auto& t : tokens) tf[t] += 1.0;
  if (idf) {
    for (auto& [term, w] : tf) w *= idf->lookup(term);
  }
  return tf;
}

double cosine(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (const auto& [t, w] : a) {
    na += w * w;
    auto it = b.find(t);
    if (it != b.end()) dot += w * it->second;
  }
  for (const auto& [t, w] : b) nb += w * w;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

FeatureVector Featurizer::featurize(std::string_view query, std::string_view document,
                                    std::span<const double> extra) const {
  require(!query.empty() && !document.empty(), ErrorCode::kInvalidInput, "featurize needs a nonempty query and document");
  if (extra.size() != extra_dims_) {
    fail(ErrorCode::kSchemaMismatch, "external feature vector has " + std::to_string(extra.size()) +
                                         " values; schema " + schema_id() + " expects " + std::to_string(extra_dims_));
  }
  const auto q_tokens = text::tokenize(query);
  const auto d_tokens = text::tokenize(document);
  require(!q_tokens.empty() && !d_tokens.empty(), ErrorCode::kInvalidInput,
          "query or document has no tokens after normalization");

  const std::set<std::string> q_set(q_tokens.begin(), q_tokens.end());
  const std::set<std::string> d_set(d_tokens.begin(), d_tokens.end());
  std::size_t shared = 0;
  for (const auto& t : q_set) shared += d_set.count(t);
  const std::size_t uni = q_set.size() + d_set.size() - shared;

  FeatureVector f;
  f.schema_id = schema_id();
  f.values.reserve(dimension());
  f.values.push_back(cosine(weighted_tf(q_tokens, idf_.get()), weighted_tf(d_tokens, idf_.get())));
  f.values.push_back(static_cast<double>(shared) / static_cast<double>(uni));
  f.values.push_back(std::log(static_cast<double>(d_tokens.size()) / static_cast<double>(q_tokens.size())));
  f.values.push_back(static_cast<double>(shared) / static_cast<double>(q_set.size()));
  f.values.push_back(1.0);
  for (double x : extra) {
    require(std::isfinite(x), ErrorCode::kInvalidInput, "external feature value is not finite");
    f.values.push_back(x);
  }
  return f;
}

FeatureVector featurize(std::string_view query, std::string_view document, const confidence::IdfTable* idf,
                        std::span<const double> extra) {
  std::shared_ptr<const confidence::IdfTable> shared;
  if (idf) shared = std::make_shared<const confidence::IdfTable>(*idf);
  return Featurizer(shared, extra.size()).featurize(query, document, extra);
}

std::string_view to_string(Architecture arch) noexcept { return arch == Architecture::kLinear ? "linear" : "mlp"; }

Architecture parse_architecture(std::string_view name) {
  if (name == "linear") return Architecture::kLinear;
  if (name == "mlp") return Architecture::kMlp;
  fail(ErrorCode::kConfig, "unknown architecture '" + std::string(name) + "'");
}

std::size_t ModelShape::parameter_count() const noexcept {
  if (architecture == Architecture::kLinear) return input_dim;
  return hidden_units * input_dim + hidden_units + hidden_units + 1;
}

RerankerModel::RerankerModel(ModelShape shape, Featurizer featurizer)
    : RerankerModel(shape, std::move(featurizer), std::vector<double>(shape.parameter_count(), 0.0)) {}

RerankerModel::RerankerModel(ModelShape shape, Featurizer featurizer, std::vector<double> parameters)
    : shape_(shape), featurizer_(std::move(featurizer)), params_(std::move(parameters)) {
  require(shape_.input_dim == featurizer_.dimension(), ErrorCode::kSchemaMismatch,
          "model input_dim " + std::to_string(shape_.input_dim) + " does not match featurizer dimension " +
              std::to_string(featurizer_.dimension()));
  require(shape_.architecture == Architecture::kLinear || shape_.hidden_units >= 1, ErrorCode::kInvalidInput,
          "mlp needs at least one hidden unit");
  require(params_.size() == shape_.parameter_count(), ErrorCode::kInvariant,
          "parameter count " + std::to_string(params_.size()) + " does not match architecture (" +
              std::to_string(shape_.parameter_count()) + ")");
}

RerankerModel RerankerModel::initialized(ModelShape shape, Featurizer featurizer, std::uint64_t seed) {
  RerankerModel model(shape, std::move(featurizer));
  Rng rng(seed);
  auto& p = model.params_;
  if (shape.architecture == Architecture::kLinear) {
    for (auto& w : p) w = rng.uniform(-0.1, 0.1);
  } else {
    const std::size_t h = shape.hidden_units;
    const std::size_t d = shape.input_dim;
    for (std::size_t i = 0; i < h * d; ++i) p[i] = rng.uniform(-0.1, 0.1);
    for (std::size_t i = 0; i < h; ++i) p[h * d + h + i] = rng.uniform(-0.1, 0.1);
  }
  return model;
}

double RerankerModel::score(std::span<const double> f) const {
  require(f.size() == shape_.input_dim, ErrorCode::kSchemaMismatch,
          "feature vector has " + std::to_string(f.size()) + " values; model expects " +
              std::to_string(shape_.input_dim));
  const std::size_t d = shape_.input_dim;
  if (shape_.architecture == Architecture::kLinear) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += params_[i] * f[i];
    return s;
  }
  const std::size_t h = shape_.hidden_units;
  const double* w1 = params_.data();
  const double* b1 = w1 + h * d;
  const double* w2 = b1 + h;
  const double b2 = w2[h];
  double s = b2;
  for (std::size_t j = 0; j < h; ++j) {
    double a = b1[j];
    for (std::size_t i = 0; i < d; ++i) a += w1[j * d + i] * f[i];
    s += w2[j] * std::tanh(a);
  }
  return s;
}

double RerankerModel::score(const FeatureVector& f) const {
  if (f.schema_id != schema_id()) {
    fail(ErrorCode::kSchemaMismatch, "feature schema '" + f.schema_id + "' does not match model schema '" +
                                         schema_id() + "'");
  }
  return score(std::span<const double>(f.values));
}

double RerankerModel::prob(const FeatureVector& f) const { return logistic(score(f)); }

double RerankerModel::score_text(std::string_view query, std::string_view document) const {
  return score(featurizer_.featurize(query, document));
}

void RerankerModel::accumulate_gradient(std::span<const double> f, double upstream, std::span<double> grad) const {
  const std::size_t d = shape_.input_dim;
  if (shape_.architecture == Architecture::kLinear) {
    for (std::size_t i = 0; i < d; ++i) grad[i] += upstream * f[i];
    return;
  }
  const std::size_t h = shape_.hidden_units;
  const double* w1 = params_.data();
  const double* b1 = w1 + h * d;
  const double* w2 = b1 + h;
  double* g_w1 = grad.data();
  double* g_b1 = g_w1 + h * d;
  double* g_w2 = g_b1 + h;
  double* g_b2 = g_w2 + h;
  *g_b2 += upstream;
  for (std::size_t j = 0; j < h; ++j) {
    double a = b1[j];
    for (std::size_t i = 0; i < d; ++i) a += w1[j * d + i] * f[i];
    const double t = std::tanh(a);
    g_w2[j] += upstream * t;
    const double da = upstream * w2[j] * (1.0 - t * t);
    g_b1[j] += da;
    for (std::size_t i = 0; i < d; ++i) g_w1[j * d + i] += da * f[i];
  }
}

namespace {

nlohmann::ordered_json tensor(std::vector<std::size_t> shape, std::span<const double> data) {
  nlohmann::ordered_json j;
  j["shape"] = shape;
  j["data"] = std::vector<double>(data.begin(), data.end());
  return j;
}

std::vector<double> read_tensor(const nlohmann::ordered_json& j, std::size_t expected, const std::string& name) {
  auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != expected) {
    fail(ErrorCode::kParse, "parameter '" + name + "' has " + std::to_string(data.size()) + " values, expected " +
                                std::to_string(expected));
  }
  return data;
}

}  // namespace

nlohmann::ordered_json RerankerModel::body_json() const {
  nlohmann::ordered_json j;
  j["version"] = kModelVersion;
  nlohmann::ordered_json arch;
  arch["kind"] = std::string(to_string(shape_.architecture));
  if (shape_.architecture == Architecture::kMlp) arch["hidden_units"] = shape_.hidden_units;
  j["architecture"] = arch;
  j["schema_id"] = schema_id();
  j["input_dim"] = shape_.input_dim;

  nlohmann::ordered_json feat;
  feat["extra_dims"] = featurizer_.extra_dims();
  if (const auto& idf = featurizer_.idf()) {
    nlohmann::ordered_json table;
    table["corpus_doc_count"] = idf->corpus_doc_count();
    nlohmann::ordered_json terms = nlohmann::ordered_json::object();
    for (const auto& [term, value] : idf->terms()) terms[term] = value;
    table["terms"] = terms;
    feat["idf"] = table;
  } else {
    feat["idf"] = nullptr;
  }
  j["featurizer"] = feat;

  const std::span<const double> p(params_);
  const std::size_t d = shape_.input_dim;
  nlohmann::ordered_json params;
  if (shape_.architecture == Architecture::kLinear) {
    params["w"] = tensor({d}, p);
  } else {
    const std::size_t h = shape_.hidden_units;
    params["W1"] = tensor({h, d}, p.subspan(0, h * d));
    params["b1"] = tensor({h}, p.subspan(h * d, h));
    params["w2"] = tensor({h}, p.subspan(h * d + h, h));
    params["b2"] = tensor({1}, p.subspan(h * d + 2 * h, 1));
  }
  j["parameters"] = params;
  j["train_config"] = train_config_;
  return j;
}

std::string RerankerModel::content_hash() const { return sha256_hex(body_json().dump()); }

nlohmann::ordered_json RerankerModel::to_json() const {
  auto j = body_json();
  j["content_hash"] = sha256_hex(j.dump());
  return j;
}

RerankerModel RerankerModel::from_json(const nlohmann::ordered_json& doc) {
  try {
    const auto version = doc.at("version").get<std::string>();
    require(version == kModelVersion, ErrorCode::kParse, "unsupported model version '" + version + "'");

    ModelShape shape;
    shape.architecture = parse_architecture(doc.at("architecture").at("kind").get<std::string>());
    if (shape.architecture == Architecture::kMlp) {
      shape.hidden_units = doc.at("architecture").at("hidden_units").get<std::size_t>();
    }
    shape.input_dim = doc.at("input_dim").get<std::size_t>();

    const auto& feat = doc.at("featurizer");
    std::shared_ptr<const confidence::IdfTable> idf;
    if (!feat.at("idf").is_null()) {
      std::map<std::string, double> terms;
      for (const auto& [term, value] : feat.at("idf").at("terms").items()) terms.emplace(term, value.get<double>());
      idf = std::make_shared<const confidence::IdfTable>(std::move(terms),
                                                         feat.at("idf").at("corpus_doc_count").get<std::size_t>());
    }
    Featurizer featurizer(idf, feat.at("extra_dims").get<std::size_t>());

    const auto& params = doc.at("parameters");
    std::vector<double> flat;
    const std::size_t d = shape.input_dim;
    if (shape.architecture == Architecture::kLinear) {
      flat = read_tensor(params.at("w"), d, "w");
    } else {
      const std::size_t h = shape.hidden_units;
      for (const auto& [name, n] : {std::pair{"W1", h * d}, {"b1", h}, {"w2", h}, {"b2", std::size_t{1}}}) {
        auto part = read_tensor(params.at(name), n, name);
        flat.insert(flat.end(), part.begin(), part.end());
      }
    }
    RerankerModel model(shape, std::move(featurizer), std::move(flat));
    if (doc.contains("train_config")) model.train_config_ = doc.at("train_config");

    require(doc.at("schema_id").get<std::string>() == model.schema_id(), ErrorCode::kSchemaMismatch,
            "model schema_id does not match its featurizer");
    if (doc.contains("content_hash")) {
      const auto stored = doc.at("content_hash").get<std::string>();
      require(stored == model.content_hash(), ErrorCode::kParse, "model content_hash does not match its contents");
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("malformed model document: ") + e.what());
  }
}

void RerankerModel::save(const std::filesystem::path& path) const { jsonl::write_file(path, to_json().dump(2) + "\n"); }

RerankerModel RerankerModel::load(const std::filesystem::path& path) {
  const auto text = jsonl::read_file(path);
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  try {
    return from_json(doc);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace migrank::reranker
