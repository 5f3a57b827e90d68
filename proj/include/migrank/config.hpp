#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "migrank/confidence.hpp"
#include "migrank/http_teacher.hpp"
#include "migrank/mig.hpp"
#include "migrank/pipeline.hpp"
#include "migrank/teacher.hpp"
#include "migrank/trainer.hpp"

namespace migrank::cli {

struct TeacherSettings {
  std::string provider = "mock";  // mock | http | records
  std::string endpoint;
  std::string api_key;
  std::string api_key_env = "MIGRANK_API_KEY";
  std::string records_path;
  teacher::HttpClientOptions http;
  teacher::MockTeacherParams mock;
};

struct ConfidenceSettings {
  confidence::ConfidenceStrategy::Kind kind = confidence::ConfidenceStrategy::Kind::kPositional;
  confidence::PositionalParams positional;
  double tau_freq = 0.15;
  std::string idf_path;
};

struct LabelingSettings {
  mig::LabelingConfig thresholds;
  bool balance = true;
  double histogram_bin_width = 0.05;
};

struct PipelineSettings {
  std::size_t candidates = 20;
  std::size_t top_k = 3;
  std::size_t eval_k = 3;
  pipeline::ContextTemplate context;
};

struct SweepSettings {
  double holdout_fraction = 0.2;
};

struct AppConfig {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string log_level = "info";
  std::string cache_dir = ".migrank-cache";
  TeacherSettings teacher;
  ConfidenceSettings confidence;
  LabelingSettings labeling;
  reranker::TrainConfig train;
  PipelineSettings pipeline;
  SweepSettings sweep;

  void validate() const;
};

// Loads a TOML config (or defaults when `path` is empty), applies
// "section.key=value" overrides, then validates. Unknown keys and type
// errors raise kConfig naming the key.
AppConfig load_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides = {});
AppConfig parse_config(std::string_view toml_text, const std::vector<std::string>& overrides = {});

}  // namespace migrank::cli
