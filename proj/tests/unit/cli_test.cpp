#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "migrank/commands.hpp"
#include "migrank/error.hpp"
#include "migrank/jsonl.hpp"
#include "synthetic.hpp"

namespace fs = std::filesystem;
using namespace migrank;
using namespace migrank::cli;

namespace {

const fs::path kData = MIGRANK_TEST_DATA;

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("migrank_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct RunResult {
  int status = 0;
  std::string out;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(MIGRANK_BINARY) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  std::array<char, 4096> buf{};
  while (auto n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

}  // namespace

TEST(Config, Defaults) {
  const auto cfg = parse_config("");
  EXPECT_EQ(cfg.teacher.provider, "mock");
  EXPECT_DOUBLE_EQ(cfg.confidence.positional.k, 0.2);
  EXPECT_DOUBLE_EQ(cfg.confidence.positional.c, 1.5);
  EXPECT_DOUBLE_EQ(cfg.confidence.positional.peak, 5.0);
  EXPECT_DOUBLE_EQ(cfg.confidence.tau_freq, 0.15);
  EXPECT_DOUBLE_EQ(cfg.labeling.thresholds.b1, 0.2);
  EXPECT_DOUBLE_EQ(cfg.labeling.thresholds.b2, -0.2);
  EXPECT_DOUBLE_EQ(cfg.train.alpha, 0.74);
  EXPECT_EQ(cfg.pipeline.candidates, 20u);
}

TEST(Config, ParsesSectionsAndOverrides) {
  const auto cfg = parse_config(R"(
seed = 9
[confidence]
strategy = "positional"
peak = "midpoint"
[train]
alpha = 1
architecture = "mlp"
[labeling]
b1 = 0.3
b2 = -0.1
)",
                                {"train.alpha=0.5", "pipeline.top_k=1"});
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.train.seed, 9u);
  EXPECT_EQ(cfg.confidence.positional.peak_mode, confidence::PeakMode::kMidpoint);
  EXPECT_DOUBLE_EQ(cfg.train.alpha, 0.5);
  EXPECT_EQ(cfg.train.architecture, reranker::Architecture::kMlp);
  EXPECT_EQ(cfg.pipeline.top_k, 1u);
  EXPECT_DOUBLE_EQ(cfg.labeling.thresholds.b1, 0.3);
}

TEST(Config, UnknownKeyIsNamed) {
  try {
    parse_config("[train]\nalpah = 0.5\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
    EXPECT_NE(std::string(e.what()).find("train.alpah"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config("[nope]\nx = 1\n"), Error);
}

TEST(Config, InvalidValuesNameTheKey) {
  try {
    parse_config("[labeling]\nb1 = -0.5\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("labeling"), std::string::npos) << e.what();
  }
  try {
    parse_config("[train]\nepochs = \"many\"\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("train.epochs"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config("[teacher]\nprovider = \"oracle\"\n"), Error);
}

TEST(Config, ApiKeyNotAcceptedFromFlags) {
  try {
    parse_config("", {"teacher.api_key=abc"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUsage);
  }
}

TEST(Commands, ScoreMatchesGoldenFile) {
  const auto dir = fresh_dir("golden");
  auto cfg = parse_config("");
  cfg.cache_dir = (dir / "cache").string();
  std::ostringstream log;
  cmd_score(cfg, kData / "triplets.jsonl", std::nullopt, dir / "scored.jsonl", log);
  const auto scored = mig::load_scored(dir / "scored.jsonl");
  std::map<std::string, nlohmann::json> golden;
  jsonl::for_each(kData / "golden_scored.jsonl",
                  [&](std::size_t, const nlohmann::json& j) { golden[j["id"].get<std::string>()] = j; });
  ASSERT_EQ(scored.size(), golden.size());
  for (const auto& s : scored) {
    const auto& g = golden.at(s.triplet.id);
    EXPECT_NEAR(s.conf_with.value, g["conf_with"].get<double>(), 1e-12) << s.triplet.id;
    EXPECT_NEAR(s.conf_without.value, g["conf_without"].get<double>(), 1e-12) << s.triplet.id;
    EXPECT_NEAR(s.mig, g["mig"].get<double>(), 1e-12) << s.triplet.id;
  }
}

TEST(Commands, TeachThenScoreFromRecords) {
  const auto dir = fresh_dir("teach");
  auto cfg = parse_config("");
  cfg.cache_dir = (dir / "cache").string();
  std::ostringstream log;
  const auto first = cmd_teach(cfg, kData / "triplets.jsonl", dir / "lp.jsonl", log);
  EXPECT_EQ(first.records, 24u);
  // Four distinct (query, answer) baselines plus twelve with-document calls.
  EXPECT_EQ(first.fetched, 16u);
  const auto again = cmd_teach(cfg, kData / "triplets.jsonl", dir / "lp2.jsonl", log);
  EXPECT_EQ(again.fetched, 0u);
  EXPECT_EQ(jsonl::read_file(dir / "lp.jsonl"), jsonl::read_file(dir / "lp2.jsonl"));

  cmd_score(cfg, kData / "triplets.jsonl", dir / "lp.jsonl", dir / "a.jsonl", log);
  cmd_score(cfg, kData / "triplets.jsonl", std::nullopt, dir / "b.jsonl", log);
  EXPECT_EQ(jsonl::read_file(dir / "a.jsonl"), jsonl::read_file(dir / "b.jsonl"));
}

TEST(Commands, BuildTrainEvalSweep) {
  const auto dir = fresh_dir("flow");
  auto scored = synthetic::benchmark_scored(40, 6, 3);
  mig::write_scored(dir / "scored.jsonl", scored);
  auto cfg = parse_config("[train]\nepochs = 5\n");
  std::ostringstream out;
  const auto stats = cmd_build_dataset(cfg, dir / "scored.jsonl", dir / "ds.jsonl", out);
  EXPECT_EQ(stats.positives, stats.negatives);
  EXPECT_NE(out.str().find("mig_histogram"), std::string::npos);

  const auto trained = cmd_train(cfg, dir / "ds.jsonl", dir / "model.json", std::nullopt, out);
  EXPECT_TRUE(fs::exists(dir / "model.json.history.csv"));
  EXPECT_EQ(jsonl::read_file(dir / "model.json.history.csv").substr(0, 26), "epoch,l_ce,l_rank,l_total\n");

  const auto report = cmd_eval(cfg, dir / "model.json", dir / "scored.jsonl", dir / "eval.csv", out);
  EXPECT_GT(report.metrics.pairwise_accuracy, 0.5);
  EXPECT_TRUE(fs::exists(dir / "eval.csv"));

  std::ostringstream sweep_out;
  const auto rows = cmd_sweep(cfg, dir / "scored.jsonl", {0.0, 1.0}, {0.2, 0.3}, dir / "grid.csv", sweep_out);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].condition, "RankNet Loss");
  EXPECT_EQ(rows[1].condition, "CE Loss");
  for (const auto& r : rows) EXPECT_TRUE(r.ok) << r.error;
  EXPECT_EQ(sweep_condition(0.74), "Multi-Loss");
}

TEST(Binary, RerankIsDeterministic) {
  const auto dir = fresh_dir("rerank");
  const auto model = synthetic::random_model(reranker::Architecture::kLinear, 0, 5);
  model.save(dir / "model.json");
  const std::string args = "rerank --model " + (dir / "model.json").string() + " --corpus " +
                           (kData / "corpus.jsonl").string() + " --query \"Who painted the Mona Lisa?\" -k 2";
  const auto a = run(args);
  const auto b = run(args);
  EXPECT_EQ(a.status, 0) << a.out;
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out.find("[Document 2]"), std::string::npos) << a.out;
  EXPECT_EQ(a.out.find("[Document 3]"), std::string::npos) << a.out;
}

TEST(Binary, UsageErrors) {
  const auto dir = fresh_dir("usage");
  const auto model = synthetic::random_model(reranker::Architecture::kLinear, 0, 5);
  model.save(dir / "model.json");
  const auto zero = run("rerank --model " + (dir / "model.json").string() + " --corpus " +
                        (kData / "corpus.jsonl").string() + " --query q -k 0");
  EXPECT_EQ(zero.status, 2);
  EXPECT_NE(zero.out.find("\"error\":\"usage\""), std::string::npos) << zero.out;

  const auto missing = run("score --triplets " + (dir / "nope.jsonl").string() + " --out " + (dir / "x").string());
  EXPECT_EQ(missing.status, 1);
  EXPECT_NE(missing.out.find("nope.jsonl"), std::string::npos) << missing.out;

  const auto bad_key = run("--set train.alpah=1 score --triplets x --out y");
  EXPECT_NE(bad_key.status, 0);
  EXPECT_NE(bad_key.out.find("train.alpah"), std::string::npos) << bad_key.out;

  EXPECT_EQ(run("frobnicate").status, 2);
}

TEST(Binary, SeedFlagControlsDataset) {
  const auto dir = fresh_dir("seed");
  mig::write_scored(dir / "scored.jsonl", synthetic::benchmark_scored(30, 6, 4));
  const auto s = (dir / "scored.jsonl").string();
  run("--seed 1 build-dataset --scored " + s + " --out " + (dir / "a").string());
  run("--seed 1 build-dataset --scored " + s + " --out " + (dir / "b").string());
  run("--seed 2 build-dataset --scored " + s + " --out " + (dir / "c").string());
  EXPECT_EQ(jsonl::read_file(dir / "a"), jsonl::read_file(dir / "b"));
  EXPECT_NE(jsonl::read_file(dir / "a"), jsonl::read_file(dir / "c"));
}
