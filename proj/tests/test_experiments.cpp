#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "icl/error.hpp"
#include "icl/experiments.hpp"

using namespace icl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("icl_experiments_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.train_count = 64;
  c.query_count = 200;
  c.claim1_trials = 60;
  c.train_steps = 50;
  c.ablation_seq_len = 60;
  c.ablation_train = 6;
  c.ablation_valid = 4;
  c.ablation_steps = 5;
  c.ablation_eval_every = 1;
  c.theorem_n1 = {1, 100};
  c.theorem_n = {1, 100};
  c.theorem_trials = 100;
  c.epsilon_samples = 50;
  return c;
}

class ThreadsEnv {
 public:
  explicit ThreadsEnv(const char* value) {
    if (const char* v = std::getenv("ICL_LAB_THREADS")) old_ = v;
    setenv("ICL_LAB_THREADS", value, 1);
  }
  ~ThreadsEnv() {
    if (old_.empty()) unsetenv("ICL_LAB_THREADS");
    else setenv("ICL_LAB_THREADS", old_.c_str(), 1);
  }

 private:
  std::string old_;
};

}  // namespace

TEST(QueryConcept, ForcesTarget) {
  ExperimentConfig c;
  c.tau = 3;
  for (int s = 0; s < 1000; ++s) {
    Rng rng(1, {static_cast<std::uint64_t>(s)});
    auto spec = make_query_concept(c, rng, TopicMode::Uniform);
    ASSERT_EQ(spec.key_topic, 2);
    ASSERT_EQ(spec.selected_topics.size(), 3u);
    ASSERT_EQ(std::count(spec.selected_topics.begin(), spec.selected_topics.end(), 2), 1);
    validate(Vocabulary(10, 10), spec);
  }
}

TEST(TrainSample, DeterministicPerIndex) {
  ExperimentConfig c;
  Rng rng(3);
  auto fixed = make_query_concept(c, rng, c.topic_mode);
  for (std::size_t i = 0; i < 50; ++i) {
    auto a = make_train_sample(c, 9, i, fixed);
    auto b = make_train_sample(c, 9, i, fixed);
    ASSERT_EQ(a.masked.values, b.masked.values);
    ASSERT_GE(a.original.cols(), c.seq_len_min);
    ASSERT_LE(a.original.cols(), c.seq_len_max);
  }
  EXPECT_NE(make_train_sample(c, 9, 0, fixed).original.values, make_train_sample(c, 10, 0, fixed).original.values);
}

TEST(Claim1, AnalyticGapFormula) {
  // (sum of context weights) * m / (1 - p).
  EXPECT_NEAR(0.5 * 0.15 / 0.85, 0.088235, 1e-6);
  auto c = small_config();
  auto r = run_claim1_trials(c, 1);
  EXPECT_NEAR(r.analytic_gap, (1.0 / 3) * 0.15 / 0.85, 1e-12);
  EXPECT_NEAR(r.measured_gap, r.analytic_gap, 0.01);
  EXPECT_EQ(r.suffix_len, 300);
  EXPECT_LT(r.max_topic_deviation, 0.05);
  EXPECT_EQ(r.class_rate_no_icl, 1.0);
}

TEST(Claim1, RejectsDominanceViolation) {
  auto c = small_config();
  c.mask_prob = 0.7;
  EXPECT_THROW(run_claim1_trials(c, 1), ConfigError);
}

TEST(Fig2, TargetBecomesMode) {
  auto c = small_config();
  auto r = run_fig2_histograms(c, 2);
  EXPECT_EQ(r.target_topic, 2);
  EXPECT_EQ(r.mode_icl, 2);
  double total = 0;
  for (double h : r.hist_icl) total += h;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_GT(r.hist_icl[1], r.hist_no_icl[1]);
}

TEST(Fig2, RejectsLongSuffix) {
  auto c = small_config();
  c.prefix_frac = 0.3;
  c.suffix_frac = 0.7;
  EXPECT_THROW(run_fig2_histograms(c, 1), ConfigError);
}

TEST(Theorem1, GridShape) {
  auto c = small_config();
  auto grid = run_theorem1_grid(c, bernoulli_family(), 4);
  ASSERT_EQ(grid.size(), 4u);
  for (const auto& p : grid) {
    if (p.flags.all()) EXPECT_GE(p.agreement.agreement_rate, 0.99);
    EXPECT_EQ(p.agreement.trials, 100);
  }
  EXPECT_TRUE(grid.back().flags.all());
  EXPECT_FALSE(grid.front().flags.all());
}

TEST(Commands, ExitCodeIsFirstFailure) {
  CommandResult r;
  r.checks = {{"a", true, ExitCode::TopicLaw, ""}, {"b", false, ExitCode::IclClass, ""},
              {"c", false, ExitCode::TopicGap, ""}};
  EXPECT_EQ(r.exit_code(), ExitCode::IclClass);
  r.checks.clear();
  EXPECT_EQ(r.exit_code(), ExitCode::Ok);
}

TEST(Commands, UnknownName) {
  EXPECT_THROW(run_command("nope", ExperimentConfig{}, 0, scratch("unknown")), InvalidArgument);
  EXPECT_EQ(command_names().size(), 8u);
}

TEST(Commands, SolveWritesModel) {
  auto dir = scratch("solve");
  auto r = cmd_solve(ExperimentConfig{}, 0, dir);
  EXPECT_EQ(r.exit_code(), ExitCode::Ok);
  auto params = model_params_from_json(slurp(dir / "model.json"));
  EXPECT_NEAR(params.value(1, 1), 1.1485332919, 1e-9);
  auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  EXPECT_EQ(summary["command"], "solve");
  EXPECT_EQ(summary["encoding_rows"], 22);
}

TEST(Commands, GenerateRoundTrips) {
  auto c = small_config();
  c.train_count = 20;
  c.query_count = 5;
  auto dir = scratch("generate");
  cmd_generate(c, 3, dir);
  std::ifstream in(dir / "train.txt");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    auto m = parse_sequence_line(line);
    validate(Vocabulary(10, 10), m);
    EXPECT_FALSE(m.mask_positions.empty());
    ++lines;
  }
  EXPECT_EQ(lines, 20);
}

TEST(Commands, ByteIdenticalAcrossThreadCounts) {
  auto c = small_config();
  for (const std::string name : {"fig2", "claim1", "train", "ablation", "theorem1", "generate"}) {
    fs::path one = scratch(name + "_t1"), many = scratch(name + "_t4");
    {
      ThreadsEnv env("1");
      run_command(name, c, 11, one);
    }
    {
      ThreadsEnv env("4");
      run_command(name, c, 11, many);
    }
    for (const auto& entry : fs::directory_iterator(one))
      EXPECT_EQ(slurp(entry.path()), slurp(many / entry.path().filename())) << name << "/" << entry.path().filename();
  }
}

TEST(Commands, SeedChangesOutput) {
  auto c = small_config();
  auto a = scratch("seed_a"), b = scratch("seed_b");
  cmd_generate(c, 1, a);
  cmd_generate(c, 2, b);
  EXPECT_NE(slurp(a / "train.txt"), slurp(b / "train.txt"));
  cmd_generate(c, 1, b);
  EXPECT_EQ(slurp(a / "train.txt"), slurp(b / "train.txt"));
}
