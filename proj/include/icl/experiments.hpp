#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "icl/bayes.hpp"
#include "icl/config.hpp"
#include "icl/corpus.hpp"
#include "icl/solver.hpp"

namespace icl {

/// Process exit codes. Check failures use the category of the first failing
/// check; the 64+ codes follow sysexits.
enum class ExitCode : int {
  Ok = 0,
  TopicLaw = 1,
  ClassLaw = 2,
  IclTopic = 3,
  IclClass = 4,
  TopicGap = 5,
  Fig2Property = 6,
  SolverMismatch = 7,
  TheoremAgreement = 8,
  AblationGap = 9,
  PromptContrast = 10,
  Normalization = 11,
  Usage = 64,
  ConfigRejected = 65,
  InputMissing = 66,
  Diverged = 70,
};

struct Check {
  std::string name;
  bool pass = false;
  ExitCode category = ExitCode::Ok;
  std::string detail;
};

struct CommandResult {
  std::string summary_json;
  std::vector<Check> checks;
  std::vector<std::string> files;  // written, relative to the output directory

  ExitCode exit_code() const;
};

/// Concept for query/prompt runs: the configured target topic is forced to be
/// t* when nonzero.
ConceptSpec make_query_concept(const ExperimentConfig& config, Rng& rng, TopicMode mode);

/// Training sample i of the run; deterministic in (config, seed, i).
TrainingSample make_train_sample(const ExperimentConfig& config, std::uint64_t seed, std::size_t i,
                                 const ConceptSpec& fixed_concept);

struct Fig2Result {
  int target_topic = 0;
  std::vector<double> hist_no_icl;  // T entries, frequencies of topics 1..T
  std::vector<double> hist_icl;
  int mode_no_icl = 0;
  int mode_icl = 0;
  std::vector<double> weights;
};

Fig2Result run_fig2_histograms(const ExperimentConfig& config, std::uint64_t seed);

struct Claim1Result {
  int trials = 0;
  int seq_len = 0;
  int suffix_len = 0;
  std::vector<double> weights;
  double max_topic_deviation = 0.0;    // over every topic row of every trial
  double mean_topic_deviation = 0.0;   // of the per-row means over trials
  std::vector<double> topic_argmax_counts;
  double topic_argmax_pvalue = 1.0;
  double max_key_class_deviation = 0.0;
  double mean_key_class_value = 0.0;
  double class_rate_no_icl = 0.0;
  double topic_rate_icl = 0.0;
  double class_rate_icl = 0.0;
  double measured_gap = 0.0;   // mean over trials of row t* minus mean other topic row
  double analytic_gap = 0.0;   // (sum_{i<=n} a_i) (L2/N) / (1 - p_m)
};

/// Throws ConfigError when the class-dominance condition fails.
Claim1Result run_claim1_trials(const ExperimentConfig& config, std::uint64_t seed);

struct SolverRunResult {
  TrainResult train;
  ClosedFormSolution closed;
  ComparisonReport comparison;
  double learning_rate = 0.0;
  double stable_step = 0.0;
  bool monotone = true;
};

SolverRunResult run_solver_check(const ExperimentConfig& config, std::uint64_t seed, int probes = 32);

struct AblationRun {
  std::vector<JointCurvePoint> curve;
  double final_train = 0.0;
  double final_valid = 0.0;
};

struct AblationResult {
  AblationRun uniform;
  AblationRun learned;
  double learning_rate = 0.0;
  double train_gap = 0.0;  // |uniform - learned| / uniform
  double valid_gap = 0.0;
};

AblationResult run_ablation_experiment(const ExperimentConfig& config, std::uint64_t seed);

struct TheoremPoint {
  int n1 = 0;
  int H = 0;
  int n = 0;
  MarginReport margins;
  ThresholdFlags flags;
  AgreementResult agreement;
};

/// Built-in two-concept family: Bernoulli(0.9) against Bernoulli(0.5) at every
/// one of `length` positions, uniform prior, the first concept as query and
/// pre-train concept.
ConceptFamily bernoulli_family(int length = 5, double star = 0.9, double other = 0.5);

std::vector<TheoremPoint> run_theorem1_grid(const ExperimentConfig& config, const ConceptFamily& family,
                                            std::uint64_t seed);

/// Commands: each writes its files under out_dir and returns the summary.
CommandResult cmd_fig2(const ExperimentConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir);
CommandResult cmd_claim1(const ExperimentConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir);
CommandResult cmd_theorem1(const ExperimentConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir);
CommandResult cmd_ablation(const ExperimentConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir);
CommandResult cmd_compare_prompts(const ExperimentConfig& config, std::uint64_t seed,
                                  const std::filesystem::path& out_dir);
CommandResult cmd_generate(const ExperimentConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir);
CommandResult cmd_train(const ExperimentConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir);
CommandResult cmd_solve(const ExperimentConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir);

std::vector<std::string> command_names();
/// Dispatches by name; throws InvalidArgument for an unknown command.
CommandResult run_command(const std::string& name, const ExperimentConfig& config, std::uint64_t seed,
                          const std::filesystem::path& out_dir);

}  // namespace icl
