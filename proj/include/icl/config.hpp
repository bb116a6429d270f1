#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "icl/corpus.hpp"

namespace icl {

/// Every experiment knob. Defaults reproduce the synthetic LDA setting:
/// 100 words (10 topics x 10 classes), lengths in [100, 150], Q = 0.91,
/// 15% masking, a 70/30 prefix/suffix split and 10,000 sequences.
struct ExperimentConfig {
  int topics = 10;
  int classes = 10;
  int tau = 10;
  int seq_len_min = 100;
  int seq_len_max = 150;
  int prompt_seq_len = 120;  // stacked prompts need equal lengths
  double key_class_prob = 0.91;
  double mask_prob = 0.15;
  double prefix_frac = 0.7;
  double suffix_frac = 0.3;
  int contexts = 1;
  double gamma = 0.5;
  int train_count = 10000;
  int query_count = 10000;
  TopicMode topic_mode = TopicMode::KeyBiased;
  double key_topic_prob = 0.55;
  int target_topic = 2;  // t* of the fig2 queries; 0 draws it per query

  int claim1_seq_len = 2000;
  int claim1_trials = 500;
  TopicMode claim1_topic_mode = TopicMode::Uniform;

  int train_seq_len = 0;  // 0: draw from [seq_len_min, seq_len_max]
  int train_steps = 5000;
  double train_lambda = 1e-4;
  double train_lr = 0.0;  // 0: 1 / curvature bound
  bool train_fresh_concepts = true;

  int ablation_seq_len = 500;
  int ablation_train = 48;
  int ablation_valid = 24;
  int ablation_steps = 200;
  double ablation_lr = 0.0;  // 0: 1 / curvature bound of the uniform problem
  double ablation_lambda = 0.0;
  double ablation_init_scale = 0.1;
  int ablation_eval_every = 10;

  std::string family;  // empty: built-in Bernoulli(0.9) vs Bernoulli(0.5), length 5
  std::vector<int> theorem_n1 = {1, 10, 100};
  std::vector<int> theorem_H = {1};
  std::vector<int> theorem_n = {1, 10, 100};
  int theorem_trials = 1000;
  int epsilon_samples = 1000;

  int prompt_dim = 3;

  int prefix_len(int seq_len) const;
  int suffix_len(int seq_len) const { return seq_len - prefix_len(seq_len); }
};

/// Parses "key = value" lines ('#' comments). Unknown keys and malformed
/// values are collected and thrown together as a ConfigError.
ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::string& path);

/// Throws ConfigError naming every invalid field.
void validate(const ExperimentConfig& config);

/// Canonical key = value rendering; parse_config(to_text(c)) == c.
std::string to_text(const ExperimentConfig& config);

/// Names of all recognized keys, in rendering order.
std::vector<std::string> config_keys();

}  // namespace icl
