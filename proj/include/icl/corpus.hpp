#pragma once

#include <compare>
#include <string>
#include <string_view>
#include <vector>

#include "icl/rng.hpp"

namespace icl {

/// T topics with K classes each; one word per (topic, class) pair.
/// Topics and classes are 1-based labels.
struct Vocabulary {
  int topics;
  int classes;

  Vocabulary(int topics, int classes);
};

struct Token {
  int topic;
  int cls;

  auto operator<=>(const Token&) const = default;
};

using TokenSeq = std::vector<Token>;

enum class TopicMode {
  // Every token's topic is uniform over the selected topics.
  Uniform,
  // Each training sequence draws a key topic from the selected topics; a
  // token takes it with probability key_topic_prob, otherwise one of the
  // remaining selected topics uniformly.
  KeyBiased,
};

std::string_view to_string(TopicMode mode);
TopicMode topic_mode_from_string(std::string_view name);

struct ConceptSpec {
  std::vector<int> selected_topics;  // distinct, in draw order
  int key_topic;                     // t*, member of selected_topics
  TopicMode topic_mode = TopicMode::Uniform;
  double key_topic_prob = 0.0;       // used by KeyBiased only
  double key_class_prob = 1.0;       // Q
};

/// A token sequence with 0-based mask positions. Positions are kept sorted
/// and unique.
struct MaskedSeq {
  TokenSeq base;
  std::vector<int> mask_positions;

  bool is_masked(int position) const;
};

ConceptSpec sample_concept(Rng& rng, const Vocabulary& vocab, int tau, TopicMode mode,
                           double key_topic_prob, double key_class_prob);

void validate(const Vocabulary& vocab, const ConceptSpec& spec);
void validate(const Vocabulary& vocab, const TokenSeq& seq);
void validate(const Vocabulary& vocab, const MaskedSeq& seq);

/// Pre-training sequence: first-token class uniform, later classes follow the
/// first token with probability Q.
TokenSeq gen_train_sequence(Rng& rng, const Vocabulary& vocab, const ConceptSpec& spec,
                            int length);

/// Query/context law: positions [0, prefix_len) take topics uniformly from the
/// selected set, the rest take t*. Classes as in gen_train_sequence.
TokenSeq gen_query_sequence(Rng& rng, const Vocabulary& vocab, const ConceptSpec& spec,
                            int length, int prefix_len);

struct QueryBundle {
  TokenSeq query;
  std::vector<TokenSeq> contexts;
};

QueryBundle gen_query_and_contexts(Rng& rng, const Vocabulary& vocab, const ConceptSpec& spec,
                                   int length, int prefix_len, int contexts);

/// Independent Bernoulli(p_m) masking; an empty draw forces one uniform index.
MaskedSeq mask_random(Rng& rng, TokenSeq seq, double p_m);

/// Masks the last suffix_len positions.
MaskedSeq mask_suffix(TokenSeq seq, int suffix_len);

// Line format: tokens as "topic:class" separated by spaces, optional
// trailing "|π=i,j,k" with 1-based mask positions.
std::string format_sequence(const TokenSeq& seq);
std::string format_sequence(const MaskedSeq& seq);
MaskedSeq parse_sequence_line(std::string_view line);

}  // namespace icl
