#include "icl/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <sstream>

#include "icl/error.hpp"

namespace icl {
namespace {

constexpr std::string_view kMaskField = "|\xCF\x80=";  // "|π="

int draw_class(Rng& rng, int classes, int key_class, double q) {
  if (rng.bernoulli(q)) return key_class;
  int k = rng.uniform_int(1, classes - 1);
  return k >= key_class ? k + 1 : k;
}

int draw_uniform_topic(Rng& rng, const std::vector<int>& topics) {
  return topics[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(topics.size()) - 1))];
}

int parse_int(std::string_view s) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw InvalidArgument("malformed integer '" + std::string(s) + "'");
  return value;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

}  // namespace

Vocabulary::Vocabulary(int t, int k) : topics(t), classes(k) {
  if (topics < 2 || classes < 2)
    throw InvalidArgument("vocabulary needs at least 2 topics and 2 classes");
}

std::string_view to_string(TopicMode mode) {
  return mode == TopicMode::Uniform ? "uniform" : "key_biased";
}

TopicMode topic_mode_from_string(std::string_view name) {
  if (name == "uniform") return TopicMode::Uniform;
  if (name == "key_biased" || name == "key-biased") return TopicMode::KeyBiased;
  throw InvalidArgument("unknown topic mode '" + std::string(name) + "'");
}

bool MaskedSeq::is_masked(int position) const {
  return std::binary_search(mask_positions.begin(), mask_positions.end(), position);
}

void validate(const Vocabulary& vocab, const ConceptSpec& spec) {
  const int tau = static_cast<int>(spec.selected_topics.size());
  if (tau < 1 || tau > vocab.topics) throw InvalidArgument("selected topic count out of range");
  std::vector<int> sorted = spec.selected_topics;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw InvalidArgument("selected topics must be distinct");
  if (sorted.front() < 1 || sorted.back() > vocab.topics)
    throw InvalidArgument("selected topic outside [1, T]");
  if (!std::binary_search(sorted.begin(), sorted.end(), spec.key_topic))
    throw InvalidArgument("key topic is not a selected topic");
  const double q = spec.key_class_prob;
  if (!(q > 1.0 / vocab.classes && q <= 1.0))
    throw InvalidArgument("key class probability Q must lie in (1/K, 1]");
  if (spec.topic_mode == TopicMode::KeyBiased &&
      !(spec.key_topic_prob >= 0.0 && spec.key_topic_prob <= 1.0))
    throw InvalidArgument("key topic probability must lie in [0, 1]");
}

void validate(const Vocabulary& vocab, const TokenSeq& seq) {
  if (seq.empty()) throw InvalidArgument("sequence must contain at least one token");
  for (const Token& tok : seq) {
    if (tok.topic < 1 || tok.topic > vocab.topics || tok.cls < 1 || tok.cls > vocab.classes)
      throw InvalidArgument("token outside vocabulary");
  }
}

void validate(const Vocabulary& vocab, const MaskedSeq& seq) {
  validate(vocab, seq.base);
  const int n = static_cast<int>(seq.base.size());
  for (std::size_t i = 0; i < seq.mask_positions.size(); ++i) {
    const int p = seq.mask_positions[i];
    if (p < 0 || p >= n) throw InvalidArgument("mask position outside sequence");
    if (i > 0 && p <= seq.mask_positions[i - 1])
      throw InvalidArgument("mask positions must be sorted and unique");
  }
}

ConceptSpec sample_concept(Rng& rng, const Vocabulary& vocab, int tau, TopicMode mode,
                           double key_topic_prob, double key_class_prob) {
  if (tau < 1 || tau > vocab.topics)
    throw InvalidArgument("tau must satisfy 1 <= tau <= T");
  std::vector<int> all(static_cast<std::size_t>(vocab.topics));
  std::iota(all.begin(), all.end(), 1);
  // Partial Fisher-Yates: the first tau entries are a uniform draw without replacement.
  for (int i = 0; i < tau; ++i) {
    int j = rng.uniform_int(i, vocab.topics - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
  }
  all.resize(static_cast<std::size_t>(tau));
  ConceptSpec spec;
  spec.key_topic = draw_uniform_topic(rng, all);
  spec.selected_topics = std::move(all);
  spec.topic_mode = mode;
  spec.key_topic_prob = key_topic_prob;
  spec.key_class_prob = key_class_prob;
  validate(vocab, spec);
  return spec;
}

TokenSeq gen_train_sequence(Rng& rng, const Vocabulary& vocab, const ConceptSpec& spec,
                            int length) {
  if (length < 1) throw InvalidArgument("sequence length must be >= 1");
  validate(vocab, spec);
  const auto& topics = spec.selected_topics;

  int seq_key = 0;
  std::vector<int> others;
  if (spec.topic_mode == TopicMode::KeyBiased) {
    seq_key = draw_uniform_topic(rng, topics);
    std::copy_if(topics.begin(), topics.end(), std::back_inserter(others),
                 [&](int t) { return t != seq_key; });
  }
  auto draw_topic = [&]() {
    if (spec.topic_mode == TopicMode::Uniform) return draw_uniform_topic(rng, topics);
    if (others.empty() || rng.bernoulli(spec.key_topic_prob)) return seq_key;
    return draw_uniform_topic(rng, others);
  };

  TokenSeq seq;
  seq.reserve(static_cast<std::size_t>(length));
  const int first_topic = draw_topic();
  const int key_class = rng.uniform_int(1, vocab.classes);
  seq.push_back({first_topic, key_class});
  for (int j = 1; j < length; ++j) {
    const int t = draw_topic();
    seq.push_back({t, draw_class(rng, vocab.classes, key_class, spec.key_class_prob)});
  }
  return seq;
}

TokenSeq gen_query_sequence(Rng& rng, const Vocabulary& vocab, const ConceptSpec& spec,
                            int length, int prefix_len) {
  if (prefix_len < 1 || prefix_len >= length)
    throw InvalidArgument("query prefix length must satisfy 1 <= L1 < N");
  validate(vocab, spec);
  TokenSeq seq;
  seq.reserve(static_cast<std::size_t>(length));
  const int key_class = rng.uniform_int(1, vocab.classes);
  seq.push_back({draw_uniform_topic(rng, spec.selected_topics), key_class});
  for (int j = 1; j < length; ++j) {
    const int t = j < prefix_len ? draw_uniform_topic(rng, spec.selected_topics) : spec.key_topic;
    seq.push_back({t, draw_class(rng, vocab.classes, key_class, spec.key_class_prob)});
  }
  return seq;
}

QueryBundle gen_query_and_contexts(Rng& rng, const Vocabulary& vocab, const ConceptSpec& spec,
                                   int length, int prefix_len, int contexts) {
  if (contexts < 0) throw InvalidArgument("context count must be >= 0");
  QueryBundle bundle;
  bundle.query = gen_query_sequence(rng, vocab, spec, length, prefix_len);
  bundle.contexts.reserve(static_cast<std::size_t>(contexts));
  for (int i = 0; i < contexts; ++i)
    bundle.contexts.push_back(gen_query_sequence(rng, vocab, spec, length, prefix_len));
  return bundle;
}

MaskedSeq mask_random(Rng& rng, TokenSeq seq, double p_m) {
  if (!(p_m > 0.0 && p_m < 1.0)) throw InvalidArgument("mask probability must lie in (0, 1)");
  if (seq.empty()) throw InvalidArgument("cannot mask an empty sequence");
  MaskedSeq out;
  const int n = static_cast<int>(seq.size());
  for (int i = 0; i < n; ++i)
    if (rng.bernoulli(p_m)) out.mask_positions.push_back(i);
  if (out.mask_positions.empty()) out.mask_positions.push_back(rng.uniform_int(0, n - 1));
  out.base = std::move(seq);
  return out;
}

MaskedSeq mask_suffix(TokenSeq seq, int suffix_len) {
  const int n = static_cast<int>(seq.size());
  if (suffix_len < 1 || suffix_len >= n)
    throw InvalidArgument("masked suffix length must satisfy 1 <= L2 < N");
  MaskedSeq out;
  out.mask_positions.resize(static_cast<std::size_t>(suffix_len));
  std::iota(out.mask_positions.begin(), out.mask_positions.end(), n - suffix_len);
  out.base = std::move(seq);
  return out;
}

std::string format_sequence(const TokenSeq& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(seq[i].topic);
    out += ':';
    out += std::to_string(seq[i].cls);
  }
  return out;
}

std::string format_sequence(const MaskedSeq& seq) {
  std::string out = format_sequence(seq.base);
  if (!seq.mask_positions.empty()) {
    out += ' ';
    out += kMaskField;
    for (std::size_t i = 0; i < seq.mask_positions.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(seq.mask_positions[i] + 1);
    }
  }
  return out;
}

MaskedSeq parse_sequence_line(std::string_view line) {
  MaskedSeq out;
  std::string_view tokens = line;
  if (auto bar = line.find(kMaskField); bar != std::string_view::npos) {
    tokens = line.substr(0, bar);
    std::string_view field = trim(line.substr(bar + kMaskField.size()));
    while (!field.empty()) {
      auto comma = field.find(',');
      out.mask_positions.push_back(parse_int(trim(field.substr(0, comma))) - 1);
      if (comma == std::string_view::npos) break;
      field.remove_prefix(comma + 1);
    }
  }
  tokens = trim(tokens);
  while (!tokens.empty()) {
    auto space = tokens.find(' ');
    std::string_view item = tokens.substr(0, space);
    auto colon = item.find(':');
    if (colon == std::string_view::npos) throw InvalidArgument("token must be 'topic:class'");
    out.base.push_back({parse_int(item.substr(0, colon)), parse_int(item.substr(colon + 1))});
    if (space == std::string_view::npos) break;
    tokens = trim(tokens.substr(space + 1));
  }
  if (out.base.empty()) throw InvalidArgument("empty sequence line");
  std::sort(out.mask_positions.begin(), out.mask_positions.end());
  return out;
}

}  // namespace icl
