#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "icl/rng.hpp"

namespace icl {

using Sequence = std::vector<int>;

/// Independent categorical distribution per position over a shared alphabet.
class CategoricalSequenceDist {
 public:
  explicit CategoricalSequenceDist(std::vector<std::vector<double>> positions);

  int length() const noexcept { return static_cast<int>(probs_.size()); }
  int alphabet() const noexcept { return probs_.empty() ? 0 : static_cast<int>(probs_[0].size()); }
  double prob(int position, int symbol) const { return probs_[position][symbol]; }
  double log_prob(int position, int symbol) const { return logs_[position][symbol]; }

  /// Log-probability of positions [begin, end) of seq.
  double log_prob(std::span<const int> seq, int begin = 0, int end = -1) const;
  Sequence sample(Rng& rng) const;

  const std::vector<std::vector<double>>& positions() const noexcept { return probs_; }

 private:
  std::vector<std::vector<double>> probs_;
  std::vector<std::vector<double>> logs_;
};

/// KL(p || q) summed over positions, in nats. Throws InfiniteDivergence when
/// q has zero mass where p does not.
double kl_divergence(const CategoricalSequenceDist& p, const CategoricalSequenceDist& q);

/// Var_{s ~ gen}[log q(s) - log ref(s)], exact: positions are independent so
/// per-position variances add.
double log_ratio_variance(const CategoricalSequenceDist& gen, const CategoricalSequenceDist& q,
                          const CategoricalSequenceDist& ref);

/// Finite concept family. The last answer_length positions of a query form
/// the answer y; the positions before them form X_q. Pre-train dataset h is
/// generated by concepts[pretrain[h mod pretrain.size()]].
struct ConceptFamily {
  std::vector<std::string> names;
  std::vector<CategoricalSequenceDist> concepts;
  std::vector<double> prior;
  int query_concept = 0;
  std::vector<int> pretrain;
  int answer_length = 1;

  int size() const noexcept { return static_cast<int>(concepts.size()); }
  int length() const { return concepts.at(0).length(); }
  int alphabet() const { return concepts.at(0).alphabet(); }
  int prefix_length() const { return length() - answer_length; }
  /// Number of answers, alphabet^answer_length.
  int answer_count() const;
  /// Answer index -> symbols (most significant position first).
  Sequence decode_answer(int index) const;
};

void validate(const ConceptFamily& family);

/// Text format, one directive per line, '#' starts a comment:
///   alphabet <A>
///   length <N_b>
///   answer_length <m>            (optional, default 1)
///   concept <name> [prior <p>]   (priors: all or none; none means uniform)
///   position <p_0> ... <p_{A-1}> (N_b lines per concept)
///   repeat <count> <p_0> ... <p_{A-1}>
///   query <name>
///   pretrain <name> [<name> ...]  (default: the query concept)
ConceptFamily parse_concept_family(std::string_view text);
ConceptFamily load_concept_family(const std::string& path);

/// p(y | X_q, theta) for every answer y; factorized laws make it independent
/// of X_q, but the signature keeps the conditional explicit.
std::vector<double> answer_distribution(const ConceptFamily& family, int concept_index,
                                        std::span<const int> prefix);

struct MarginReport {
  // nullopt when there is no alternative concept (vacuous).
  std::optional<double> c1;
  std::optional<double> c2;
  double sigma2 = 0.0;
  double epsilon = 0.0;
  std::optional<double> c1_adjusted;
  std::optional<double> c2_adjusted;
  bool applicable = true;  // c1 < 0 and c2 < 0 (or vacuous)
};

struct ThresholdFlags {
  bool pretrain_count = false;
  bool prompt_count = false;
  bool margin = false;

  bool all() const noexcept { return pretrain_count && prompt_count && margin; }
};

MarginReport compute_margins(const ConceptFamily& family, int n1, int H, int n, Rng& rng,
                             int epsilon_samples = 1000);

ThresholdFlags check_thresholds(const MarginReport& report, int n1, int H, int n);

struct Observations {
  std::vector<std::vector<Sequence>> pretrain;  // H datasets of n1 sequences
  std::vector<Sequence> contexts;               // n prompt samples
  Sequence query;                               // full query; only the prefix is conditioned on
};

Observations sample_observations(const ConceptFamily& family, int n1, int H, int n, Rng& rng);

struct PosteriorReport {
  std::vector<double> posterior;        // over answers
  std::vector<double> concept_weights;  // normalized theta weights
  std::vector<double> r;                // r_{n1}(theta), per concept
  std::vector<double> q;                // q_n(theta), per concept
  int argmax = 0;
  int reference_argmax = 0;
  bool agreement = false;
};

/// Posterior over answers: sum_theta p(y | X_q, theta) w_theta with
///   log w_theta = log p(theta) + n1 H r(theta) + n q(theta)
///                 + log p(X_q|theta) - log p(X_q|theta*)
/// normalized with log-sum-exp.
PosteriorReport exact_posterior(const ConceptFamily& family, const Observations& obs);

struct AgreementResult {
  double agreement_rate = 0.0;
  double mean_query_concept_weight = 0.0;
  int trials = 0;
};

AgreementResult monte_carlo_agreement(const ConceptFamily& family, int n1, int H, int n, int trials,
                                      std::uint64_t seed);

std::string to_json(const MarginReport& report);
std::string to_json(const PosteriorReport& report);

}  // namespace icl
