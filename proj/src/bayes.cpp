#include "icl/bayes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "icl/error.hpp"
#include "icl/parallel.hpp"

namespace icl {
namespace {

constexpr double kSumTol = 1e-9;

int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

double log_sum_exp(std::span<const double> v) {
  const double top = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(top)) return top;
  double s = 0.0;
  for (double x : v) s += std::exp(x - top);
  return top + std::log(s);
}

const CategoricalSequenceDist& pretrain_concept(const ConceptFamily& f, int h) {
  return f.concepts[f.pretrain[static_cast<std::size_t>(h) % f.pretrain.size()]];
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

CategoricalSequenceDist::CategoricalSequenceDist(std::vector<std::vector<double>> positions)
    : probs_(std::move(positions)) {
  if (probs_.empty()) throw InvalidArgument("distribution needs at least one position");
  const std::size_t a = probs_.front().size();
  if (a < 1) throw InvalidArgument("alphabet must be non-empty");
  logs_.reserve(probs_.size());
  for (const auto& row : probs_) {
    if (row.size() != a) throw ShapeError("every position must share the alphabet");
    double s = 0.0;
    for (double p : row) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw InvalidArgument("probabilities must be finite and >= 0");
      s += p;
    }
    if (std::abs(s - 1.0) > kSumTol) throw InvalidArgument("position probabilities must sum to 1");
    std::vector<double> l(a);
    std::transform(row.begin(), row.end(), l.begin(), [](double p) { return std::log(p); });
    logs_.push_back(std::move(l));
  }
}

double CategoricalSequenceDist::log_prob(std::span<const int> seq, int begin, int end) const {
  if (end < 0) end = static_cast<int>(seq.size());
  if (static_cast<int>(seq.size()) > length() || begin < 0 || end > static_cast<int>(seq.size()))
    throw ShapeError("sequence exceeds distribution length");
  double s = 0.0;
  for (int i = begin; i < end; ++i) s += logs_[i][seq[i]];
  return s;
}

Sequence CategoricalSequenceDist::sample(Rng& rng) const {
  Sequence out(probs_.size());
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    // Inverse CDF; the last symbol absorbs rounding.
    const double u = rng.uniform();
    const int last = alphabet() - 1;
    double acc = 0.0;
    int a = 0;
    for (; a < last; ++a) {
      acc += probs_[i][static_cast<std::size_t>(a)];
      if (u < acc) break;
    }
    out[i] = a;
  }
  return out;
}

double kl_divergence(const CategoricalSequenceDist& p, const CategoricalSequenceDist& q) {
  if (p.length() != q.length() || p.alphabet() != q.alphabet())
    throw ShapeError("KL requires distributions of the same shape");
  double total = 0.0;
  for (int i = 0; i < p.length(); ++i) {
    for (int a = 0; a < p.alphabet(); ++a) {
      const double pa = p.prob(i, a);
      if (pa == 0.0) continue;
      if (q.prob(i, a) == 0.0) throw InfiniteDivergence("q has zero mass where p is positive");
      total += pa * (p.log_prob(i, a) - q.log_prob(i, a));
    }
  }
  return total;
}

double log_ratio_variance(const CategoricalSequenceDist& gen, const CategoricalSequenceDist& q,
                          const CategoricalSequenceDist& ref) {
  double total = 0.0;
  for (int i = 0; i < gen.length(); ++i) {
    double mean = 0.0;
    double second = 0.0;
    for (int a = 0; a < gen.alphabet(); ++a) {
      const double w = gen.prob(i, a);
      if (w == 0.0) continue;
      const double x = q.log_prob(i, a) - ref.log_prob(i, a);
      mean += w * x;
      second += w * x * x;
    }
    total += std::max(0.0, second - mean * mean);
  }
  return total;
}

int ConceptFamily::answer_count() const {
  int c = 1;
  for (int i = 0; i < answer_length; ++i) c *= alphabet();
  return c;
}

Sequence ConceptFamily::decode_answer(int index) const {
  Sequence y(static_cast<std::size_t>(answer_length));
  for (int i = answer_length - 1; i >= 0; --i) {
    y[static_cast<std::size_t>(i)] = index % alphabet();
    index /= alphabet();
  }
  return y;
}

void validate(const ConceptFamily& f) {
  if (f.concepts.empty()) throw InvalidArgument("family needs at least one concept");
  if (f.names.size() != f.concepts.size() || f.prior.size() != f.concepts.size())
    throw InvalidArgument("names and prior must match the concept count");
  for (const auto& c : f.concepts) {
    if (c.length() != f.length() || c.alphabet() != f.alphabet())
      throw ShapeError("concepts must share length and alphabet");
    for (const auto& row : c.positions())
      for (double p : row)
        if (!(p > 0.0)) throw InvalidArgument("family probabilities must be strictly positive");
  }
  double s = 0.0;
  for (double p : f.prior) {
    if (!(p > 0.0)) throw InvalidArgument("prior entries must be positive");
    s += p;
  }
  if (std::abs(s - 1.0) > kSumTol) throw InvalidArgument("prior must sum to 1");
  if (f.query_concept < 0 || f.query_concept >= f.size()) throw InvalidArgument("query concept out of range");
  if (f.pretrain.empty()) throw InvalidArgument("at least one pre-train concept required");
  for (int h : f.pretrain)
    if (h < 0 || h >= f.size()) throw InvalidArgument("pre-train concept out of range");
  if (f.answer_length < 1 || f.answer_length >= f.length())
    throw InvalidArgument("answer_length must be in [1, length)");
}

ConceptFamily parse_concept_family(std::string_view text) {
  int alphabet = 0;
  int length = 0;
  int answer_length = 1;
  std::vector<std::string> names;
  std::vector<std::vector<std::vector<double>>> rows;
  std::vector<std::optional<double>> priors;
  std::string query_name;
  std::vector<std::string> pretrain_names;

  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw InvalidArgument("family config line " + std::to_string(line_no) + ": " + msg);
  };
  auto read_probs = [&](std::istringstream& ls) {
    std::vector<double> p;
    double v;
    while (ls >> v) p.push_back(v);
    if (!ls.eof()) fail("expected numbers");
    if (alphabet && static_cast<int>(p.size()) != alphabet) fail("expected " + std::to_string(alphabet) + " probabilities");
    return p;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "alphabet") {
      if (!(ls >> alphabet) || alphabet < 1) fail("bad alphabet");
    } else if (key == "length") {
      if (!(ls >> length) || length < 1) fail("bad length");
    } else if (key == "answer_length") {
      if (!(ls >> answer_length)) fail("bad answer_length");
    } else if (key == "concept") {
      std::string name;
      if (!(ls >> name)) fail("concept needs a name");
      std::optional<double> prior;
      std::string word;
      if (ls >> word) {
        double p;
        if (word != "prior" || !(ls >> p)) fail("expected 'prior <p>'");
        prior = p;
      }
      names.push_back(name);
      priors.push_back(prior);
      rows.emplace_back();
    } else if (key == "position" || key == "repeat") {
      if (rows.empty()) fail("position before any concept");
      int count = 1;
      if (key == "repeat" && !(ls >> count)) fail("repeat needs a count");
      auto p = read_probs(ls);
      for (int i = 0; i < count; ++i) rows.back().push_back(p);
    } else if (key == "query") {
      if (!(ls >> query_name)) fail("query needs a name");
    } else if (key == "pretrain") {
      std::string n;
      while (ls >> n) pretrain_names.push_back(n);
    } else {
      fail("unknown directive '" + key + "'");
    }
  }

  auto index_of = [&](const std::string& n) {
    auto it = std::find(names.begin(), names.end(), n);
    if (it == names.end()) throw InvalidArgument("unknown concept '" + n + "'");
    return static_cast<int>(it - names.begin());
  };
  if (names.empty()) throw InvalidArgument("family config defines no concepts");
  ConceptFamily f;
  f.names = names;
  f.answer_length = answer_length;
  const bool any_prior = std::any_of(priors.begin(), priors.end(), [](auto& p) { return p.has_value(); });
  const bool all_prior = std::all_of(priors.begin(), priors.end(), [](auto& p) { return p.has_value(); });
  if (any_prior && !all_prior) throw InvalidArgument("give a prior for every concept or for none");
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (length && static_cast<int>(rows[i].size()) != length)
      throw InvalidArgument("concept '" + names[i] + "' has " + std::to_string(rows[i].size()) +
                            " positions, expected " + std::to_string(length));
    f.concepts.emplace_back(rows[i]);
    f.prior.push_back(all_prior ? *priors[i] : 1.0 / static_cast<double>(names.size()));
  }
  f.query_concept = query_name.empty() ? 0 : index_of(query_name);
  for (const auto& n : pretrain_names) f.pretrain.push_back(index_of(n));
  if (f.pretrain.empty()) f.pretrain.push_back(f.query_concept);
  validate(f);
  return f;
}

ConceptFamily load_concept_family(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open family config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_concept_family(buf.str());
}

std::vector<double> answer_distribution(const ConceptFamily& f, int concept_index, std::span<const int>) {
  const auto& c = f.concepts.at(static_cast<std::size_t>(concept_index));
  const int offset = f.prefix_length();
  std::vector<double> out(static_cast<std::size_t>(f.answer_count()));
  for (int y = 0; y < f.answer_count(); ++y) {
    const Sequence sym = f.decode_answer(y);
    double p = 1.0;
    for (int i = 0; i < f.answer_length; ++i) p *= c.prob(offset + i, sym[static_cast<std::size_t>(i)]);
    out[static_cast<std::size_t>(y)] = p;
  }
  return out;
}

MarginReport compute_margins(const ConceptFamily& f, int n1, int H, int n, Rng& rng, int epsilon_samples) {
  validate(f);
  if (n1 < 1 || H < 1 || n < 1) throw InvalidArgument("n1, H and n must be >= 1");
  if (epsilon_samples < 1) throw InvalidArgument("epsilon_samples must be >= 1");
  const auto& star = f.concepts[static_cast<std::size_t>(f.query_concept)];
  MarginReport r;

  std::vector<int> generators(f.pretrain.begin(), f.pretrain.end());
  generators.push_back(f.query_concept);
  std::sort(generators.begin(), generators.end());
  generators.erase(std::unique(generators.begin(), generators.end()), generators.end());

  for (int t = 0; t < f.size(); ++t) {
    if (t == f.query_concept) continue;
    const auto& theta = f.concepts[static_cast<std::size_t>(t)];
    double avg = 0.0;
    for (int h = 0; h < H; ++h) {
      const auto& ph = pretrain_concept(f, h);
      avg += kl_divergence(ph, star) - kl_divergence(ph, theta);
    }
    avg /= H;
    r.c1 = r.c1 ? std::max(*r.c1, avg) : avg;
    const double c2 = -kl_divergence(star, theta);
    r.c2 = r.c2 ? std::max(*r.c2, c2) : c2;
    for (int g : generators)
      r.sigma2 = std::max(r.sigma2, log_ratio_variance(f.concepts[static_cast<std::size_t>(g)], theta, star));
  }

  double eps = std::numeric_limits<double>::infinity();
  for (int s = 0; s < epsilon_samples; ++s) {
    const Sequence xq = star.sample(rng);
    const auto probs = answer_distribution(f, f.query_concept, std::span<const int>(xq).first(static_cast<std::size_t>(f.prefix_length())));
    const int best = argmax_lowest(probs);
    double runner = 0.0;
    for (int y = 0; y < static_cast<int>(probs.size()); ++y)
      if (y != best) runner = std::max(runner, probs[static_cast<std::size_t>(y)]);
    eps = std::min(eps, probs[static_cast<std::size_t>(best)] - runner);
  }
  r.epsilon = eps * f.prior[static_cast<std::size_t>(f.query_concept)];

  const double sigma = std::sqrt(r.sigma2);
  if (r.c1) r.c1_adjusted = *r.c1 + 3.0 * sigma / std::sqrt(static_cast<double>(n1) * H);
  if (r.c2) r.c2_adjusted = *r.c2 + 3.0 * sigma / std::sqrt(static_cast<double>(n));
  r.applicable = (!r.c1 || *r.c1 < 0.0) && (!r.c2 || *r.c2 < 0.0);
  return r;
}

ThresholdFlags check_thresholds(const MarginReport& r, int n1, int H, int n) {
  ThresholdFlags flags;
  const double pre = static_cast<double>(n1) * H;
  flags.pretrain_count = !r.c1 || pre > 9.0 * r.sigma2 / (*r.c1 * *r.c1);
  flags.prompt_count = !r.c2 || n > 9.0 * r.sigma2 / (*r.c2 * *r.c2);
  if (!r.c1_adjusted || !r.c2_adjusted) {
    flags.margin = true;
  } else if (r.epsilon > 0.0) {
    flags.margin = -(pre * *r.c1_adjusted + n * *r.c2_adjusted) > std::log(1.0 / r.epsilon);
  }
  return flags;
}

Observations sample_observations(const ConceptFamily& f, int n1, int H, int n, Rng& rng) {
  Observations obs;
  obs.pretrain.resize(static_cast<std::size_t>(H));
  for (int h = 0; h < H; ++h) {
    const auto& c = pretrain_concept(f, h);
    for (int j = 0; j < n1; ++j) obs.pretrain[static_cast<std::size_t>(h)].push_back(c.sample(rng));
  }
  const auto& star = f.concepts[static_cast<std::size_t>(f.query_concept)];
  for (int i = 0; i < n; ++i) obs.contexts.push_back(star.sample(rng));
  obs.query = star.sample(rng);
  return obs;
}

PosteriorReport exact_posterior(const ConceptFamily& f, const Observations& obs) {
  const auto m = static_cast<std::size_t>(f.size());
  const auto& star = f.concepts[static_cast<std::size_t>(f.query_concept)];
  const int prefix = f.prefix_length();
  if (static_cast<int>(obs.query.size()) < prefix) throw ShapeError("query shorter than the prefix");

  std::size_t pre_count = 0;
  for (const auto& d : obs.pretrain) pre_count += d.size();

  PosteriorReport rep;
  rep.r.assign(m, 0.0);
  rep.q.assign(m, 0.0);
  std::vector<double> log_w(m);
  for (std::size_t t = 0; t < m; ++t) {
    const auto& theta = f.concepts[t];
    double r_sum = 0.0;
    for (const auto& d : obs.pretrain)
      for (const auto& s : d) r_sum += theta.log_prob(s) - star.log_prob(s);
    double q_sum = 0.0;
    for (const auto& s : obs.contexts) q_sum += theta.log_prob(s) - star.log_prob(s);
    if (pre_count) rep.r[t] = r_sum / static_cast<double>(pre_count);
    if (!obs.contexts.empty()) rep.q[t] = q_sum / static_cast<double>(obs.contexts.size());
    const double xq_ratio = theta.log_prob(obs.query, 0, prefix) - star.log_prob(obs.query, 0, prefix);
    log_w[t] = std::log(f.prior[t]) + r_sum + q_sum + xq_ratio;
  }
  const double norm = log_sum_exp(log_w);
  rep.concept_weights.resize(m);
  for (std::size_t t = 0; t < m; ++t) rep.concept_weights[t] = std::exp(log_w[t] - norm);

  const std::span<const int> xq(obs.query.data(), static_cast<std::size_t>(prefix));
  rep.posterior.assign(static_cast<std::size_t>(f.answer_count()), 0.0);
  for (std::size_t t = 0; t < m; ++t) {
    const auto py = answer_distribution(f, static_cast<int>(t), xq);
    for (std::size_t y = 0; y < py.size(); ++y) rep.posterior[y] += rep.concept_weights[t] * py[y];
  }
  rep.argmax = argmax_lowest(rep.posterior);
  rep.reference_argmax = argmax_lowest(answer_distribution(f, f.query_concept, xq));
  rep.agreement = rep.argmax == rep.reference_argmax;
  return rep;
}

AgreementResult monte_carlo_agreement(const ConceptFamily& f, int n1, int H, int n, int trials,
                                      std::uint64_t seed) {
  validate(f);
  if (trials < 1) throw InvalidArgument("trials must be >= 1");
  std::vector<double> agree(static_cast<std::size_t>(trials));
  std::vector<double> weight(static_cast<std::size_t>(trials));
  parallel_for(agree.size(), [&](std::size_t i) {
    Rng rng(seed, {static_cast<std::uint64_t>(i)});
    const auto rep = exact_posterior(f, sample_observations(f, n1, H, n, rng));
    agree[i] = rep.agreement ? 1.0 : 0.0;
    weight[i] = rep.concept_weights[static_cast<std::size_t>(f.query_concept)];
  });
  AgreementResult out;
  out.trials = trials;
  out.agreement_rate = pairwise_sum(std::move(agree)) / trials;
  out.mean_query_concept_weight = pairwise_sum(std::move(weight)) / trials;
  return out;
}

std::string to_json(const MarginReport& r) {
  nlohmann::json j;
  j["c1"] = optional_json(r.c1);
  j["c2"] = optional_json(r.c2);
  j["sigma2"] = r.sigma2;
  j["epsilon"] = r.epsilon;
  j["c1_adjusted"] = optional_json(r.c1_adjusted);
  j["c2_adjusted"] = optional_json(r.c2_adjusted);
  j["applicable"] = r.applicable;
  return j.dump(2);
}

std::string to_json(const PosteriorReport& r) {
  nlohmann::json j;
  j["posterior"] = r.posterior;
  j["concept_weights"] = r.concept_weights;
  j["r"] = r.r;
  j["q"] = r.q;
  j["argmax"] = r.argmax;
  j["reference_argmax"] = r.reference_argmax;
  j["agreement"] = r.agreement;
  return j.dump(2);
}

}  // namespace icl
