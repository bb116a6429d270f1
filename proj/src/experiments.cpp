#include "icl/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "icl/attention.hpp"
#include "icl/encoding.hpp"
#include "icl/error.hpp"
#include "icl/parallel.hpp"
#include "icl/prompting.hpp"
#include "icl/stats.hpp"

namespace icl {
namespace {

using json = nlohmann::ordered_json;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Substream tags; one per kind of draw so streams never overlap.
enum Stream : std::uint64_t {
  kTrainStream = 1,
  kFixedConcept = 2,
  kFig2Query = 3,
  kClaim1Trial = 4,
  kProbe = 6,
  kAblationInit = 7,
  kMargins = 8,
  kAgreement = 9,
  kPrompts = 10,
  kQueryFile = 11,
};

class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
  }

  void write(const std::string& name, const std::string& body) {
    std::ofstream out(root_ / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (root_ / name).string());
    out << body;
    files_.push_back(name);
  }

  std::vector<std::string> files() const { return files_; }

 private:
  std::filesystem::path root_;
  std::vector<std::string> files_;
};

json config_json(const ExperimentConfig& c) {
  json j = json::object();
  std::istringstream in(to_text(c));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

json checks_json(const std::vector<Check>& checks) {
  json arr = json::array();
  for (const auto& c : checks)
    arr.push_back({{"name", c.name}, {"pass", c.pass}, {"category", static_cast<int>(c.category)},
                   {"detail", c.detail}});
  return arr;
}

json envelope(const std::string& command, const ExperimentConfig& config, std::uint64_t seed) {
  json j;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = config_json(config);
  // The model acts on the T+K+2 two-hot rows directly; there is no hidden
  // embedding layer.
  j["encoding_rows"] = config.topics + config.classes + 2;
  return j;
}

CommandResult finish(json summary, std::vector<Check> checks, OutputDir& out) {
  summary["checks"] = checks_json(checks);
  CommandResult r;
  r.summary_json = summary.dump(2) + "\n";
  out.write("summary.json", r.summary_json);
  r.checks = std::move(checks);
  r.files = out.files();
  return r;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

std::string histogram_csv(const std::vector<double>& h) {
  std::ostringstream out;
  out.precision(17);
  out << "topic,frequency\n";
  for (std::size_t t = 0; t < h.size(); ++t) out << t + 1 << ',' << h[t] << '\n';
  return out.str();
}

int histogram_mode(const std::vector<double>& h) {
  return static_cast<int>(std::max_element(h.begin(), h.end()) - h.begin()) + 1;
}

PositionWeightedAttention checked_weights(const ExperimentConfig& c, double mask_fraction) {
  auto weights = position_weights(c.contexts, c.gamma);
  if (auto violation = check_class_dominance(weights, c.key_class_prob, c.classes, mask_fraction))
    throw ConfigError({"contexts/gamma: " + *violation});
  return make_position_weighted(std::move(weights));
}

Vocabulary vocab_of(const ExperimentConfig& c) { return Vocabulary(c.topics, c.classes); }

}  // namespace

ExitCode CommandResult::exit_code() const {
  for (const auto& c : checks)
    if (!c.pass) return c.category;
  return ExitCode::Ok;
}

ConceptSpec make_query_concept(const ExperimentConfig& c, Rng& rng, TopicMode mode) {
  ConceptSpec spec = sample_concept(rng, vocab_of(c), c.tau, mode, c.key_topic_prob, c.key_class_prob);
  if (c.target_topic > 0) {
    auto& sel = spec.selected_topics;
    if (std::find(sel.begin(), sel.end(), c.target_topic) == sel.end())
      *std::find(sel.begin(), sel.end(), spec.key_topic) = c.target_topic;
    spec.key_topic = c.target_topic;
  }
  return spec;
}

TrainingSample make_train_sample(const ExperimentConfig& c, std::uint64_t seed, std::size_t i,
                                 const ConceptSpec& fixed_concept) {
  const Vocabulary vocab = vocab_of(c);
  Rng rng(seed, {kTrainStream, static_cast<std::uint64_t>(i)});
  const ConceptSpec spec =
      c.train_fresh_concepts
          ? sample_concept(rng, vocab, c.tau, c.topic_mode, c.key_topic_prob, c.key_class_prob)
          : fixed_concept;
  const int len = c.train_seq_len > 0 ? c.train_seq_len : rng.uniform_int(c.seq_len_min, c.seq_len_max);
  return make_training_sample(vocab, mask_random(rng, gen_train_sequence(rng, vocab, spec, len), c.mask_prob));
}

// ---------------------------------------------------------------------------
// fig2

Fig2Result run_fig2_histograms(const ExperimentConfig& c, std::uint64_t seed) {
  validate(c);
  const Vocabulary vocab = vocab_of(c);
  const int len = c.prompt_seq_len;
  const int l1 = c.prefix_len(len);
  const int l2 = len - l1;
  const auto attention = checked_weights(c, static_cast<double>(l2) / len);
  const auto closed = closed_form_value_matrix(c.mask_prob, c.topics, c.classes);
  Rng base(seed, {kFixedConcept});
  const ConceptSpec fixed = make_query_concept(c, base, c.topic_mode);

  const auto no_icl_cols = prediction_columns(l1, len, 0);
  const auto icl_cols = prediction_columns(l1, len, c.contexts);
  struct Slot {
    std::vector<double> no_icl, icl;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(c.query_count));
  parallel_for(slots.size(), [&](std::size_t q) {
    Rng rng(seed, {kFig2Query, static_cast<std::uint64_t>(q)});
    const ConceptSpec spec = c.target_topic > 0 ? fixed : make_query_concept(c, rng, c.topic_mode);
    auto bundle = gen_query_and_contexts(rng, vocab, spec, len, l1, c.contexts);
    const EncodedMatrix query = encode_masked(vocab, mask_suffix(bundle.query, l2));
    std::vector<EncodedMatrix> ctx;
    for (const auto& s : bundle.contexts) ctx.push_back(encode(vocab, s));
    const PromptStacked prompt = build_stacked_prompt(std::move(ctx), query);

    Slot& s = slots[q];
    s.no_icl.assign(static_cast<std::size_t>(c.topics), 0.0);
    s.icl.assign(static_cast<std::size_t>(c.topics), 0.0);
    const MatrixXd a = forward_columns(closed.value, UniformAttention{}, query.values, no_icl_cols);
    const MatrixXd b = forward_columns(closed.value, attention, prompt.assembled.values, icl_cols, len);
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      s.no_icl[static_cast<std::size_t>(topic_argmax(a.col(j), c.topics) - 1)] += 1.0;
      s.icl[static_cast<std::size_t>(topic_argmax(b.col(j), c.topics) - 1)] += 1.0;
    }
  });

  Fig2Result r;
  r.target_topic = fixed.key_topic;
  r.weights = attention.weights;
  std::vector<std::vector<double>> a, b;
  for (auto& s : slots) {
    a.push_back(std::move(s.no_icl));
    b.push_back(std::move(s.icl));
  }
  auto fold = [&](const std::vector<std::vector<double>>& parts) {
    std::vector<double> h(static_cast<std::size_t>(c.topics), 0.0);
    for (std::size_t t = 0; t < h.size(); ++t) {
      std::vector<double> col(parts.size());
      for (std::size_t q = 0; q < parts.size(); ++q) col[q] = parts[q][t];
      h[t] = pairwise_sum(std::move(col));
    }
    const double n = std::accumulate(h.begin(), h.end(), 0.0);
    for (double& x : h) x /= n;
    return h;
  };
  r.hist_no_icl = fold(a);
  r.hist_icl = fold(b);
  r.mode_no_icl = histogram_mode(r.hist_no_icl);
  r.mode_icl = histogram_mode(r.hist_icl);
  return r;
}

CommandResult cmd_fig2(const ExperimentConfig& c, std::uint64_t seed, const std::filesystem::path& dir) {
  const Fig2Result r = run_fig2_histograms(c, seed);
  OutputDir out(dir);
  out.write("hist_no_icl.csv", histogram_csv(r.hist_no_icl));
  out.write("hist_icl.csv", histogram_csv(r.hist_icl));

  std::vector<Check> checks;
  const double sum_a = std::accumulate(r.hist_no_icl.begin(), r.hist_no_icl.end(), 0.0);
  const double sum_b = std::accumulate(r.hist_icl.begin(), r.hist_icl.end(), 0.0);
  checks.push_back({"histograms_normalized", std::abs(sum_a - 1) < 1e-9 && std::abs(sum_b - 1) < 1e-9,
                    ExitCode::Normalization, "sums " + fmt(sum_a) + ", " + fmt(sum_b)});
  json j = envelope("fig2", c, seed);
  if (c.target_topic > 0) {
    const auto t = static_cast<std::size_t>(r.target_topic - 1);
    checks.push_back({"icl_mode_is_target", r.mode_icl == r.target_topic, ExitCode::Fig2Property,
                      "mode " + std::to_string(r.mode_icl) + ", target " + std::to_string(r.target_topic)});
    checks.push_back({"icl_doubles_target_frequency", r.hist_icl[t] >= 2.0 * r.hist_no_icl[t],
                      ExitCode::Fig2Property, fmt(r.hist_icl[t]) + " vs " + fmt(r.hist_no_icl[t])});
    j["freq_target_no_icl"] = r.hist_no_icl[t];
    j["freq_target_icl"] = r.hist_icl[t];
  }
  j["target_topic"] = r.target_topic;
  j["position_weights"] = r.weights;
  j["mode_no_icl"] = r.mode_no_icl;
  j["mode_icl"] = r.mode_icl;
  j["hist_no_icl"] = r.hist_no_icl;
  j["hist_icl"] = r.hist_icl;
  return finish(std::move(j), std::move(checks), out);
}

// ---------------------------------------------------------------------------
// claim1

Claim1Result run_claim1_trials(const ExperimentConfig& c, std::uint64_t seed) {
  validate(c);
  const Vocabulary vocab = vocab_of(c);
  const int len = c.claim1_seq_len;
  // The masked share of the query matches the training mask rate.
  const int l2 = std::clamp(static_cast<int>(std::lround(c.mask_prob * len)), 1, len - 1);
  const int l1 = len - l2;
  const double m = static_cast<double>(l2) / len;
  const auto attention = checked_weights(c, m);
  const auto closed = closed_form_value_matrix(c.mask_prob, c.topics, c.classes);
  const RowLayout layout{c.topics, c.classes};

  struct Slot {
    double max_dev = 0, key_value = 0, gap = 0;
    std::vector<double> rows;
    int topic_arg = 0;
    bool class_ok = false, icl_topic_ok = false, icl_class_ok = false;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(c.claim1_trials));
  const int no_icl_col = l1;
  const int icl_col = c.contexts * len + l1;
  parallel_for(slots.size(), [&](std::size_t t) {
    Rng rng(seed, {kClaim1Trial, static_cast<std::uint64_t>(t)});
    const ConceptSpec spec =
        sample_concept(rng, vocab, c.tau, c.claim1_topic_mode, c.key_topic_prob, c.key_class_prob);
    auto bundle = gen_query_and_contexts(rng, vocab, spec, len, l1, c.contexts);
    const int key_class = bundle.query.front().cls;
    const EncodedMatrix query = encode_masked(vocab, mask_suffix(bundle.query, l2));
    std::vector<EncodedMatrix> ctx;
    for (const auto& s : bundle.contexts) ctx.push_back(encode(vocab, s));
    const PromptStacked prompt = build_stacked_prompt(std::move(ctx), query);

    const VectorXd a =
        forward_columns(closed.value, UniformAttention{}, query.values, std::span<const int>(&no_icl_col, 1)).col(0);
    const VectorXd b =
        forward_columns(closed.value, attention, prompt.assembled.values, std::span<const int>(&icl_col, 1), len)
            .col(0);
    Slot& s = slots[t];
    for (int l = 1; l <= c.topics; ++l) {
      s.rows.push_back(a(layout.topic(l)));
      s.max_dev = std::max(s.max_dev, std::abs(a(layout.topic(l)) - 1.0 / c.topics));
    }
    s.topic_arg = topic_argmax(a, c.topics);
    s.key_value = a(layout.cls(key_class));
    s.class_ok = class_argmax(a, c.topics, c.classes) == key_class;
    s.icl_topic_ok = topic_argmax(b, c.topics) == spec.key_topic;
    s.icl_class_ok = class_argmax(b, c.topics, c.classes) == key_class;
    double others = 0.0;
    for (int l = 1; l <= c.topics; ++l)
      if (l != spec.key_topic) others += b(layout.topic(l));
    s.gap = b(layout.topic(spec.key_topic)) - others / (c.topics - 1);
  });

  Claim1Result r;
  r.trials = c.claim1_trials;
  r.seq_len = len;
  r.suffix_len = l2;
  r.weights = attention.weights;
  r.topic_argmax_counts.assign(static_cast<std::size_t>(c.topics), 0.0);
  std::vector<double> key_values, gaps, class_ok, topic_icl, class_icl;
  std::vector<std::vector<double>> row_sums(static_cast<std::size_t>(c.topics));
  for (const auto& s : slots) {
    r.max_topic_deviation = std::max(r.max_topic_deviation, s.max_dev);
    r.max_key_class_deviation = std::max(r.max_key_class_deviation, std::abs(s.key_value - c.key_class_prob));
    r.topic_argmax_counts[static_cast<std::size_t>(s.topic_arg - 1)] += 1.0;
    key_values.push_back(s.key_value);
    gaps.push_back(s.gap);
    class_ok.push_back(s.class_ok);
    topic_icl.push_back(s.icl_topic_ok);
    class_icl.push_back(s.icl_class_ok);
    for (int l = 0; l < c.topics; ++l) row_sums[static_cast<std::size_t>(l)].push_back(s.rows[static_cast<std::size_t>(l)]);
  }
  const double n = r.trials;
  for (auto& rows : row_sums)
    r.mean_topic_deviation = std::max(r.mean_topic_deviation, std::abs(pairwise_sum(rows) / n - 1.0 / c.topics));
  r.mean_key_class_value = pairwise_sum(key_values) / n;
  r.class_rate_no_icl = pairwise_sum(class_ok) / n;
  r.topic_rate_icl = pairwise_sum(topic_icl) / n;
  r.class_rate_icl = pairwise_sum(class_icl) / n;
  r.measured_gap = pairwise_sum(gaps) / n;
  const std::vector<double> uniform(static_cast<std::size_t>(c.topics), 1.0 / c.topics);
  r.topic_argmax_pvalue = chi_square_gof(r.topic_argmax_counts, uniform).p_value;
  const double context_mass = std::accumulate(r.weights.begin(), r.weights.end() - 1, 0.0);
  r.analytic_gap = context_mass * m / (1.0 - c.mask_prob);
  return r;
}

CommandResult cmd_claim1(const ExperimentConfig& c, std::uint64_t seed, const std::filesystem::path& dir) {
  const Claim1Result r = run_claim1_trials(c, seed);
  OutputDir out(dir);
  std::vector<Check> checks;
  checks.push_back({"no_icl_topic_rows", r.max_topic_deviation <= 0.03, ExitCode::TopicLaw,
                    "max |row - 1/T| = " + fmt(r.max_topic_deviation)});
  checks.push_back({"no_icl_topic_argmax_uniform", r.topic_argmax_pvalue > 1e-3, ExitCode::TopicLaw,
                    "chi-square p = " + fmt(r.topic_argmax_pvalue)});
  checks.push_back({"no_icl_key_class_value", r.max_key_class_deviation <= 0.03, ExitCode::ClassLaw,
                    "max |row - Q| = " + fmt(r.max_key_class_deviation)});
  checks.push_back({"no_icl_class_argmax", r.class_rate_no_icl >= 0.99, ExitCode::ClassLaw,
                    "rate " + fmt(r.class_rate_no_icl)});
  checks.push_back({"icl_topic_argmax", r.topic_rate_icl >= 0.99, ExitCode::IclTopic, "rate " + fmt(r.topic_rate_icl)});
  checks.push_back({"icl_class_argmax", r.class_rate_icl >= 0.99, ExitCode::IclClass, "rate " + fmt(r.class_rate_icl)});
  checks.push_back({"icl_topic_gap", std::abs(r.measured_gap - r.analytic_gap) <= 0.01, ExitCode::TopicGap,
                    "measured " + fmt(r.measured_gap) + ", analytic " + fmt(r.analytic_gap)});
  json j = envelope("claim1", c, seed);
  j["trials"] = r.trials;
  j["seq_len"] = r.seq_len;
  j["suffix_len"] = r.suffix_len;
  j["position_weights"] = r.weights;
  j["no_icl"] = {{"max_topic_deviation", r.max_topic_deviation},
                 {"mean_topic_deviation", r.mean_topic_deviation},
                 {"topic_argmax_counts", r.topic_argmax_counts},
                 {"topic_argmax_pvalue", r.topic_argmax_pvalue},
                 {"mean_key_class_value", r.mean_key_class_value},
                 {"max_key_class_deviation", r.max_key_class_deviation},
                 {"class_argmax_rate", r.class_rate_no_icl}};
  j["icl"] = {{"topic_argmax_rate", r.topic_rate_icl},
              {"class_argmax_rate", r.class_rate_icl},
              {"measured_topic_gap", r.measured_gap},
              {"analytic_topic_gap", r.analytic_gap}};
  return finish(std::move(j), std::move(checks), out);
}

// ---------------------------------------------------------------------------
// solver check / train

SolverRunResult run_solver_check(const ExperimentConfig& c, std::uint64_t seed, int probes) {
  validate(c);
  const Vocabulary vocab = vocab_of(c);
  SolverRunResult r;
  r.closed = closed_form_value_matrix(c.mask_prob, c.topics, c.classes);
  Rng base(seed, {kFixedConcept});
  const ConceptSpec fixed = sample_concept(base, vocab, c.tau, c.topic_mode, c.key_topic_prob, c.key_class_prob);
  const auto objective = QuadraticObjective::build(
      static_cast<std::size_t>(c.train_count),
      [&](std::size_t i) { return make_train_sample(c, seed, i, fixed); }, UniformAttention{});
  r.stable_step = objective.stable_step_threshold(c.train_lambda);
  r.learning_rate = c.train_lr > 0.0 ? c.train_lr : 0.5 * r.stable_step;
  TrainConfig tc{r.learning_rate, c.train_steps, c.train_lambda, c.train_count, seed};
  r.train = train_gd(objective, tc);
  for (std::size_t i = 1; i < r.train.curve.size(); ++i) {
    const double prev = r.train.curve[i - 1].data_loss;
    if (r.train.curve[i].data_loss > prev + 1e-12 * std::max(1.0, std::abs(prev))) r.monotone = false;
  }

  const int len = c.train_seq_len > 0 ? c.train_seq_len : c.prompt_seq_len;
  const int l2 = std::clamp(static_cast<int>(std::lround(c.mask_prob * len)), 1, len - 1);
  std::vector<ProbeQuery> probe(static_cast<std::size_t>(probes), ProbeQuery{{}, len - l2});
  parallel_for(probe.size(), [&](std::size_t i) {
    Rng rng(seed, {kProbe, static_cast<std::uint64_t>(i)});
    const ConceptSpec spec = sample_concept(rng, vocab, c.tau, c.topic_mode, c.key_topic_prob, c.key_class_prob);
    probe[i].masked = encode_masked(vocab, mask_suffix(gen_query_sequence(rng, vocab, spec, len, len - l2), l2));
  });
  r.comparison = compare_to_closed_form(r.train.value, r.closed, probe, UniformAttention{}, &objective, c.train_lambda);
  return r;
}

CommandResult cmd_train(const ExperimentConfig& c, std::uint64_t seed, const std::filesystem::path& dir) {
  const SolverRunResult r = run_solver_check(c, seed);
  OutputDir out(dir);
  out.write("curve.csv", curve_to_csv(r.train.curve));
  out.write("model.json", to_json(ModelParams(r.train.value, UniformAttention{}, c.topics, c.classes)) + "\n");
  std::vector<Check> checks;
  checks.push_back({"data_loss_nonincreasing", r.monotone, ExitCode::SolverMismatch,
                    "learning rate " + fmt(r.learning_rate) + ", stable below " + fmt(r.stable_step)});
  json j = envelope("train", c, seed);
  j["learning_rate"] = r.learning_rate;
  j["stable_step_threshold"] = r.stable_step;
  j["initial_data_loss"] = r.train.curve.front().data_loss;
  j["final_data_loss"] = r.train.curve.back().data_loss;
  j["final_reg_loss"] = r.train.curve.back().reg_loss;
  j["closed_form"] = {{"u", r.closed.u}, {"q", r.closed.q}};
  j["comparison"] = {{"loss_gap", r.comparison.loss_gap},
                     {"frobenius_distance", r.comparison.frobenius_distance},
                     {"max_prediction_deviation", r.comparison.max_prediction_deviation}};
  return finish(std::move(j), std::move(checks), out);
}

CommandResult cmd_solve(const ExperimentConfig& c, std::uint64_t seed, const std::filesystem::path& dir) {
  validate(c);
  const auto closed = closed_form_value_matrix(c.mask_prob, c.topics, c.classes);
  OutputDir out(dir);
  out.write("model.json", to_json(closed.params()) + "\n");
  const int len = c.prompt_seq_len;
  const auto weights = checked_weights(c, static_cast<double>(c.suffix_len(len)) / len);
  out.write("model_icl.json", to_json(closed.params(weights)) + "\n");
  json j = envelope("solve", c, seed);
  const double p = c.mask_prob;
  j["u"] = closed.u;
  j["q"] = closed.q;
  j["topic_block"] = {{"diagonal", closed.u + 1.0 / (1.0 - p)},
                      {"off_diagonal", closed.u},
                      {"mask_column", -closed.u * (1.0 - p) / p}};
  j["class_block"] = {{"diagonal", closed.q + 1.0 / (1.0 - p)},
                      {"off_diagonal", closed.q},
                      {"mask_column", -closed.q * (1.0 - p) / p}};
  j["frobenius_norm"] = closed.value.norm();
  return finish(std::move(j), {}, out);
}

// ---------------------------------------------------------------------------
// ablation

AblationResult run_ablation_experiment(const ExperimentConfig& c, std::uint64_t seed) {
  validate(c);
  ExperimentConfig dc = c;
  dc.train_seq_len = c.ablation_seq_len;
  Rng base(seed, {kFixedConcept});
  const ConceptSpec fixed =
      sample_concept(base, vocab_of(c), c.tau, c.topic_mode, c.key_topic_prob, c.key_class_prob);
  std::vector<TrainingSample> train(static_cast<std::size_t>(c.ablation_train));
  std::vector<TrainingSample> valid(static_cast<std::size_t>(c.ablation_valid));
  parallel_for(train.size(), [&](std::size_t i) { train[i] = make_train_sample(dc, seed, i, fixed); });
  parallel_for(valid.size(), [&](std::size_t i) { valid[i] = make_train_sample(dc, seed, train.size() + i, fixed); });

  AblationResult r;
  const auto objective = QuadraticObjective::build(train, UniformAttention{});
  r.learning_rate = c.ablation_lr > 0.0 ? c.ablation_lr : 1.0 / objective.curvature_bound(c.ablation_lambda);

  const int rows = c.topics + c.classes + 2;
  Rng init_rng(seed, {kAblationInit});
  JointState init{MatrixXd::Zero(rows, rows), MatrixXd(rows, rows), MatrixXd(rows, rows)};
  for (int i = 0; i < rows; ++i)
    for (int k = 0; k < rows; ++k) init.key(i, k) = c.ablation_init_scale * init_rng.normal();
  for (int i = 0; i < rows; ++i)
    for (int k = 0; k < rows; ++k) init.query(i, k) = c.ablation_init_scale * init_rng.normal();

  TrainConfig tc{r.learning_rate, c.ablation_steps, c.ablation_lambda, c.ablation_train, seed};
  auto run = [&](bool learned) {
    AblationRun out;
    out.curve = train_joint(train, valid, init, tc, learned, c.ablation_eval_every).curve;
    out.final_train = out.curve.back().train_data_loss;
    out.final_valid = out.curve.back().valid_data_loss;
    return out;
  };
  r.uniform = run(false);
  r.learned = run(true);
  r.train_gap = std::abs(r.uniform.final_train - r.learned.final_train) / r.uniform.final_train;
  r.valid_gap = std::abs(r.uniform.final_valid - r.learned.final_valid) / r.uniform.final_valid;
  return r;
}

namespace {

bool nonincreasing_after(const std::vector<JointCurvePoint>& curve, int from) {
  for (std::size_t i = 1; i < curve.size(); ++i) {
    if (curve[i - 1].step < from) continue;
    if (curve[i].train_data_loss > curve[i - 1].train_data_loss * (1.0 + 1e-12)) return false;
  }
  return true;
}

std::string joint_curve_csv(const std::vector<JointCurvePoint>& curve) {
  std::ostringstream out;
  out.precision(17);
  out << "step,train_data_loss,valid_data_loss\n";
  for (const auto& p : curve) out << p.step << ',' << p.train_data_loss << ',' << p.valid_data_loss << '\n';
  return out.str();
}

}  // namespace

CommandResult cmd_ablation(const ExperimentConfig& c, std::uint64_t seed, const std::filesystem::path& dir) {
  const AblationResult r = run_ablation_experiment(c, seed);
  OutputDir out(dir);
  out.write("curve_uniform.csv", joint_curve_csv(r.uniform.curve));
  out.write("curve_learned.csv", joint_curve_csv(r.learned.curve));
  std::vector<Check> checks;
  checks.push_back({"shared_initial_loss",
                    r.uniform.curve.front().train_data_loss == r.learned.curve.front().train_data_loss,
                    ExitCode::AblationGap, ""});
  checks.push_back({"train_gap_below_5pct", r.train_gap < 0.05, ExitCode::AblationGap, "gap " + fmt(r.train_gap)});
  checks.push_back({"valid_gap_below_5pct", r.valid_gap < 0.05, ExitCode::AblationGap, "gap " + fmt(r.valid_gap)});
  checks.push_back({"curves_nonincreasing_after_step_10",
                    nonincreasing_after(r.uniform.curve, 10) && nonincreasing_after(r.learned.curve, 10),
                    ExitCode::AblationGap, ""});
  json j = envelope("ablation", c, seed);
  j["learning_rate"] = r.learning_rate;
  j["uniform"] = {{"initial_train", r.uniform.curve.front().train_data_loss},
                  {"final_train", r.uniform.final_train},
                  {"final_valid", r.uniform.final_valid}};
  j["learned"] = {{"initial_train", r.learned.curve.front().train_data_loss},
                  {"final_train", r.learned.final_train},
                  {"final_valid", r.learned.final_valid}};
  j["train_gap"] = r.train_gap;
  j["valid_gap"] = r.valid_gap;
  return finish(std::move(j), std::move(checks), out);
}

// ---------------------------------------------------------------------------
// theorem1

ConceptFamily bernoulli_family(int length, double star, double other) {
  std::ostringstream text;
  text << "alphabet 2\nlength " << length << "\n";
  text.precision(17);
  text << "concept star\nrepeat " << length << ' ' << 1.0 - star << ' ' << star << "\n";
  text << "concept other\nrepeat " << length << ' ' << 1.0 - other << ' ' << other << "\n";
  text << "query star\npretrain star\n";
  return parse_concept_family(text.str());
}

std::vector<TheoremPoint> run_theorem1_grid(const ExperimentConfig& c, const ConceptFamily& family,
                                            std::uint64_t seed) {
  validate(c);
  std::vector<TheoremPoint> out;
  std::uint64_t idx = 0;
  for (int n1 : c.theorem_n1)
    for (int h : c.theorem_H)
      for (int n : c.theorem_n) {
        TheoremPoint p{n1, h, n, {}, {}, {}};
        Rng mr(seed, {kMargins, idx});
        p.margins = compute_margins(family, n1, h, n, mr, c.epsilon_samples);
        p.flags = check_thresholds(p.margins, n1, h, n);
        Rng ar(seed, {kAgreement, idx});
        p.agreement = monte_carlo_agreement(family, n1, h, n, c.theorem_trials, ar.engine()());
        out.push_back(p);
        ++idx;
      }
  return out;
}

CommandResult cmd_theorem1(const ExperimentConfig& c, std::uint64_t seed, const std::filesystem::path& dir) {
  const ConceptFamily family = c.family.empty() ? bernoulli_family() : load_concept_family(c.family);
  const auto grid = run_theorem1_grid(c, family, seed);
  OutputDir out(dir);
  std::ostringstream csv;
  csv.precision(17);
  csv << "n1,H,n,c1,c2,sigma2,epsilon,pretrain_flag,prompt_flag,margin_flag,agreement,mean_query_weight\n";
  auto num = [](const std::optional<double>& v) {
    if (!v) return std::string("vacuous");
    std::ostringstream s;
    s.precision(17);
    s << *v;
    return s.str();
  };
  std::vector<Check> checks;
  json rows = json::array();
  double worst = 1.0;
  for (const auto& p : grid) {
    csv << p.n1 << ',' << p.H << ',' << p.n << ',' << num(p.margins.c1) << ',' << num(p.margins.c2) << ','
        << p.margins.sigma2 << ',' << p.margins.epsilon << ',' << p.flags.pretrain_count << ','
        << p.flags.prompt_count << ',' << p.flags.margin << ',' << p.agreement.agreement_rate << ','
        << p.agreement.mean_query_concept_weight << '\n';
    json row = {{"n1", p.n1}, {"H", p.H}, {"n", p.n}};
    row["margins"] = json::parse(to_json(p.margins));
    row["flags"] = {{"pretrain_count", p.flags.pretrain_count},
                    {"prompt_count", p.flags.prompt_count},
                    {"margin", p.flags.margin}};
    row["agreement_rate"] = p.agreement.agreement_rate;
    row["mean_query_concept_weight"] = p.agreement.mean_query_concept_weight;
    rows.push_back(std::move(row));
    if (p.flags.all()) worst = std::min(worst, p.agreement.agreement_rate);
  }
  out.write("theorem1.csv", csv.str());
  checks.push_back({"agreement_where_thresholds_hold", worst >= 0.99, ExitCode::TheoremAgreement,
                    "lowest rate " + fmt(worst)});
  json j = envelope("theorem1", c, seed);
  j["family"] = c.family.empty() ? "builtin:bernoulli(0.9,0.5)x5" : c.family;
  j["theorem_applicable"] = grid.empty() || grid.front().margins.applicable;
  j["grid"] = std::move(rows);
  return finish(std::move(j), std::move(checks), out);
}

// ---------------------------------------------------------------------------
// compare-prompts

CommandResult cmd_compare_prompts(const ExperimentConfig& c, std::uint64_t seed, const std::filesystem::path& dir) {
  validate(c);
  const int n = c.contexts;
  const int d = c.prompt_dim;
  Rng rng(seed, {kPrompts});
  auto gaussian_vec = [&] {
    VectorXd v(d);
    for (int i = 0; i < d; ++i) v(i) = rng.normal();
    return v;
  };
  MatrixXd w(d, d);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k) w(i, k) = rng.normal();
  std::vector<VectorPair> stacked;
  std::vector<ScalarPair> linear;
  for (int i = 0; i < n; ++i) {
    VectorXd x = gaussian_vec();
    stacked.push_back({x, w * x});
    linear.push_back({x, w.row(0).dot(x)});
  }
  const VectorXd xq = gaussian_vec();
  const MatrixXd identity = MatrixXd::Identity(d, d);

  const VectorXd stacked_pred = predict_stacked_didactic(stacked, xq, identity);
  const double linear_pred = predict_linear_didactic(linear, xq);
  const LinearPrediction general = predict_linear_general(linear, xq, identity);
  Rng probe_rng(seed, {kPrompts, 1});
  const SensitivityFlags flags = probe_sensitivity(stacked, linear, xq, identity, probe_rng);

  // Worked examples with hand-computed answers.
  const std::vector<VectorPair> ex_stacked = {{VectorXd::Unit(2, 0), VectorXd::Unit(2, 1)}};
  const VectorXd ex_out = predict_stacked_didactic(ex_stacked, VectorXd::Ones(2), MatrixXd::Identity(2, 2));
  const std::vector<ScalarPair> ex_linear = {{VectorXd::Ones(1), 1.0}, {VectorXd::Ones(1), 2.0}};
  const double ex_lin = predict_linear_didactic(ex_linear);
  const double weight_sum = std::accumulate(general.weights.begin(), general.weights.end(), 0.0);

  std::vector<Check> checks;
  checks.push_back({"linear_invariant_to_inputs", flags.linear_invariant_to_inputs, ExitCode::PromptContrast, ""});
  checks.push_back({"linear_invariant_to_permutation", flags.linear_invariant_to_permutation,
                    ExitCode::PromptContrast, ""});
  checks.push_back({"stacked_sensitive_to_inputs", flags.stacked_sensitive_to_inputs, ExitCode::PromptContrast, ""});
  checks.push_back({"stacked_worked_example", (ex_out - VectorXd::Constant(2, 0.5)).cwiseAbs().maxCoeff() < 1e-15,
                    ExitCode::PromptContrast, "(" + fmt(ex_out(0)) + ", " + fmt(ex_out(1)) + ")"});
  checks.push_back({"linear_worked_example", std::abs(ex_lin - 1.0) < 1e-15, ExitCode::PromptContrast, fmt(ex_lin)});
  checks.push_back({"general_weights_normalized", std::abs(weight_sum - 1.0) < 1e-12, ExitCode::Normalization,
                    fmt(weight_sum)});

  json flags_json = {{"stacked_sensitive_to_inputs", flags.stacked_sensitive_to_inputs},
                     {"linear_invariant_to_inputs", flags.linear_invariant_to_inputs},
                     {"linear_invariant_to_permutation", flags.linear_invariant_to_permutation}};
  json j = envelope("compare-prompts", c, seed);
  j["constructions"] = json::array(
      {{{"construction", "stacked"},
        {"n", n},
        {"prediction", std::vector<double>(stacked_pred.data(), stacked_pred.data() + stacked_pred.size())},
        {"sensitivity_flags", {{"sensitive_to_inputs", flags.stacked_sensitive_to_inputs}}}},
       {{"construction", "linear"},
        {"n", n},
        {"prediction", linear_pred},
        {"sensitivity_flags",
         {{"invariant_to_inputs", flags.linear_invariant_to_inputs},
          {"invariant_to_permutation", flags.linear_invariant_to_permutation}}}},
       {{"construction", "linear_general"},
        {"n", n},
        {"prediction", general.prediction},
        {"weights", general.weights},
        {"sensitivity_flags", json::object()}}});
  j["sensitivity_flags"] = flags_json;
  OutputDir out(dir);
  return finish(std::move(j), std::move(checks), out);
}

// ---------------------------------------------------------------------------
// generate

CommandResult cmd_generate(const ExperimentConfig& c, std::uint64_t seed, const std::filesystem::path& dir) {
  validate(c);
  const Vocabulary vocab = vocab_of(c);
  Rng base(seed, {kFixedConcept});
  const ConceptSpec fixed = make_query_concept(c, base, c.topic_mode);

  std::vector<std::string> train(static_cast<std::size_t>(c.train_count));
  parallel_for(train.size(), [&](std::size_t i) {
    Rng rng(seed, {kTrainStream, static_cast<std::uint64_t>(i)});
    const ConceptSpec spec =
        c.train_fresh_concepts ? sample_concept(rng, vocab, c.tau, c.topic_mode, c.key_topic_prob, c.key_class_prob)
                               : fixed;
    const int len = c.train_seq_len > 0 ? c.train_seq_len : rng.uniform_int(c.seq_len_min, c.seq_len_max);
    train[i] = format_sequence(mask_random(rng, gen_train_sequence(rng, vocab, spec, len), c.mask_prob));
  });

  const int len = c.prompt_seq_len;
  const int l1 = c.prefix_len(len);
  std::vector<std::string> queries(static_cast<std::size_t>(c.query_count));
  std::vector<std::string> contexts(queries.size());
  parallel_for(queries.size(), [&](std::size_t q) {
    Rng rng(seed, {kQueryFile, static_cast<std::uint64_t>(q)});
    const ConceptSpec spec = c.target_topic > 0 ? fixed : make_query_concept(c, rng, c.topic_mode);
    auto bundle = gen_query_and_contexts(rng, vocab, spec, len, l1, c.contexts);
    queries[q] = format_sequence(mask_suffix(bundle.query, len - l1));
    for (const auto& s : bundle.contexts) contexts[q] += format_sequence(s) + "\n";
  });

  auto join = [](const std::vector<std::string>& lines) {
    std::string out;
    for (const auto& l : lines) out += l + "\n";
    return out;
  };
  OutputDir out(dir);
  out.write("train.txt", join(train));
  out.write("queries.txt", join(queries));
  std::string ctx;
  for (const auto& s : contexts) ctx += s;
  out.write("contexts.txt", ctx);
  json j = envelope("generate", c, seed);
  j["train_sequences"] = c.train_count;
  j["queries"] = c.query_count;
  j["contexts_per_query"] = c.contexts;
  j["query_seq_len"] = len;
  j["query_prefix_len"] = l1;
  return finish(std::move(j), {}, out);
}

std::vector<std::string> command_names() {
  return {"fig2", "claim1", "theorem1", "ablation", "compare-prompts", "generate", "train", "solve"};
}

CommandResult run_command(const std::string& name, const ExperimentConfig& c, std::uint64_t seed,
                          const std::filesystem::path& dir) {
  if (name == "fig2") return cmd_fig2(c, seed, dir);
  if (name == "claim1") return cmd_claim1(c, seed, dir);
  if (name == "theorem1") return cmd_theorem1(c, seed, dir);
  if (name == "ablation") return cmd_ablation(c, seed, dir);
  if (name == "compare-prompts") return cmd_compare_prompts(c, seed, dir);
  if (name == "generate") return cmd_generate(c, seed, dir);
  if (name == "train") return cmd_train(c, seed, dir);
  if (name == "solve") return cmd_solve(c, seed, dir);
  throw InvalidArgument("unknown command '" + name + "'");
}

}  // namespace icl
