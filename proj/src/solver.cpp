#include "icl/solver.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "icl/error.hpp"
#include "icl/parallel.hpp"

namespace icl {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void check_mask_prob(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("mask probability must lie in (0, 1)");
}

MatrixXd masked_targets(const TrainingSample& s) {
  MatrixXd u(s.original.values.rows(), static_cast<Index>(s.mask_positions.size()));
  for (std::size_t c = 0; c < s.mask_positions.size(); ++c)
    u.col(static_cast<Index>(c)) = s.original.values.col(s.mask_positions[c]);
  return u;
}

void require_nonempty(std::span<const TrainingSample> dataset) {
  if (dataset.empty()) throw InvalidArgument("dataset must be non-empty");
}

// Per-sample mean squared error over masked columns.
double sample_data_loss(const MatrixXd& value, const AttentionSpec& attention,
                        const TrainingSample& s) {
  const MatrixXd out = forward_columns(value, attention, s.masked.values, s.mask_positions);
  return (out - masked_targets(s)).squaredNorm() / static_cast<double>(s.mask_positions.size());
}

// Fills the closed-form pattern into one diagonal block starting at `offset`
// with `labels` non-mask rows.
void fill_block(MatrixXd& w, int offset, int labels, double coupling, double p) {
  const double diag = coupling + 1.0 / (1.0 - p);
  const double mask_col = -coupling * (1.0 - p) / p;
  for (int l = 1; l <= labels; ++l) {
    w(offset + l, offset) = mask_col;
    for (int r = 1; r <= labels; ++r) w(offset + l, offset + r) = (r == l) ? diag : coupling;
  }
}

}  // namespace

ModelParams ClosedFormSolution::params(AttentionSpec attention) const {
  return ModelParams(value, std::move(attention), topics, classes);
}

ClosedFormSolution closed_form_value_matrix(double p, int topics, int classes) {
  check_mask_prob(p);
  if (topics < 2 || classes < 2) throw InvalidArgument("need T >= 2 and K >= 2");
  const double ratio = (1.0 - p) * (1.0 - p) / (p * p);
  ClosedFormSolution sol;
  sol.u = -1.0 / ((1.0 - p) * (topics + ratio));
  sol.q = -1.0 / ((1.0 - p) * (classes + ratio));
  sol.mask_prob = p;
  sol.topics = topics;
  sol.classes = classes;
  const RowLayout layout{topics, classes};
  sol.value = MatrixXd::Zero(layout.rows(), layout.rows());
  fill_block(sol.value, 0, topics, sol.u, p);
  fill_block(sol.value, layout.class_mask(), classes, sol.q, p);
  return sol;
}

TrainingSample make_training_sample(const Vocabulary& vocab, const MaskedSeq& seq) {
  if (seq.mask_positions.empty()) throw InvalidArgument("training sample needs a masked position");
  return TrainingSample{encode(vocab, seq.base), encode_masked(vocab, seq), seq.mask_positions};
}

double data_loss(const MatrixXd& value, const AttentionSpec& attention,
                 std::span<const TrainingSample> dataset) {
  require_nonempty(dataset);
  std::vector<double> parts(dataset.size());
  parallel_for(dataset.size(), [&](std::size_t i) {
    parts[i] = sample_data_loss(value, attention, dataset[i]);
  });
  return pairwise_sum(std::move(parts)) / static_cast<double>(dataset.size());
}

double loss(const MatrixXd& value, const AttentionSpec& attention,
            std::span<const TrainingSample> dataset, double lambda) {
  return data_loss(value, attention, dataset) + lambda * value.squaredNorm();
}

MatrixXd loss_gradient(const MatrixXd& value, const AttentionSpec& attention,
                       std::span<const TrainingSample> dataset, double lambda) {
  require_nonempty(dataset);
  std::vector<MatrixXd> parts(dataset.size());
  parallel_for(dataset.size(), [&](std::size_t i) {
    const auto& s = dataset[i];
    const MatrixXd c = s.masked.values * attention_columns(attention, s.masked.values, s.mask_positions);
    const MatrixXd err = value * c - masked_targets(s);
    parts[i] = (2.0 / static_cast<double>(s.mask_positions.size())) * err * c.transpose();
  });
  return pairwise_sum(std::move(parts)) / static_cast<double>(dataset.size()) + 2.0 * lambda * value;
}

// ---------------------------------------------------------------------------
// QuadraticObjective

QuadraticObjective::Stats QuadraticObjective::Stats::operator+(const Stats& other) const {
  if (count == 0.0) return other;
  if (other.count == 0.0) return *this;
  return Stats{gram + other.gram, cross + other.cross, energy + other.energy, count + other.count};
}

QuadraticObjective::Stats QuadraticObjective::sample_stats(const TrainingSample& s,
                                                           const AttentionSpec& attention) {
  const auto m = static_cast<double>(s.mask_positions.size());
  if (m == 0.0) throw InvalidArgument("training sample needs a masked position");
  const MatrixXd& z = s.masked.values;
  Stats st;
  st.count = 1.0;
  if (auto shared = shared_attention_column(attention, z.cols())) {
    const VectorXd c = z * (*shared);
    VectorXd target_mean = VectorXd::Zero(z.rows());
    double energy = 0.0;
    for (int p : s.mask_positions) {
      target_mean += s.original.values.col(p);
      energy += s.original.values.col(p).squaredNorm();
    }
    target_mean /= m;
    st.gram = c * c.transpose();
    st.cross = target_mean * c.transpose();
    st.energy = energy / m;
    return st;
  }
  const MatrixXd c = z * attention_columns(attention, z, s.mask_positions);
  const MatrixXd u = masked_targets(s);
  st.gram = c * c.transpose() / m;
  st.cross = u * c.transpose() / m;
  st.energy = u.squaredNorm() / m;
  return st;
}

QuadraticObjective::QuadraticObjective(Stats stats, int topics, int classes)
    : gram_(stats.gram / stats.count),
      cross_(stats.cross / stats.count),
      energy_(stats.energy / stats.count),
      support_(block_support(topics, classes)),
      topics_(topics),
      classes_(classes) {}

QuadraticObjective QuadraticObjective::build(std::span<const TrainingSample> dataset,
                                             const AttentionSpec& attention) {
  require_nonempty(dataset);
  return build(dataset.size(), [&](std::size_t i) { return dataset[i]; }, attention);
}

QuadraticObjective QuadraticObjective::build(std::size_t count,
                                             const std::function<TrainingSample(std::size_t)>& make,
                                             const AttentionSpec& attention) {
  if (count == 0) throw InvalidArgument("dataset must be non-empty");
  constexpr std::size_t kBlock = 256;
  std::vector<Stats> block_sums;
  int topics = 0;
  int classes = 0;
  for (std::size_t begin = 0; begin < count; begin += kBlock) {
    const std::size_t len = std::min(kBlock, count - begin);
    std::vector<Stats> slots(len);
    std::vector<std::pair<int, int>> shapes(len);
    parallel_for(len, [&](std::size_t i) {
      TrainingSample s = make(begin + i);
      shapes[i] = {s.original.topics, s.original.classes};
      slots[i] = sample_stats(s, attention);
    });
    for (const auto& [t, k] : shapes) {
      if (topics == 0) {
        topics = t;
        classes = k;
      } else if (t != topics || k != classes) {
        throw ShapeError("training samples disagree on (T, K)");
      }
    }
    block_sums.push_back(pairwise_sum(std::move(slots)));
  }
  return QuadraticObjective(pairwise_sum(std::move(block_sums)), topics, classes);
}

double QuadraticObjective::data_loss(const MatrixXd& w) const {
  return (w * gram_).cwiseProduct(w).sum() - 2.0 * w.cwiseProduct(cross_).sum() + energy_;
}

double QuadraticObjective::reg_loss(const MatrixXd& w, double lambda) {
  return lambda * w.squaredNorm();
}

double QuadraticObjective::loss(const MatrixXd& w, double lambda) const {
  return data_loss(w) + reg_loss(w, lambda);
}

MatrixXd QuadraticObjective::gradient(const MatrixXd& w, double lambda) const {
  MatrixXd g = 2.0 * (w * gram_ - cross_) + 2.0 * lambda * w;
  return g.cwiseProduct(support_);
}

double QuadraticObjective::curvature_bound(double lambda) const {
  // Rows decouple; a row in a block sees the Hessian 2 (G_block + lambda I).
  const int t = topics_ + 1;
  const int k = classes_ + 1;
  Eigen::SelfAdjointEigenSolver<MatrixXd> topic_block(gram_.topLeftCorner(t, t),
                                                     Eigen::EigenvaluesOnly);
  Eigen::SelfAdjointEigenSolver<MatrixXd> class_block(gram_.bottomRightCorner(k, k),
                                                     Eigen::EigenvaluesOnly);
  const double top = std::max(topic_block.eigenvalues().maxCoeff(), class_block.eigenvalues().maxCoeff());
  return 2.0 * (top + lambda);
}

// ---------------------------------------------------------------------------
// Training

void validate(const TrainConfig& config) {
  if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate))
    throw InvalidArgument("learning rate must be positive");
  if (config.steps < 1) throw InvalidArgument("steps must be >= 1");
  if (!(config.lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
  if (config.batch < 1) throw InvalidArgument("batch must be >= 1");
}

TrainResult train_gd(const QuadraticObjective& objective, const TrainConfig& config) {
  validate(config);
  const Index rows = objective.gram().rows();
  TrainResult result;
  result.value = MatrixXd::Zero(rows, rows);
  result.curve.reserve(static_cast<std::size_t>(config.steps) + 1);
  for (int step = 0;; ++step) {
    const double data = objective.data_loss(result.value);
    const double reg = QuadraticObjective::reg_loss(result.value, config.lambda);
    if (!std::isfinite(data) || !std::isfinite(reg)) throw TrainingDiverged(step);
    result.curve.push_back({step, data, reg});
    if (step == config.steps) break;
    result.value -= config.learning_rate * objective.gradient(result.value, config.lambda);
  }
  return result;
}

TrainResult train_gd(std::span<const TrainingSample> dataset, const AttentionSpec& attention,
                     const TrainConfig& config) {
  return train_gd(QuadraticObjective::build(dataset, attention), config);
}

std::string curve_to_csv(std::span<const CurvePoint> curve) {
  std::ostringstream out;
  out.precision(17);
  out << "step,data_loss,reg_loss\n";
  for (const auto& p : curve) out << p.step << ',' << p.data_loss << ',' << p.reg_loss << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Joint training of value, key and query

namespace {

JointGradient sample_joint_gradient(const JointState& st, const TrainingSample& s,
                                    bool train_attention) {
  const MatrixXd& z = s.masked.values;
  const MatrixXd u = masked_targets(s);
  const auto m = static_cast<double>(s.mask_positions.size());
  JointGradient g;
  if (!train_attention) {
    const VectorXd c = z.rowwise().mean();
    const VectorXd pred = st.value * c;
    const MatrixXd err = pred.replicate(1, u.cols()) - u;
    g.data_loss = err.squaredNorm() / m;
    g.value = (2.0 / m) * err.rowwise().sum() * c.transpose();
    return g;
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(z.rows()));
  MatrixXd zq(z.rows(), u.cols());
  for (std::size_t c = 0; c < s.mask_positions.size(); ++c)
    zq.col(static_cast<Index>(c)) = z.col(s.mask_positions[c]);
  const MatrixXd keys = st.key * z;       // L x G
  const MatrixXd queries = st.query * zq;  // L x m
  MatrixXd attn = (keys.transpose() * queries) * scale;  // G x m
  for (Index c = 0; c < attn.cols(); ++c) {
    auto col = attn.col(c);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
  const MatrixXd values = st.value * z;  // L x G
  const MatrixXd err = values * attn - u;
  g.data_loss = err.squaredNorm() / m;
  const MatrixXd g_out = (2.0 / m) * err;
  g.value = g_out * (z * attn).transpose();
  const MatrixXd g_attn = values.transpose() * g_out;  // G x m
  // Softmax backward, column-wise.
  MatrixXd g_scores = attn.cwiseProduct(g_attn);
  const Eigen::RowVectorXd col_dot = g_scores.colwise().sum();
  g_scores -= attn * col_dot.asDiagonal();
  const MatrixXd mixed = z * g_scores;  // L x m
  g.key = scale * queries * mixed.transpose();
  g.query = scale * st.key * mixed * zq.transpose();
  return g;
}

}  // namespace

JointGradient joint_gradient(const JointState& state, std::span<const TrainingSample> dataset,
                             double lambda, bool train_attention) {
  require_nonempty(dataset);
  std::vector<JointGradient> parts(dataset.size());
  parallel_for(dataset.size(), [&](std::size_t i) {
    parts[i] = sample_joint_gradient(state, dataset[i], train_attention);
  });
  const auto n = static_cast<double>(dataset.size());
  std::vector<double> losses(parts.size());
  std::vector<MatrixXd> values(parts.size());
  std::vector<MatrixXd> keys;
  std::vector<MatrixXd> queries;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    losses[i] = parts[i].data_loss;
    values[i] = std::move(parts[i].value);
    if (train_attention) {
      keys.push_back(std::move(parts[i].key));
      queries.push_back(std::move(parts[i].query));
    }
  }
  JointGradient out;
  out.data_loss = pairwise_sum(std::move(losses)) / n;
  out.value = pairwise_sum(std::move(values)) / n + 2.0 * lambda * state.value;
  if (train_attention) {
    out.key = pairwise_sum(std::move(keys)) / n + 2.0 * lambda * state.key;
    out.query = pairwise_sum(std::move(queries)) / n + 2.0 * lambda * state.query;
  }
  return out;
}

JointTrainResult train_joint(std::span<const TrainingSample> train,
                             std::span<const TrainingSample> valid, JointState init,
                             const TrainConfig& config, bool train_attention, int eval_every) {
  validate(config);
  require_nonempty(train);
  const int topics = train.front().original.topics;
  const int classes = train.front().original.classes;
  const MatrixXd support = block_support(topics, classes);
  if (init.value.rows() != support.rows() || init.value.cols() != support.cols())
    throw ShapeError("initial value matrix must be (T+K+2) square");
  if (train_attention && (init.key.rows() != support.rows() || init.query.rows() != support.rows()))
    throw ShapeError("initial key/query matrices must be (T+K+2) square");

  auto attention_of = [&](const JointState& st) -> AttentionSpec {
    if (train_attention) return LearnedAttention{st.key, st.query};
    return UniformAttention{};
  };

  JointTrainResult result{std::move(init), {}};
  result.state.value = result.state.value.cwiseProduct(support);
  for (int step = 0;; ++step) {
    JointGradient g = joint_gradient(result.state, train, config.lambda, train_attention);
    if (!std::isfinite(g.data_loss)) throw TrainingDiverged(step);
    const bool last = step == config.steps;
    if (step % std::max(1, eval_every) == 0 || last) {
      double v = valid.empty() ? std::nan("")
                               : data_loss(result.state.value, attention_of(result.state), valid);
      result.curve.push_back({step, g.data_loss, v});
    }
    if (last) break;
    result.state.value -= config.learning_rate * g.value.cwiseProduct(support);
    if (train_attention) {
      result.state.key -= config.learning_rate * g.key;
      result.state.query -= config.learning_rate * g.query;
    }
    if (!result.state.value.allFinite()) throw TrainingDiverged(step + 1);
  }
  return result;
}

ComparisonReport compare_to_closed_form(const MatrixXd& trained, const ClosedFormSolution& closed,
                                        std::span<const ProbeQuery> probes,
                                        const AttentionSpec& attention,
                                        const QuadraticObjective* objective, double lambda) {
  if (trained.rows() != closed.value.rows() || trained.cols() != closed.value.cols())
    throw ShapeError("trained and closed-form matrices differ in shape");
  ComparisonReport report;
  report.frobenius_distance = (trained - closed.value).norm();
  if (objective) report.loss_gap = objective->loss(trained, lambda) - objective->loss(closed.value, lambda);
  const MatrixXd delta = trained - closed.value;
  for (const auto& probe : probes) {
    const int n = probe.masked.cols();
    const auto cols = prediction_columns(probe.prefix_len, n, 0);
    const MatrixXd diff = forward_columns(delta, attention, probe.masked.values, cols);
    report.max_prediction_deviation =
        std::max(report.max_prediction_deviation, diff.cwiseAbs().maxCoeff());
  }
  return report;
}

}  // namespace icl
