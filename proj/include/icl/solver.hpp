#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "icl/attention.hpp"
#include "icl/corpus.hpp"
#include "icl/encoding.hpp"

namespace icl {

/// Minimum-Frobenius-norm value matrix among the exact minimizers of the
/// masked-prediction loss under uniform attention. Topic block, l, r in 1..T:
///   W_ll = u + 1/(1-p_m),  W_lr = u (r != l),  W_l0 = -u (1-p_m)/p_m,
///   row 0 = 0,
/// with u = -1 / ((1-p_m) (T + (1-p_m)^2/p_m^2)). The class block is the same
/// with q and K.
struct ClosedFormSolution {
  double u = 0.0;
  double q = 0.0;
  Eigen::MatrixXd value;
  double mask_prob = 0.0;
  int topics = 0;
  int classes = 0;

  ModelParams params(AttentionSpec attention = UniformAttention{}) const;
};

ClosedFormSolution closed_form_value_matrix(double mask_prob, int topics, int classes);

struct TrainingSample {
  EncodedMatrix original;
  EncodedMatrix masked;
  std::vector<int> mask_positions;
};

TrainingSample make_training_sample(const Vocabulary& vocab, const MaskedSeq& seq);

/// Mean over samples of the per-sample mean squared column error on masked
/// positions.
double data_loss(const Eigen::MatrixXd& value, const AttentionSpec& attention,
                 std::span<const TrainingSample> dataset);

/// data_loss + lambda * ||W^V||_F^2.
double loss(const Eigen::MatrixXd& value, const AttentionSpec& attention,
            std::span<const TrainingSample> dataset, double lambda);

/// Gradient of loss with respect to W^V, attention held fixed. Full matrix;
/// callers restrict it to the block support when needed.
Eigen::MatrixXd loss_gradient(const Eigen::MatrixXd& value, const AttentionSpec& attention,
                              std::span<const TrainingSample> dataset, double lambda);

/// The loss for a fixed kernel is quadratic in W^V:
///   data(W) = tr(W G W^T) - 2 <W, X> + e
/// with G = E[C C^T / |pi|], X = E[U_pi C^T / |pi|], e = E[||U_pi||^2 / |pi|]
/// and C = Z~ A[:, pi]. Accumulated once, so a training step no longer
/// touches the sequences.
class QuadraticObjective {
 public:
  struct Stats {
    Eigen::MatrixXd gram;
    Eigen::MatrixXd cross;
    double energy = 0.0;
    double count = 0.0;

    Stats operator+(const Stats& other) const;
  };

  static Stats sample_stats(const TrainingSample& sample, const AttentionSpec& attention);

  static QuadraticObjective build(std::span<const TrainingSample> dataset,
                                  const AttentionSpec& attention);
  /// Streams `count` samples from make(i) without keeping them in memory.
  static QuadraticObjective build(std::size_t count,
                                  const std::function<TrainingSample(std::size_t)>& make,
                                  const AttentionSpec& attention);

  int topics() const noexcept { return topics_; }
  int classes() const noexcept { return classes_; }
  const Eigen::MatrixXd& gram() const noexcept { return gram_; }
  const Eigen::MatrixXd& cross() const noexcept { return cross_; }
  const Eigen::MatrixXd& support() const noexcept { return support_; }

  double data_loss(const Eigen::MatrixXd& value) const;
  static double reg_loss(const Eigen::MatrixXd& value, double lambda);
  double loss(const Eigen::MatrixXd& value, double lambda) const;
  /// Gradient restricted to the block-diagonal support.
  Eigen::MatrixXd gradient(const Eigen::MatrixXd& value, double lambda) const;
  /// Largest Hessian eigenvalue on the block support. Gradient descent is
  /// monotone for any step below 2 / curvature_bound.
  double curvature_bound(double lambda) const;
  double stable_step_threshold(double lambda) const { return 2.0 / curvature_bound(lambda); }

 private:
  QuadraticObjective(Stats stats, int topics, int classes);

  Eigen::MatrixXd gram_;
  Eigen::MatrixXd cross_;
  double energy_ = 0.0;
  Eigen::MatrixXd support_;
  int topics_ = 0;
  int classes_ = 0;
};

struct TrainConfig {
  double learning_rate = 0.0;
  int steps = 1;
  double lambda = 0.0;
  int batch = 512;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& config);

struct CurvePoint {
  int step;
  double data_loss;
  double reg_loss;
};

struct TrainResult {
  Eigen::MatrixXd value;
  std::vector<CurvePoint> curve;  // step 0 is the zero initialization
};

/// Full-batch gradient descent from W^V = 0 on the block support.
TrainResult train_gd(const QuadraticObjective& objective, const TrainConfig& config);
TrainResult train_gd(std::span<const TrainingSample> dataset, const AttentionSpec& attention,
                     const TrainConfig& config);

std::string curve_to_csv(std::span<const CurvePoint> curve);

/// Value, key and query matrices trained together under a learned softmax
/// kernel.
struct JointState {
  Eigen::MatrixXd value;
  Eigen::MatrixXd key;
  Eigen::MatrixXd query;
};

struct JointGradient {
  double data_loss = 0.0;
  Eigen::MatrixXd value;
  Eigen::MatrixXd key;
  Eigen::MatrixXd query;
};

/// Data loss and its gradients (lambda terms included in the gradients)
/// under LearnedAttention{key, query}. With train_attention = false the
/// kernel is uniform and only the value gradient is filled.
JointGradient joint_gradient(const JointState& state, std::span<const TrainingSample> dataset,
                             double lambda, bool train_attention);

struct JointCurvePoint {
  int step;
  double train_data_loss;
  double valid_data_loss;
};

struct JointTrainResult {
  JointState state;
  std::vector<JointCurvePoint> curve;
};

JointTrainResult train_joint(std::span<const TrainingSample> train,
                             std::span<const TrainingSample> valid, JointState init,
                             const TrainConfig& config, bool train_attention, int eval_every = 1);

struct ProbeQuery {
  EncodedMatrix masked;
  int prefix_len;
};

struct ComparisonReport {
  double loss_gap = 0.0;  // loss(trained) - loss(closed form)
  double frobenius_distance = 0.0;
  double max_prediction_deviation = 0.0;
};

ComparisonReport compare_to_closed_form(const Eigen::MatrixXd& trained,
                                        const ClosedFormSolution& closed,
                                        std::span<const ProbeQuery> probes,
                                        const AttentionSpec& attention = UniformAttention{},
                                        const QuadraticObjective* objective = nullptr,
                                        double lambda = 0.0);

}  // namespace icl
