#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "icl/encoding.hpp"
#include "icl/rng.hpp"
#include "icl/solver.hpp"

namespace icl {

/// Contexts s_1..s_n followed by the masked query, concatenated along the
/// token axis.
struct PromptStacked {
  std::vector<EncodedMatrix> contexts;
  EncodedMatrix query;
  EncodedMatrix assembled;

  int context_count() const noexcept { return static_cast<int>(contexts.size()); }
  int segment_len() const noexcept { return query.cols(); }
};

PromptStacked build_stacked_prompt(std::vector<EncodedMatrix> contexts, EncodedMatrix masked_query);

/// Splits a stacked matrix back into its segments using segment_lengths.
std::vector<EncodedMatrix> split_segments(const EncodedMatrix& stacked);

/// Column statistics of one segment: topic and class shares over all N
/// columns, and the share of masked columns.
struct SegmentStats {
  Eigen::VectorXd topic_share;  // T entries
  Eigen::VectorXd class_share;  // K entries
  double mask_share = 0.0;
};

SegmentStats segment_stats(const EncodedMatrix& segment);

/// Prediction column of the closed-form model under position weights,
/// expanded directly from segment statistics:
///   row l (topic) = sum_i a_i [ f_i(l)/(1-p) + u (1 - m_i - (1-p) m_i / p) ]
/// and likewise for classes with q. Mask rows are zero.
Eigen::VectorXd analytic_stacked_prediction(const ClosedFormSolution& closed,
                                            std::span<const double> weights,
                                            std::span<const SegmentStats> segments);

struct VectorPair {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
};

struct ScalarPair {
  Eigen::VectorXd x;
  double y = 0.0;
};

/// Stacked didactic prompt (X_1, y_1, ..., X_n, y_n, X_q, 0) of 2n+2 columns
/// under a uniform kernel with a zero mask embedding; returns the output
/// column at the mask slot.
Eigen::VectorXd predict_stacked_didactic(std::span<const VectorPair> contexts,
                                         const Eigen::VectorXd& query, const Eigen::MatrixXd& value);

/// Embedding-stacked prompt [X_i; y_i e_D] with the query answer slot zeroed,
/// value matrix [[0, 0], [0, I]] and a uniform kernel over n+1 columns.
/// Returns the answer coordinate of the query column. Empty contexts give 0.
double predict_linear_didactic(std::span<const ScalarPair> contexts,
                               const Eigen::VectorXd& query = {});

struct LinearPrediction {
  double prediction = 0.0;
  std::vector<double> weights;
};

/// y_q = sum_i softmax_i(X_i^T B X_q) y_i.
LinearPrediction predict_linear_general(std::span<const ScalarPair> contexts,
                                        const Eigen::VectorXd& query, const Eigen::MatrixXd& bilinear);

struct SensitivityFlags {
  // Perturbing any single X_i changes the stacked prediction.
  bool stacked_sensitive_to_inputs = false;
  // Random perturbation of all X_i leaves the linear prediction bit-identical.
  bool linear_invariant_to_inputs = false;
  // Shuffling the X_i across pairs leaves the linear prediction bit-identical.
  bool linear_invariant_to_permutation = false;
};

SensitivityFlags probe_sensitivity(std::span<const VectorPair> stacked,
                                   std::span<const ScalarPair> linear, const Eigen::VectorXd& query,
                                   const Eigen::MatrixXd& value, Rng& rng);

}  // namespace icl
