#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "icl/encoding.hpp"

namespace icl {

/// softmax((W^K Z)^T (W^Q Z) / sqrt(L)), column-wise. Both matrices are L x L.
struct LearnedAttention {
  Eigen::MatrixXd key;
  Eigen::MatrixXd query;
};

/// Every entry 1/G.
struct UniformAttention {};

/// Segment i of an (n+1)-segment input gets weight a_i spread evenly over
/// its N columns. Weights are strictly increasing and sum to one.
struct PositionWeightedAttention {
  std::vector<double> weights;
};

using AttentionSpec = std::variant<LearnedAttention, UniformAttention, PositionWeightedAttention>;

std::string_view attention_kind(const AttentionSpec& spec);

/// Validates and wraps a weight list.
PositionWeightedAttention make_position_weighted(std::vector<double> weights);

/// a_i proportional to gamma^(n+1-i), i = 1..n+1, normalized to sum one.
std::vector<double> position_weights(int contexts, double gamma);

/// Full G x G kernel. segment_len is required for PositionWeighted (the
/// same segment pattern is used for every column).
Eigen::MatrixXd attention_kernel(const AttentionSpec& spec, const Eigen::MatrixXd& z,
                                 int segment_len = 0);

/// Only the listed kernel columns, G x cols.size().
Eigen::MatrixXd attention_columns(const AttentionSpec& spec, const Eigen::MatrixXd& z,
                                  std::span<const int> cols, int segment_len = 0);

/// For kernels that do not depend on Z (uniform, position-weighted) every
/// column is the same vector; returns it. Learned kernels return nullopt.
std::optional<Eigen::VectorXd> shared_attention_column(const AttentionSpec& spec, Eigen::Index g,
                                                       int segment_len = 0);

/// Value matrix over the two-hot rows plus the attention kernel. The value
/// matrix is block diagonal: topic block rows/cols 0..T, class block
/// rows/cols T+1..T+K+1.
struct ModelParams {
  Eigen::MatrixXd value;
  AttentionSpec attention;
  int topics = 0;
  int classes = 0;

  ModelParams(Eigen::MatrixXd value, AttentionSpec attention, int topics, int classes);
};

/// 1 inside the two diagonal blocks, 0 elsewhere.
Eigen::MatrixXd block_support(int topics, int classes);
bool is_block_diagonal(const Eigen::MatrixXd& value, int topics, int classes);

/// (W^V Z) A(Z).
Eigen::MatrixXd forward(const Eigen::MatrixXd& value, const AttentionSpec& attention,
                        const Eigen::MatrixXd& z, int segment_len = 0);
Eigen::MatrixXd forward(const ModelParams& params, const EncodedMatrix& z);

/// (W^V Z) A(Z)[:, cols] without forming the full kernel.
Eigen::MatrixXd forward_columns(const Eigen::MatrixXd& value, const AttentionSpec& attention,
                                const Eigen::MatrixXd& z, std::span<const int> cols,
                                int segment_len = 0);

/// 0-based output columns holding the masked-suffix predictions:
/// n*N + L1 .. (n+1)*N - 1.
std::vector<int> prediction_columns(int prefix_len, int seq_len, int contexts);

Eigen::MatrixXd predict_masked_columns(const Eigen::MatrixXd& output, int prefix_len, int seq_len,
                                       int contexts);

/// Most probable topic in rows 1..T (lowest index wins ties), 1-based.
int topic_argmax(const Eigen::Ref<const Eigen::VectorXd>& col, int topics);
/// Most probable class in rows T+2..T+K+1 (lowest index wins ties), 1-based.
int class_argmax(const Eigen::Ref<const Eigen::VectorXd>& col, int topics, int classes);

/// Class-block mixing vector b_k for a stacked prompt: b_k combines each
/// context segment's class frequencies and the query's visible class
/// frequencies under the segment weights. context_classes holds each
/// context's key class; query_mask_fraction is L2/N.
std::vector<double> class_mixing_vector(std::span<const double> weights, double key_class_prob,
                                        int classes, double query_mask_fraction,
                                        std::span<const int> context_classes, int query_class);

/// Checks that the query key class dominates b for the worst context
/// assignment (every context keyed on the same other class). Returns a
/// description of the violated inequality, or nullopt when it holds.
std::optional<std::string> check_class_dominance(std::span<const double> weights,
                                                 double key_class_prob, int classes,
                                                 double query_mask_fraction);

std::string to_json(const ModelParams& params);
ModelParams model_params_from_json(std::string_view text);

}  // namespace icl
