#include "icl/prompting.hpp"

#include <algorithm>
#include <cmath>

#include "icl/attention.hpp"
#include "icl/error.hpp"

namespace icl {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Index common_dim(std::span<const ScalarPair> contexts, const VectorXd& query) {
  Index d = query.size();
  for (const auto& c : contexts) {
    if (d == 0) d = c.x.size();
    if (c.x.size() != d) throw ShapeError("context inputs differ in dimension");
  }
  return d;
}

}  // namespace

PromptStacked build_stacked_prompt(std::vector<EncodedMatrix> contexts, EncodedMatrix masked_query) {
  for (const auto& c : contexts) {
    if (c.rows() != masked_query.rows() || c.cols() != masked_query.cols() ||
        c.topics != masked_query.topics || c.classes != masked_query.classes)
      throw ShapeError("every prompt segment must match the query shape");
  }
  std::vector<EncodedMatrix> parts = contexts;
  parts.push_back(masked_query);
  PromptStacked prompt;
  prompt.assembled = concat_columns(parts);
  prompt.contexts = std::move(contexts);
  prompt.query = std::move(masked_query);
  return prompt;
}

std::vector<EncodedMatrix> split_segments(const EncodedMatrix& stacked) {
  std::vector<EncodedMatrix> out;
  Index offset = 0;
  for (int len : stacked.segment_lengths) {
    if (len < 0 || offset + len > stacked.values.cols()) throw ShapeError("segment lengths exceed matrix");
    EncodedMatrix seg;
    seg.topics = stacked.topics;
    seg.classes = stacked.classes;
    seg.values = stacked.values.middleCols(offset, len);
    seg.segment_lengths = {len};
    out.push_back(std::move(seg));
    offset += len;
  }
  if (offset != stacked.values.cols()) throw ShapeError("segment lengths do not cover matrix");
  return out;
}

SegmentStats segment_stats(const EncodedMatrix& segment) {
  const RowLayout layout = segment.layout();
  const double n = segment.cols();
  if (n == 0) throw ShapeError("empty segment");
  const VectorXd mean = segment.values.rowwise().sum() / n;
  SegmentStats st;
  st.topic_share = mean.segment(1, segment.topics);
  st.class_share = mean.segment(layout.cls(1), segment.classes);
  st.mask_share = mean(RowLayout::topic_mask());
  return st;
}

VectorXd analytic_stacked_prediction(const ClosedFormSolution& closed, std::span<const double> weights,
                                     std::span<const SegmentStats> segments) {
  if (weights.size() != segments.size()) throw ShapeError("one weight per segment required");
  const double p = closed.mask_prob;
  const RowLayout layout{closed.topics, closed.classes};
  VectorXd out = VectorXd::Zero(layout.rows());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    const double a = weights[i];
    const double m = s.mask_share;
    const double shift = 1.0 - m - (1.0 - p) * m / p;
    for (int l = 1; l <= closed.topics; ++l)
      out(layout.topic(l)) += a * (s.topic_share(l - 1) / (1.0 - p) + closed.u * shift);
    for (int k = 1; k <= closed.classes; ++k)
      out(layout.cls(k)) += a * (s.class_share(k - 1) / (1.0 - p) + closed.q * shift);
  }
  return out;
}

VectorXd predict_stacked_didactic(std::span<const VectorPair> contexts, const VectorXd& query,
                                  const MatrixXd& value) {
  const Index d = query.size();
  if (value.rows() != d || value.cols() != d) throw ShapeError("value matrix must be D x D");
  const Index cols = 2 * static_cast<Index>(contexts.size()) + 2;
  MatrixXd z = MatrixXd::Zero(d, cols);
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    const auto& c = contexts[i];
    if (c.x.size() != d || c.y.size() != d) throw ShapeError("context vectors must have dimension D");
    z.col(2 * static_cast<Index>(i)) = c.x;
    z.col(2 * static_cast<Index>(i) + 1) = c.y;
  }
  z.col(cols - 2) = query;
  const int mask_col = static_cast<int>(cols - 1);
  return forward_columns(value, UniformAttention{}, z, std::span<const int>(&mask_col, 1)).col(0);
}

double predict_linear_didactic(std::span<const ScalarPair> contexts, const VectorXd& query) {
  if (contexts.empty()) return 0.0;
  const Index d = common_dim(contexts, query);
  if (d == 0) throw ShapeError("inputs must have dimension >= 1");
  const Index n = static_cast<Index>(contexts.size());
  MatrixXd z = MatrixXd::Zero(2 * d, n + 1);
  for (Index i = 0; i < n; ++i) {
    z.col(i).head(d) = contexts[static_cast<std::size_t>(i)].x;
    z(2 * d - 1, i) = contexts[static_cast<std::size_t>(i)].y;
  }
  if (query.size() == d) z.col(n).head(d) = query;
  MatrixXd value = MatrixXd::Zero(2 * d, 2 * d);
  value.bottomRightCorner(d, d).setIdentity();
  const int query_col = static_cast<int>(n);
  const MatrixXd out = forward_columns(value, UniformAttention{}, z, std::span<const int>(&query_col, 1));
  return out(2 * d - 1, 0);
}

LinearPrediction predict_linear_general(std::span<const ScalarPair> contexts, const VectorXd& query,
                                        const MatrixXd& bilinear) {
  if (contexts.empty()) throw InvalidArgument("at least one context pair required");
  const Index d = common_dim(contexts, query);
  if (query.size() != d || bilinear.rows() != d || bilinear.cols() != d)
    throw ShapeError("bilinear form must be D x D");
  const VectorXd projected = bilinear * query;
  std::vector<double> scores(contexts.size());
  for (std::size_t i = 0; i < contexts.size(); ++i) scores[i] = contexts[i].x.dot(projected);
  const double top = *std::max_element(scores.begin(), scores.end());
  double total = 0.0;
  for (double& s : scores) total += (s = std::exp(s - top));
  LinearPrediction out;
  out.weights.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out.weights[i] = scores[i] / total;
    out.prediction += out.weights[i] * contexts[i].y;
  }
  return out;
}

SensitivityFlags probe_sensitivity(std::span<const VectorPair> stacked, std::span<const ScalarPair> linear,
                                   const VectorXd& query, const MatrixXd& value, Rng& rng) {
  auto gaussian = [&](Index d) {
    VectorXd v(d);
    for (Index i = 0; i < d; ++i) v(i) = rng.normal();
    return v;
  };
  SensitivityFlags flags;

  const VectorXd base = predict_stacked_didactic(stacked, query, value);
  flags.stacked_sensitive_to_inputs = !stacked.empty();
  for (std::size_t i = 0; i < stacked.size(); ++i) {
    std::vector<VectorPair> moved(stacked.begin(), stacked.end());
    moved[i].x += gaussian(moved[i].x.size());
    if ((predict_stacked_didactic(moved, query, value).array() == base.array()).all())
      flags.stacked_sensitive_to_inputs = false;
  }

  const double linear_base = predict_linear_didactic(linear, query);
  std::vector<ScalarPair> moved(linear.begin(), linear.end());
  for (auto& p : moved) p.x += gaussian(p.x.size());
  flags.linear_invariant_to_inputs = predict_linear_didactic(moved, query) == linear_base;

  std::vector<ScalarPair> shuffled(linear.begin(), linear.end());
  for (std::size_t i = shuffled.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(shuffled[i - 1].x, shuffled[j].x);
  }
  flags.linear_invariant_to_permutation = predict_linear_didactic(shuffled, query) == linear_base;
  return flags;
}

}  // namespace icl
