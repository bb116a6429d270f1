#include "icl/attention.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "icl/error.hpp"

namespace icl {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

constexpr double kWeightSumTol = 1e-12;

int resolve_segment_len(const PositionWeightedAttention& pw, Index g, int segment_len) {
  const auto segments = static_cast<Index>(pw.weights.size());
  if (segment_len <= 0) {
    if (g % segments != 0)
      throw ShapeError("position-weighted kernel: column count is not a multiple of n+1");
    return static_cast<int>(g / segments);
  }
  if (static_cast<Index>(segment_len) * segments != g)
    throw ShapeError("position-weighted kernel expects (n+1)*N columns");
  return segment_len;
}

VectorXd position_column(const PositionWeightedAttention& pw, Index g, int segment_len) {
  const int n = resolve_segment_len(pw, g, segment_len);
  VectorXd col(g);
  for (std::size_t i = 0; i < pw.weights.size(); ++i)
    col.segment(static_cast<Index>(i) * n, n).setConstant(pw.weights[i] / n);
  return col;
}

void check_learned(const LearnedAttention& la, Index rows) {
  if (la.key.rows() != rows || la.key.cols() != rows || la.query.rows() != rows ||
      la.query.cols() != rows)
    throw ShapeError("learned attention matrices must be L x L with L = input rows");
  if (!la.key.allFinite() || !la.query.allFinite())
    throw InvalidArgument("learned attention matrices must be finite");
}

// Column-wise softmax of scores, in place.
void softmax_columns(MatrixXd& scores) {
  for (Index c = 0; c < scores.cols(); ++c) {
    auto col = scores.col(c);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
}

MatrixXd learned_columns(const LearnedAttention& la, const MatrixXd& z, std::span<const int> cols) {
  check_learned(la, z.rows());
  const double scale = 1.0 / std::sqrt(static_cast<double>(z.rows()));
  MatrixXd keys = la.key * z;  // L x G
  MatrixXd zq(z.rows(), static_cast<Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) zq.col(static_cast<Index>(c)) = z.col(cols[c]);
  MatrixXd scores = (keys.transpose() * (la.query * zq)) * scale;  // G x |cols|
  softmax_columns(scores);
  return scores;
}

void check_columns(std::span<const int> cols, Index g) {
  for (int c : cols)
    if (c < 0 || c >= g) throw ShapeError("requested column outside input");
}

json matrix_to_json(const MatrixXd& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const json& rows) {
  if (!rows.is_array() || rows.empty()) throw InvalidArgument("matrix must be a non-empty array of rows");
  const auto nr = static_cast<Index>(rows.size());
  const auto nc = static_cast<Index>(rows.front().size());
  MatrixXd m(nr, nc);
  for (Index r = 0; r < nr; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != nc)
      throw InvalidArgument("matrix rows must have equal length");
    for (Index c = 0; c < nc; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

}  // namespace

std::string_view attention_kind(const AttentionSpec& spec) {
  switch (spec.index()) {
    case 0: return "learned";
    case 1: return "uniform";
    default: return "position_weighted";
  }
}

PositionWeightedAttention make_position_weighted(std::vector<double> weights) {
  if (weights.empty()) throw InvalidArgument("position weights must be non-empty");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] > 0.0) || !std::isfinite(weights[i]))
      throw InvalidArgument("position weights must be positive");
    if (i > 0 && !(weights[i] > weights[i - 1]))
      throw InvalidArgument("position weights must be strictly increasing");
  }
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(sum - 1.0) > kWeightSumTol) throw InvalidArgument("position weights must sum to 1");
  return PositionWeightedAttention{std::move(weights)};
}

std::vector<double> position_weights(int contexts, double gamma) {
  if (contexts < 0) throw InvalidArgument("context count must be >= 0");
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidArgument("gamma must lie in (0, 1)");
  const auto m = static_cast<std::size_t>(contexts) + 1;
  std::vector<double> a(m);
  // a_{n+1} = 1, a_i = gamma * a_{i+1}, then normalize.
  double w = 1.0;
  for (std::size_t i = m; i-- > 0;) {
    a[i] = w;
    w *= gamma;
  }
  const double sum = std::accumulate(a.begin(), a.end(), 0.0);
  for (double& x : a) x /= sum;
  return a;
}

MatrixXd attention_kernel(const AttentionSpec& spec, const MatrixXd& z, int segment_len) {
  const Index g = z.cols();
  if (auto shared = shared_attention_column(spec, g, segment_len)) return shared->replicate(1, g);
  std::vector<int> all(static_cast<std::size_t>(g));
  std::iota(all.begin(), all.end(), 0);
  return learned_columns(std::get<LearnedAttention>(spec), z, all);
}

MatrixXd attention_columns(const AttentionSpec& spec, const MatrixXd& z, std::span<const int> cols,
                           int segment_len) {
  check_columns(cols, z.cols());
  if (auto shared = shared_attention_column(spec, z.cols(), segment_len))
    return shared->replicate(1, static_cast<Index>(cols.size()));
  return learned_columns(std::get<LearnedAttention>(spec), z, cols);
}

std::optional<VectorXd> shared_attention_column(const AttentionSpec& spec, Index g, int segment_len) {
  if (g < 1) throw ShapeError("attention input has no columns");
  if (std::holds_alternative<UniformAttention>(spec))
    return VectorXd::Constant(g, 1.0 / static_cast<double>(g));
  if (const auto* pw = std::get_if<PositionWeightedAttention>(&spec))
    return position_column(*pw, g, segment_len);
  return std::nullopt;
}

MatrixXd block_support(int topics, int classes) {
  const int t = topics + 1;
  const int k = classes + 1;
  MatrixXd mask = MatrixXd::Zero(t + k, t + k);
  mask.topLeftCorner(t, t).setOnes();
  mask.bottomRightCorner(k, k).setOnes();
  return mask;
}

bool is_block_diagonal(const MatrixXd& value, int topics, int classes) {
  const int t = topics + 1;
  const int k = classes + 1;
  if (value.rows() != t + k || value.cols() != t + k) return false;
  return (value.topRightCorner(t, k).array() == 0.0).all() &&
         (value.bottomLeftCorner(k, t).array() == 0.0).all();
}

ModelParams::ModelParams(MatrixXd v, AttentionSpec a, int t, int k)
    : value(std::move(v)), attention(std::move(a)), topics(t), classes(k) {
  const Index rows = RowLayout{topics, classes}.rows();
  if (value.rows() != rows || value.cols() != rows)
    throw ShapeError("value matrix must be (T+K+2) x (T+K+2)");
  if (!is_block_diagonal(value, topics, classes))
    throw InvalidArgument("value matrix must be block diagonal over topic/class rows");
  if (const auto* la = std::get_if<LearnedAttention>(&attention)) check_learned(*la, rows);
  if (const auto* pw = std::get_if<PositionWeightedAttention>(&attention))
    attention = make_position_weighted(pw->weights);
}

MatrixXd forward(const MatrixXd& value, const AttentionSpec& attention, const MatrixXd& z,
                 int segment_len) {
  if (value.cols() != z.rows()) throw ShapeError("value matrix columns must match input rows");
  const MatrixXd projected = value * z;
  if (auto shared = shared_attention_column(attention, z.cols(), segment_len)) {
    const VectorXd col = projected * (*shared);
    return col.replicate(1, z.cols());
  }
  return projected * attention_kernel(attention, z, segment_len);
}

namespace {
int uniform_segment_len(const EncodedMatrix& z) {
  if (z.segment_lengths.empty()) return 0;
  const int n = z.segment_lengths.front();
  for (int len : z.segment_lengths)
    if (len != n) throw ShapeError("stacked segments must share one length");
  return n;
}
}  // namespace

MatrixXd forward(const ModelParams& params, const EncodedMatrix& z) {
  if (z.topics != params.topics || z.classes != params.classes)
    throw ShapeError("encoded input and model disagree on (T, K)");
  int segment_len = 0;
  if (std::holds_alternative<PositionWeightedAttention>(params.attention))
    segment_len = uniform_segment_len(z);
  return forward(params.value, params.attention, z.values, segment_len);
}

MatrixXd forward_columns(const MatrixXd& value, const AttentionSpec& attention, const MatrixXd& z,
                         std::span<const int> cols, int segment_len) {
  if (value.cols() != z.rows()) throw ShapeError("value matrix columns must match input rows");
  check_columns(cols, z.cols());
  if (auto shared = shared_attention_column(attention, z.cols(), segment_len)) {
    const VectorXd col = value * (z * (*shared));
    return col.replicate(1, static_cast<Index>(cols.size()));
  }
  return (value * z) * attention_columns(attention, z, cols, segment_len);
}

std::vector<int> prediction_columns(int prefix_len, int seq_len, int contexts) {
  if (prefix_len < 0 || prefix_len >= seq_len || contexts < 0)
    throw ShapeError("prediction columns need 0 <= L1 < N and n >= 0");
  std::vector<int> cols(static_cast<std::size_t>(seq_len - prefix_len));
  std::iota(cols.begin(), cols.end(), contexts * seq_len + prefix_len);
  return cols;
}

MatrixXd predict_masked_columns(const MatrixXd& output, int prefix_len, int seq_len, int contexts) {
  const auto cols = prediction_columns(prefix_len, seq_len, contexts);
  if (output.cols() < static_cast<Index>(contexts + 1) * seq_len)
    throw ShapeError("output has fewer than (n+1)*N columns");
  return output.middleCols(cols.front(), static_cast<Index>(cols.size()));
}

int topic_argmax(const Eigen::Ref<const VectorXd>& col, int topics) {
  if (col.size() < topics + 1) throw ShapeError("column too short for topic readout");
  int best = 1;
  for (int t = 2; t <= topics; ++t)
    if (col(t) > col(best)) best = t;
  return best;
}

int class_argmax(const Eigen::Ref<const VectorXd>& col, int topics, int classes) {
  const RowLayout layout{topics, classes};
  if (col.size() != layout.rows()) throw ShapeError("column must have T+K+2 rows");
  int best = 1;
  for (int k = 2; k <= classes; ++k)
    if (col(layout.cls(k)) > col(layout.cls(best))) best = k;
  return best;
}

std::vector<double> class_mixing_vector(std::span<const double> weights, double key_class_prob,
                                        int classes, double query_mask_fraction,
                                        std::span<const int> context_classes, int query_class) {
  if (weights.empty() || context_classes.size() + 1 != weights.size())
    throw ShapeError("need one key class per context segment");
  const double q = key_class_prob;
  const double rest = (1.0 - q) / (classes - 1);
  std::vector<double> b(static_cast<std::size_t>(classes), 0.0);
  for (int k = 1; k <= classes; ++k) {
    double v = 0.0;
    for (std::size_t i = 0; i < context_classes.size(); ++i)
      v += weights[i] * (context_classes[i] == k ? q : rest);
    v += weights.back() * (1.0 - query_mask_fraction) * (k == query_class ? q : rest);
    b[static_cast<std::size_t>(k - 1)] = v;
  }
  return b;
}

std::optional<std::string> check_class_dominance(std::span<const double> weights,
                                                 double key_class_prob, int classes,
                                                 double query_mask_fraction) {
  if (weights.size() <= 1) return std::nullopt;
  const std::vector<int> rivals(weights.size() - 1, 2);
  const auto b = class_mixing_vector(weights, key_class_prob, classes, query_mask_fraction, rivals, 1);
  if (b[0] > b[1]) return std::nullopt;
  const double context_mass = std::accumulate(weights.begin(), weights.end() - 1, 0.0);
  std::ostringstream msg;
  msg << "class dominance b_query > b_context violated: b_query = " << b[0]
      << " <= b_context = " << b[1] << " (requires (1 - L2/N) * a_{n+1} = "
      << (1.0 - query_mask_fraction) * weights.back() << " > sum_{i<=n} a_i = " << context_mass
      << ")";
  return msg.str();
}

std::string to_json(const ModelParams& params) {
  json doc;
  doc["format"] = "icl-lab/model-params";
  doc["version"] = 1;
  doc["topics"] = params.topics;
  doc["classes"] = params.classes;
  doc["value"] = matrix_to_json(params.value);
  json att;
  att["kind"] = std::string(attention_kind(params.attention));
  if (const auto* la = std::get_if<LearnedAttention>(&params.attention)) {
    att["key"] = matrix_to_json(la->key);
    att["query"] = matrix_to_json(la->query);
  } else if (const auto* pw = std::get_if<PositionWeightedAttention>(&params.attention)) {
    att["weights"] = pw->weights;
  }
  doc["attention"] = std::move(att);
  return doc.dump(2);
}

ModelParams model_params_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(std::string("model params: ") + e.what());
  }
  if (doc.value("format", "") != "icl-lab/model-params")
    throw InvalidArgument("model params: unexpected format tag");
  if (doc.value("version", 0) != 1) throw InvalidArgument("model params: unsupported version");
  const auto& att = doc.at("attention");
  const std::string kind = att.at("kind").get<std::string>();
  AttentionSpec spec = UniformAttention{};
  if (kind == "learned") {
    spec = LearnedAttention{matrix_from_json(att.at("key")), matrix_from_json(att.at("query"))};
  } else if (kind == "position_weighted") {
    spec = make_position_weighted(att.at("weights").get<std::vector<double>>());
  } else if (kind != "uniform") {
    throw InvalidArgument("model params: unknown attention kind '" + kind + "'");
  }
  return ModelParams(matrix_from_json(doc.at("value")), std::move(spec), doc.at("topics").get<int>(),
                     doc.at("classes").get<int>());
}

}  // namespace icl
