#include <gtest/gtest.h>

#include <cmath>

#include "icl/attention.hpp"
#include "icl/error.hpp"
#include "icl/solver.hpp"

using namespace icl;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_matrix(Rng& rng, int r, int c, double s = 1.0) {
  MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = s * rng.normal();
  return m;
}

// Entry-by-entry softmax kernel.
MatrixXd naive_kernel(const MatrixXd& k, const MatrixXd& q, const MatrixXd& z) {
  const double scale = 1.0 / std::sqrt(double(z.rows()));
  MatrixXd a(z.cols(), z.cols());
  for (int j = 0; j < z.cols(); ++j) {
    double total = 0.0;
    for (int i = 0; i < z.cols(); ++i) {
      a(i, j) = std::exp(scale * (k * z.col(i)).dot(q * z.col(j)));
      total += a(i, j);
    }
    a.col(j) /= total;
  }
  return a;
}

}  // namespace

TEST(PositionWeights, GammaHalfOneContext) {
  auto a = position_weights(1, 0.5);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_NEAR(a[0], 1.0 / 3, 1e-15);
  EXPECT_NEAR(a[1], 2.0 / 3, 1e-15);
}

TEST(PositionWeights, GeometricAndNormalized) {
  for (int n = 0; n <= 20; ++n)
    for (double g : {0.1, 0.5, 0.9}) {
      auto a = position_weights(n, g);
      double s = 0;
      for (double x : a) s += x;
      EXPECT_NEAR(s, 1.0, 1e-12);
      for (std::size_t i = 1; i < a.size(); ++i) EXPECT_NEAR(a[i - 1] / a[i], g, 1e-12);
      EXPECT_NO_THROW(make_position_weighted(a));
    }
  EXPECT_THROW(position_weights(1, 1.0), InvalidArgument);
}

TEST(PositionWeights, Validation) {
  EXPECT_THROW(make_position_weighted({0.6, 0.4}), InvalidArgument);
  EXPECT_THROW(make_position_weighted({0.5, 0.5}), InvalidArgument);
  EXPECT_THROW(make_position_weighted({0.2, 0.7}), InvalidArgument);
  EXPECT_THROW(make_position_weighted({}), InvalidArgument);
}

TEST(Kernel, UniformIsMean) {
  Rng rng(1);
  MatrixXd z = random_matrix(rng, 6, 9);
  MatrixXd w = random_matrix(rng, 6, 6);
  MatrixXd a = attention_kernel(UniformAttention{}, z);
  EXPECT_TRUE(a.isApprox(MatrixXd::Constant(9, 9, 1.0 / 9)));
  MatrixXd out = forward(w, UniformAttention{}, z);
  VectorXd mean = (w * z).rowwise().mean();
  for (int c = 0; c < 9; ++c) EXPECT_TRUE(out.col(c).isApprox(mean, 1e-12));
}

TEST(Kernel, PositionWeightedColumn) {
  auto pw = make_position_weighted({0.25, 0.75});
  MatrixXd z = MatrixXd::Zero(4, 6);
  auto a = attention_kernel(pw, z, 3);
  for (int c = 0; c < 6; ++c) {
    for (int r = 0; r < 3; ++r) EXPECT_NEAR(a(r, c), 0.25 / 3, 1e-15);
    for (int r = 3; r < 6; ++r) EXPECT_NEAR(a(r, c), 0.75 / 3, 1e-15);
  }
  EXPECT_THROW(attention_kernel(pw, MatrixXd::Zero(4, 7), 3), ShapeError);
}

TEST(Kernel, LearnedMatchesNaive) {
  for (int s = 0; s < 20; ++s) {
    Rng rng(5, {static_cast<std::uint64_t>(s)});
    MatrixXd z = random_matrix(rng, 5, 7);
    LearnedAttention la{random_matrix(rng, 5, 5), random_matrix(rng, 5, 5)};
    MatrixXd a = attention_kernel(la, z);
    EXPECT_TRUE(a.isApprox(naive_kernel(la.key, la.query, z), 1e-12));
    EXPECT_TRUE((a.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    const std::vector<int> cols = {6, 0, 3};
    MatrixXd sub = attention_columns(la, z, cols);
    for (int i = 0; i < 3; ++i) EXPECT_TRUE(sub.col(i).isApprox(a.col(cols[i]), 1e-12));
  }
}

TEST(Kernel, LearnedStableForLargeScores) {
  MatrixXd z = MatrixXd::Identity(3, 3);
  LearnedAttention la{MatrixXd::Identity(3, 3) * 1e3, MatrixXd::Identity(3, 3) * 1e3};
  MatrixXd a = attention_kernel(la, z);
  EXPECT_TRUE(a.allFinite());
  EXPECT_NEAR(a(0, 0), 1.0, 1e-12);
}

TEST(Kernel, ZeroLearnedIsUniform) {
  Rng rng(3);
  MatrixXd z = random_matrix(rng, 4, 5);
  LearnedAttention la{MatrixXd::Zero(4, 4), MatrixXd::Zero(4, 4)};
  EXPECT_TRUE(attention_kernel(la, z).isApprox(attention_kernel(UniformAttention{}, z)));
}

TEST(Forward, ColumnsMatchFull) {
  Rng rng(9);
  MatrixXd z = random_matrix(rng, 6, 8);
  MatrixXd w = random_matrix(rng, 6, 6);
  LearnedAttention la{random_matrix(rng, 6, 6, 0.3), random_matrix(rng, 6, 6, 0.3)};
  const std::vector<int> cols = {1, 7};
  for (const AttentionSpec& spec : {AttentionSpec{la}, AttentionSpec{UniformAttention{}},
                                    AttentionSpec{make_position_weighted({0.4, 0.6})}}) {
    MatrixXd full = forward(w, spec, z, 4);
    MatrixXd part = forward_columns(w, spec, z, cols, 4);
    EXPECT_TRUE(part.col(0).isApprox(full.col(1), 1e-12));
    EXPECT_TRUE(part.col(1).isApprox(full.col(7), 1e-12));
  }
  EXPECT_THROW(forward_columns(w, UniformAttention{}, z, std::vector<int>{8}), ShapeError);
  EXPECT_THROW(forward(MatrixXd::Zero(5, 5), UniformAttention{}, z), ShapeError);
}

TEST(PredictionColumns, Indices) {
  EXPECT_EQ(prediction_columns(7, 10, 0), (std::vector<int>{7, 8, 9}));
  EXPECT_EQ(prediction_columns(7, 10, 2), (std::vector<int>{27, 28, 29}));
  EXPECT_THROW(prediction_columns(10, 10, 0), ShapeError);
}

TEST(Readout, ArgmaxTies) {
  VectorXd col = VectorXd::Zero(8);  // T = K = 3
  col(2) = 0.5;
  col(3) = 0.5;
  col(6) = 0.2;
  EXPECT_EQ(topic_argmax(col, 3), 2);
  EXPECT_EQ(class_argmax(col, 3, 3), 2);
  col(7) = 0.2;
  EXPECT_EQ(class_argmax(col, 3, 3), 2);
  EXPECT_THROW(class_argmax(VectorXd::Zero(7), 3, 3), ShapeError);
}

TEST(BlockSupport, Shape) {
  MatrixXd s = block_support(2, 3);
  ASSERT_EQ(s.rows(), 7);
  EXPECT_EQ(s.topLeftCorner(3, 3).sum(), 9);
  EXPECT_EQ(s.bottomRightCorner(4, 4).sum(), 16);
  EXPECT_EQ(s.sum(), 25);
  MatrixXd w = MatrixXd::Zero(7, 7);
  EXPECT_TRUE(is_block_diagonal(w, 2, 3));
  w(0, 5) = 1e-3;
  EXPECT_FALSE(is_block_diagonal(w, 2, 3));
  EXPECT_THROW(ModelParams(w, UniformAttention{}, 2, 3), InvalidArgument);
}

TEST(ClassDominance, Inequality) {
  // a_1 = 1/3, a_2 = 2/3: (1 - 0.3) * 2/3 = 0.467 > 1/3 holds.
  auto a = position_weights(1, 0.5);
  EXPECT_FALSE(check_class_dominance(a, 1.0, 10, 0.3).has_value());
  // Long suffix: (1 - 0.6) * 2/3 = 0.267 < 1/3 fails.
  auto why = check_class_dominance(a, 1.0, 10, 0.6);
  ASSERT_TRUE(why.has_value());
  EXPECT_NE(why->find("violated"), std::string::npos);
  EXPECT_FALSE(check_class_dominance(std::vector<double>{1.0}, 0.5, 10, 0.9).has_value());
}

TEST(ClassDominance, MixingVectorOracle) {
  const std::vector<double> a = {0.2, 0.3, 0.5};
  const std::vector<int> ctx = {3, 1};
  auto b = class_mixing_vector(a, 0.8, 4, 0.25, ctx, 1);
  const double rest = 0.2 / 3;
  EXPECT_NEAR(b[0], 0.2 * rest + 0.3 * 0.8 + 0.5 * 0.75 * 0.8, 1e-15);
  EXPECT_NEAR(b[2], 0.2 * 0.8 + 0.3 * rest + 0.5 * 0.75 * rest, 1e-15);
  EXPECT_NEAR(b[1], b[3], 1e-15);
}

TEST(Json, RoundTrip) {
  Rng rng(2);
  auto closed = closed_form_value_matrix(0.15, 3, 4);
  LearnedAttention la{random_matrix(rng, 9, 9), random_matrix(rng, 9, 9)};
  for (const AttentionSpec& spec : {AttentionSpec{la}, AttentionSpec{UniformAttention{}},
                                    AttentionSpec{make_position_weighted({0.1, 0.9})}}) {
    ModelParams p(closed.value, spec, 3, 4);
    ModelParams back = model_params_from_json(to_json(p));
    EXPECT_EQ(back.value, p.value);
    EXPECT_EQ(back.attention.index(), spec.index());
    EXPECT_EQ(to_json(back), to_json(p));
  }
  EXPECT_THROW(model_params_from_json("{}"), InvalidArgument);
  EXPECT_THROW(model_params_from_json("not json"), InvalidArgument);
}
