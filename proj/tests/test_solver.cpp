#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "icl/error.hpp"
#include "icl/solver.hpp"

using namespace icl;
using Eigen::MatrixXd;

namespace {

std::vector<TrainingSample> make_dataset(const Vocabulary& v, int count, int len, double p,
                                         std::uint64_t seed, int tau = 0) {
  std::vector<TrainingSample> out;
  for (int i = 0; i < count; ++i) {
    Rng rng(seed, {static_cast<std::uint64_t>(i)});
    auto c = sample_concept(rng, v, tau ? tau : v.topics, TopicMode::Uniform, 0.0, 0.8);
    out.push_back(make_training_sample(v, mask_random(rng, gen_train_sequence(rng, v, c, len), p)));
  }
  return out;
}

MatrixXd random_block(Rng& rng, int t, int k, double s) {
  MatrixXd w = block_support(t, k);
  for (int i = 0; i < w.rows(); ++i)
    for (int j = 0; j < w.cols(); ++j) w(i, j) *= s * rng.normal();
  return w;
}

// Central differences on 20 random coordinates.
template <class F>
void check_gradient(const MatrixXd& x, const MatrixXd& grad, F f, Rng& rng, bool support_only,
                    const MatrixXd& support) {
  const double h = 1e-6;
  int checked = 0;
  while (checked < 20) {
    const int i = rng.uniform_int(0, static_cast<int>(x.rows()) - 1);
    const int j = rng.uniform_int(0, static_cast<int>(x.cols()) - 1);
    if (support_only && support(i, j) == 0.0) continue;
    MatrixXd a = x, b = x;
    a(i, j) += h;
    b(i, j) -= h;
    const double fd = (f(a) - f(b)) / (2 * h);
    const double scale = std::max({std::abs(fd), std::abs(grad(i, j)), 1e-3});
    EXPECT_LT(std::abs(fd - grad(i, j)) / scale, 1e-4) << "coordinate (" << i << "," << j << ")";
    ++checked;
  }
}

}  // namespace

TEST(ClosedForm, ReferenceValues) {
  auto s = closed_form_value_matrix(0.15, 10, 10);
  EXPECT_NEAR(s.u, -0.0279372963, 1e-9);
  EXPECT_NEAR(s.q, s.u, 1e-15);
  EXPECT_NEAR(s.value(1, 1), 1.1485336, 1e-6);
  EXPECT_NEAR(s.value(1, 1), 1.1485332919, 1e-9);
  EXPECT_NEAR(s.value(1, 0), 0.158311, 1e-6);
  EXPECT_NEAR(s.value(1, 2), s.u, 1e-15);
  EXPECT_EQ(s.value.rows(), 22);
  EXPECT_TRUE(is_block_diagonal(s.value, 10, 10));
  EXPECT_EQ(s.value.row(0).norm(), 0.0);
  EXPECT_EQ(s.value.row(11).norm(), 0.0);
}

TEST(ClosedForm, FormulaSweep) {
  for (double p : {0.05, 0.15, 0.5, 0.9})
    for (int t : {2, 3, 10, 50}) {
      auto s = closed_form_value_matrix(p, t, t + 1);
      const double r = (1 - p) * (1 - p) / (p * p);
      EXPECT_NEAR(s.u, -1.0 / ((1 - p) * (t + r)), 1e-15);
      EXPECT_NEAR(s.q, -1.0 / ((1 - p) * (t + 1 + r)), 1e-15);
      EXPECT_LT(s.u, 0.0);
      EXPECT_LT(s.q, 0.0);
      EXPECT_NEAR(s.value(t + 2, t + 1), -s.q * (1 - p) / p, 1e-15);
    }
  EXPECT_THROW(closed_form_value_matrix(0.0, 3, 3), InvalidArgument);
  EXPECT_THROW(closed_form_value_matrix(0.5, 1, 3), InvalidArgument);
}

TEST(ClosedForm, RecoversVisibleFrequencies) {
  // When |pi| / N equals p exactly, the uniform-attention prediction is the
  // visible topic and class histogram.
  Vocabulary v(4, 3);
  auto s = closed_form_value_matrix(0.15, 4, 3);
  for (int trial = 0; trial < 1000; ++trial) {
    Rng rng(12, {static_cast<std::uint64_t>(trial)});
    TokenSeq seq;
    for (int i = 0; i < 20; ++i) seq.push_back({rng.uniform_int(1, 4), rng.uniform_int(1, 3)});
    MaskedSeq m{seq, {}};
    std::vector<int> idx(20);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    m.mask_positions.assign(idx.begin(), idx.begin() + 3);
    std::sort(m.mask_positions.begin(), m.mask_positions.end());
    Eigen::VectorXd out = forward(s.value, UniformAttention{}, encode_masked(v, m).values).col(0);
    std::vector<double> topic(5, 0.0), cls(4, 0.0);
    for (int j = 0; j < 20; ++j)
      if (!m.is_masked(j)) {
        topic[seq[j].topic] += 1.0 / 17;
        cls[seq[j].cls] += 1.0 / 17;
      }
    ASSERT_NEAR(out(0), 0.0, 1e-12);
    ASSERT_NEAR(out(5), 0.0, 1e-12);
    for (int t = 1; t <= 4; ++t) ASSERT_NEAR(out(t), topic[t], 1e-12);
    for (int k = 1; k <= 3; ++k) ASSERT_NEAR(out(5 + k), cls[k], 1e-12);
  }
}

TEST(ClosedForm, NearStationaryOnSampledObjective) {
  Vocabulary v(3, 3);
  const double p = 0.2;
  auto data = make_dataset(v, 300, 2000, p, 4);
  auto obj = QuadraticObjective::build(data, UniformAttention{});
  auto s = closed_form_value_matrix(p, 3, 3);
  const MatrixXd zero = MatrixXd::Zero(8, 8);
  EXPECT_LT(obj.gradient(s.value, 0.0).norm(), 0.02 * obj.gradient(zero, 0.0).norm());
  TrainConfig cfg;
  cfg.lambda = 1e-6;
  cfg.learning_rate = 1.0 / obj.curvature_bound(cfg.lambda);
  cfg.steps = 5000;
  const double best = obj.data_loss(train_gd(obj, cfg).value);
  EXPECT_LT(obj.data_loss(s.value) - best, 1e-3 * best);
}

TEST(Loss, ObjectiveMatchesDirect) {
  Vocabulary v(3, 4);
  auto data = make_dataset(v, 20, 30, 0.3, 8, 2);
  Rng rng(3);
  for (const AttentionSpec& att : {AttentionSpec{UniformAttention{}},
                                   AttentionSpec{LearnedAttention{MatrixXd::Random(9, 9), MatrixXd::Random(9, 9)}}}) {
    auto obj = QuadraticObjective::build(data, att);
    for (int r = 0; r < 5; ++r) {
      MatrixXd w = random_block(rng, 3, 4, 0.5);
      EXPECT_NEAR(obj.data_loss(w), data_loss(w, att, data), 1e-10);
      EXPECT_NEAR(obj.loss(w, 0.1), loss(w, att, data, 0.1), 1e-10);
      MatrixXd direct = loss_gradient(w, att, data, 0.1).cwiseProduct(block_support(3, 4));
      EXPECT_TRUE(obj.gradient(w, 0.1).isApprox(direct, 1e-10));
    }
  }
}

TEST(Loss, StreamedBuildMatchesSpan) {
  Vocabulary v(3, 3);
  auto data = make_dataset(v, 600, 15, 0.25, 2);
  auto a = QuadraticObjective::build(data, UniformAttention{});
  auto b = QuadraticObjective::build(data.size(), [&](std::size_t i) { return data[i]; }, UniformAttention{});
  EXPECT_TRUE(a.gram().isApprox(b.gram(), 1e-12));
  EXPECT_TRUE(a.cross().isApprox(b.cross(), 1e-12));
}

TEST(Gradient, ValueFiniteDifference) {
  Vocabulary v(4, 3);
  auto data = make_dataset(v, 10, 25, 0.2, 6, 2);
  Rng rng(1);
  MatrixXd w = random_block(rng, 4, 3, 0.3);
  const MatrixXd support = block_support(4, 3);
  for (const AttentionSpec& att : {AttentionSpec{UniformAttention{}},
                                   AttentionSpec{LearnedAttention{MatrixXd::Random(9, 9), MatrixXd::Random(9, 9)}}}) {
    MatrixXd g = loss_gradient(w, att, data, 0.05);
    check_gradient(w, g, [&](const MatrixXd& x) { return loss(x, att, data, 0.05); }, rng, false, support);
  }
}

TEST(Gradient, JointFiniteDifference) {
  Vocabulary v(3, 3);
  auto data = make_dataset(v, 6, 12, 0.3, 9, 2);
  Rng rng(2);
  JointState st{random_block(rng, 3, 3, 0.4), MatrixXd::Zero(8, 8), MatrixXd::Zero(8, 8)};
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      st.key(i, j) = 0.5 * rng.normal();
      st.query(i, j) = 0.5 * rng.normal();
    }
  const double lambda = 0.01;
  auto g = joint_gradient(st, data, lambda, true);
  auto total = [&](const JointState& s) {
    return data_loss(s.value, LearnedAttention{s.key, s.query}, data) +
           lambda * (s.value.squaredNorm() + s.key.squaredNorm() + s.query.squaredNorm());
  };
  EXPECT_NEAR(g.data_loss, data_loss(st.value, LearnedAttention{st.key, st.query}, data), 1e-12);
  const MatrixXd all = MatrixXd::Ones(8, 8);
  check_gradient(st.value, g.value, [&](const MatrixXd& x) { auto s = st; s.value = x; return total(s); },
                 rng, true, block_support(3, 3));
  check_gradient(st.key, g.key, [&](const MatrixXd& x) { auto s = st; s.key = x; return total(s); },
                 rng, false, all);
  check_gradient(st.query, g.query, [&](const MatrixXd& x) { auto s = st; s.query = x; return total(s); },
                 rng, false, all);
}

TEST(Gradient, JointUniformMatchesValueGradient) {
  Vocabulary v(3, 3);
  auto data = make_dataset(v, 8, 12, 0.3, 10);
  Rng rng(4);
  JointState st{random_block(rng, 3, 3, 0.4), {}, {}};
  auto g = joint_gradient(st, data, 0.0, false);
  EXPECT_TRUE(g.value.isApprox(loss_gradient(st.value, UniformAttention{}, data, 0.0), 1e-12));
}

TEST(Training, MonotoneBelowStableStep) {
  Vocabulary v(3, 3);
  auto data = make_dataset(v, 64, 200, 0.2, 11);
  auto obj = QuadraticObjective::build(data, UniformAttention{});
  TrainConfig cfg;
  cfg.lambda = 1e-3;
  cfg.learning_rate = 0.9 * obj.stable_step_threshold(cfg.lambda);
  cfg.steps = 300;
  auto r = train_gd(obj, cfg);
  ASSERT_EQ(r.curve.size(), 301u);
  EXPECT_EQ(r.curve.front().step, 0);
  EXPECT_EQ(r.curve.front().reg_loss, 0.0);
  for (std::size_t i = 1; i < r.curve.size(); ++i)
    EXPECT_LE(r.curve[i].data_loss + r.curve[i].reg_loss,
              r.curve[i - 1].data_loss + r.curve[i - 1].reg_loss + 1e-14);
  EXPECT_TRUE(is_block_diagonal(r.value, 3, 3));
}

TEST(Training, ConvergesToRegularizedMinimizer) {
  Vocabulary v(3, 3);
  auto data = make_dataset(v, 64, 200, 0.2, 12);
  auto obj = QuadraticObjective::build(data, UniformAttention{});
  TrainConfig cfg;
  cfg.lambda = 1e-2;
  cfg.learning_rate = 1.0 / obj.curvature_bound(cfg.lambda);
  cfg.steps = 20000;
  auto r = train_gd(obj, cfg);
  EXPECT_LT(obj.gradient(r.value, cfg.lambda).norm(), 1e-8);
}

TEST(Training, DivergenceIsReported) {
  Vocabulary v(3, 3);
  auto data = make_dataset(v, 16, 40, 0.2, 13);
  auto obj = QuadraticObjective::build(data, UniformAttention{});
  TrainConfig cfg;
  cfg.learning_rate = 50.0 * obj.stable_step_threshold(0.0);
  cfg.steps = 5000;
  EXPECT_THROW(train_gd(obj, cfg), TrainingDiverged);
}

TEST(Training, ConfigValidation) {
  TrainConfig bad;
  EXPECT_THROW(validate(bad), InvalidArgument);
  bad.learning_rate = 0.1;
  bad.steps = 0;
  EXPECT_THROW(validate(bad), InvalidArgument);
  bad.steps = 1;
  bad.lambda = -1;
  EXPECT_THROW(validate(bad), InvalidArgument);
}

TEST(Training, CurveCsv) {
  std::vector<CurvePoint> c = {{0, 1.5, 0.0}, {1, 0.25, 0.125}};
  EXPECT_EQ(curve_to_csv(c), "step,data_loss,reg_loss\n0,1.5,0\n1,0.25,0.125\n");
}

TEST(Training, JointUniformAgreesWithQuadratic) {
  Vocabulary v(3, 3);
  auto data = make_dataset(v, 12, 30, 0.2, 14);
  auto obj = QuadraticObjective::build(data, UniformAttention{});
  TrainConfig cfg;
  cfg.learning_rate = 1.0 / obj.curvature_bound(0.0);
  cfg.steps = 50;
  auto a = train_gd(obj, cfg);
  auto b = train_joint(data, data, JointState{MatrixXd::Zero(8, 8), {}, {}}, cfg, false, 10);
  EXPECT_TRUE(a.value.isApprox(b.state.value, 1e-9));
  ASSERT_EQ(b.curve.size(), 6u);
  EXPECT_EQ(b.curve.back().step, 50);
  EXPECT_NEAR(b.curve.back().train_data_loss, a.curve.back().data_loss, 1e-9);
}

TEST(Comparison, ClosedAgainstItself) {
  Vocabulary v(3, 3);
  auto s = closed_form_value_matrix(0.2, 3, 3);
  Rng rng(1);
  auto c = sample_concept(rng, v, 2, TopicMode::Uniform, 0.0, 0.8);
  std::vector<ProbeQuery> probes = {{encode_masked(v, mask_suffix(gen_query_sequence(rng, v, c, 10, 7), 3)), 7}};
  auto r = compare_to_closed_form(s.value, s, probes);
  EXPECT_EQ(r.frobenius_distance, 0.0);
  EXPECT_EQ(r.max_prediction_deviation, 0.0);
  MatrixXd shifted = s.value;
  shifted(1, 1) += 0.1;
  r = compare_to_closed_form(shifted, s, probes);
  EXPECT_NEAR(r.frobenius_distance, 0.1, 1e-12);
  EXPECT_GT(r.max_prediction_deviation, 0.0);
}
