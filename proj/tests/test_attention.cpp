#include <raycal/raycal.hpp>

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace raycal;

namespace {

Eigen::MatrixXd random_matrix(CounterRng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

EdgeEmbedding random_edges(CounterRng& rng, Eigen::Index n) {
  EdgeEmbedding e{Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) e.e(i) = rng.normal();
  return e;
}

Image disc(int size, double cx, double cy, double r) {
  Image img(size, size, 1, 0.0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) < r) img.at(x, y) = 255.0;
  return img;
}

double edge_count(const Image& edges) { return std::accumulate(edges.data.begin(), edges.data.end(), 0.0); }

/// Relative error with a floor so entries near zero compare absolutely.
double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

}  // namespace

TEST(Patchify, SingleTokenRowMajor) {
  Volume v(1, 2, 2);
  v.data = {1, 2, 3, 4};
  const TokenGrid t = patchify(v, 2);
  ASSERT_EQ(t.length(), 1);
  ASSERT_EQ(t.dim(), 4);
  EXPECT_EQ(t.values(0, 0), 1);
  EXPECT_EQ(t.values(0, 1), 2);
  EXPECT_EQ(t.values(0, 2), 3);
  EXPECT_EQ(t.values(0, 3), 4);
}

TEST(Patchify, TopLeftBlockFirst) {
  Volume v(1, 4, 4);
  std::iota(v.data.begin(), v.data.end(), 0.0);
  const TokenGrid t = patchify(v, 2);
  ASSERT_EQ(t.length(), 4);
  EXPECT_EQ(t.values.row(0), Eigen::RowVector4d(0, 1, 4, 5));
  EXPECT_EQ(t.values.row(1), Eigen::RowVector4d(2, 3, 6, 7));
  EXPECT_EQ(t.values.row(3), Eigen::RowVector4d(10, 11, 14, 15));
}

TEST(Patchify, RoundTripAndTokenCount) {
  CounterRng rng(1);
  Volume v(3, 12, 8);
  for (double& x : v.data) x = rng.normal();
  const TokenGrid t = patchify(v, 4);
  EXPECT_EQ(t.length(), 3 * 12 * 8 / 16);
  EXPECT_EQ(unpatchify(t).data, v.data);
}

TEST(Patchify, IndivisibleSizeRejected) {
  EXPECT_THROW(patchify(Volume(1, 6, 8), 4), ParameterError);
  EXPECT_THROW(patchify(Volume(1, 4, 4), 0), ParameterError);
}

TEST(EdgeMap, ConstantImageHasNoEdges) {
  EXPECT_EQ(edge_count(edge_map(Image(32, 24, 1, 117.0), 50, 150)), 0.0);
}

TEST(EdgeMap, VerticalStepGivesOnePixelLine) {
  Image img(40, 32, 1, 0.0);
  for (int y = 0; y < 32; ++y)
    for (int x = 20; x < 40; ++x) img.at(x, y) = 200.0;
  const Image e = edge_map(img, 50, 150);
  for (int y = 4; y < 28; ++y) {
    int count = 0, where = -1;
    for (int x = 0; x < 40; ++x)
      if (e.at(x, y) != 0.0) {
        ++count;
        where = x;
      }
    EXPECT_EQ(count, 1) << "row " << y;
    EXPECT_TRUE(where == 19 || where == 20) << "row " << y << " at " << where;
  }
}

TEST(EdgeMap, OutputIsBinary) {
  const Image e = edge_map(checkerboard(64, 64, 8), 20, 60);
  for (double v : e.data) EXPECT_TRUE(v == 0.0 || v == 1.0);
  EXPECT_GT(edge_count(e), 0.0);
}

TEST(EdgeMap, CircleCountNearCircumference) {
  for (double r : {20.0, 30.0}) {
    const double count = edge_count(edge_map(disc(128, 64, 64, r), 50, 150));
    const double expected = 2.0 * kPi * r;
    EXPECT_LT(std::abs(count - expected), 0.1 * expected) << "r " << r << " count " << count;
  }
}

TEST(EdgeMap, ThresholdOrderChecked) {
  EXPECT_THROW(edge_map(Image(8, 8), 10, 5), ParameterError);
  EXPECT_THROW(edge_map(Image(8, 8), -1, 5), ParameterError);
  CannyOptions even;
  even.kernel_size = 4;
  EXPECT_THROW(edge_map(Image(8, 8), 1, 5, even), ParameterError);
}

TEST(EdgeEmbedding, DensityThroughAffine) {
  Volume none(1, 4, 4, 0.0);
  EXPECT_TRUE((edge_embedding(none, 2, 2.0, 0.25).e.array() == 0.25).all());
  Volume full(1, 4, 4, 1.0);
  EXPECT_TRUE((edge_embedding(full, 2, 2.0, 0.25).e.array() == 2.25).all());
  Volume half(1, 2, 2, 0.0);
  half.at(0, 0, 0) = half.at(0, 1, 1) = 1.0;
  EXPECT_DOUBLE_EQ(edge_embedding(half, 2, 2.0, 0.25).e(0), 1.25);
  EXPECT_DOUBLE_EQ(edge_embedding(half, 2).e(0), 0.5);
}

TEST(EdgeAttention, ZeroEdgesMatchPlainAttentionBitwise) {
  CounterRng rng(2);
  const auto q = random_matrix(rng, 7, 8), k = random_matrix(rng, 7, 8), v = random_matrix(rng, 7, 8);
  const EdgeEmbedding zero{Eigen::VectorXd::Zero(7)};
  for (int heads : {1, 2, 4}) EXPECT_EQ(edge_attention(q, k, v, zero, heads), scaled_dot_product_attention(q, k, v, heads));
}

TEST(EdgeAttention, ZeroQueryAveragesValues) {
  CounterRng rng(3);
  const auto k = random_matrix(rng, 6, 4), v = random_matrix(rng, 6, 4);
  const Eigen::MatrixXd out = edge_attention(Eigen::MatrixXd::Zero(6, 4), k, v, {Eigen::VectorXd::Zero(6)}, 2);
  const Eigen::RowVectorXd mean = v.colwise().mean();
  for (int i = 0; i < 6; ++i) EXPECT_LT((out.row(i) - mean).norm(), 1e-14);
}

TEST(EdgeAttention, ConstantEdgeShiftCancels) {
  CounterRng rng(4);
  const auto q = random_matrix(rng, 9, 6), k = random_matrix(rng, 9, 6), v = random_matrix(rng, 9, 6);
  const EdgeEmbedding e = random_edges(rng, 9);
  const Eigen::MatrixXd base = edge_attention(q, k, v, e, 3);
  for (double c : {-3.0, 0.5, 10.0}) {
    const EdgeEmbedding shifted{(e.e.array() + c).matrix()};
    const Eigen::MatrixXd out = edge_attention(q, k, v, shifted, 3);
    EXPECT_LT((out - base).cwiseAbs().maxCoeff() / base.cwiseAbs().maxCoeff(), 1e-12) << c;
  }
}

TEST(EdgeAttention, EdgesFavorKeys) {
  // with Q = 0 the weights are softmax(e / sqrt(h)): a larger e_j draws every row toward value j
  const Eigen::MatrixXd v = (Eigen::MatrixXd(3, 1) << 0.0, 1.0, 2.0).finished();
  EdgeEmbedding e{Eigen::Vector3d(0.0, 0.0, 3.0)};
  const Eigen::MatrixXd out = edge_attention(Eigen::MatrixXd::Zero(3, 1), Eigen::MatrixXd::Zero(3, 1), v, e, 1);
  const double w = std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(out(i, 0), (1.0 + 2.0 * w) / (2.0 + w), 1e-14);
}

TEST(EdgeAttention, RowsOfWeightsSumToOne) {
  // with V = I the output is the attention matrix itself
  CounterRng rng(5);
  const auto q = random_matrix(rng, 5, 5), k = random_matrix(rng, 5, 5);
  const Eigen::MatrixXd weights = edge_attention(q, k, Eigen::MatrixXd::Identity(5, 5), random_edges(rng, 5), 1);
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(weights.row(i).sum(), 1.0, 1e-12);
    EXPECT_GE(weights.row(i).minCoeff(), 0.0);
  }
}

TEST(EdgeAttention, PermutationEquivariant) {
  CounterRng rng(6);
  const auto q = random_matrix(rng, 8, 4), k = random_matrix(rng, 8, 4), v = random_matrix(rng, 8, 4);
  const EdgeEmbedding e = random_edges(rng, 8);
  Eigen::VectorXi idx(8);
  idx << 3, 7, 0, 5, 1, 6, 2, 4;
  const Eigen::PermutationMatrix<Eigen::Dynamic> perm(idx);
  const Eigen::MatrixXd out = edge_attention(perm * q, perm * k, perm * v, {perm * e.e}, 2);
  EXPECT_LT((out - perm * edge_attention(q, k, v, e, 2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EdgeAttention, ShapeErrors) {
  const Eigen::MatrixXd m = Eigen::MatrixXd::Zero(4, 6);
  EXPECT_THROW(edge_attention(m, m, m, {Eigen::VectorXd::Zero(4)}, 4), ParameterError);
  EXPECT_THROW(edge_attention(m, m, m, {Eigen::VectorXd::Zero(3)}, 2), ParameterError);
  EXPECT_THROW(edge_attention(m, Eigen::MatrixXd::Zero(5, 6), m, {Eigen::VectorXd::Zero(4)}, 2), ParameterError);
  EXPECT_THROW(edge_attention(m, m, m, {Eigen::VectorXd::Zero(4)}, 0), ParameterError);
  EXPECT_THROW(edge_attention_grad(m, m, m, {Eigen::VectorXd::Zero(4)}, Eigen::MatrixXd::Zero(4, 5), 2), ParameterError);
}

TEST(EdgeAttentionGrad, ZeroUpstreamGivesZero) {
  CounterRng rng(7);
  const auto q = random_matrix(rng, 5, 4), k = random_matrix(rng, 5, 4), v = random_matrix(rng, 5, 4);
  const auto g = edge_attention_grad(q, k, v, random_edges(rng, 5), Eigen::MatrixXd::Zero(5, 4), 2);
  EXPECT_EQ(g.dq.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.dk.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.dv.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.de.cwiseAbs().maxCoeff(), 0.0);
}

TEST(EdgeAttentionGrad, SingleTokenPassesUpstreamToValues) {
  CounterRng rng(8);
  const auto q = random_matrix(rng, 1, 4), k = random_matrix(rng, 1, 4), v = random_matrix(rng, 1, 4);
  const auto up = random_matrix(rng, 1, 4);
  const auto g = edge_attention_grad(q, k, v, random_edges(rng, 1), up, 2);
  EXPECT_LT((g.dv - up).norm(), 1e-15);
  EXPECT_LT(g.dq.norm(), 1e-15);
  EXPECT_LT(g.dk.norm(), 1e-15);
  EXPECT_LT(g.de.norm(), 1e-15);
}

TEST(EdgeAttentionGrad, MatchesCentralDifferencesOnTwentySeeds) {
  const double h = 1e-5;
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    CounterRng rng(seed);
    Eigen::MatrixXd q = random_matrix(rng, 5, 4), k = random_matrix(rng, 5, 4), v = random_matrix(rng, 5, 4);
    EdgeEmbedding e = random_edges(rng, 5);
    const Eigen::MatrixXd up = random_matrix(rng, 5, 4);
    const auto g = edge_attention_grad(q, k, v, e, up, 2);
    // scalar objective <upstream, attention(...)>
    auto objective = [&] { return (up.array() * edge_attention(q, k, v, e, 2).array()).sum(); };
    double worst = 0.0;
    auto check = [&](double& x, double analytic) {
      const double saved = x;
      x = saved + h;
      const double plus = objective();
      x = saved - h;
      const double minus = objective();
      x = saved;
      worst = std::max(worst, rel_err((plus - minus) / (2 * h), analytic));
    };
    for (Eigen::Index i = 0; i < 5; ++i) {
      for (Eigen::Index j = 0; j < 4; ++j) {
        check(q(i, j), g.dq(i, j));
        check(k(i, j), g.dk(i, j));
        check(v(i, j), g.dv(i, j));
      }
      check(e.e(i), g.de(i));
    }
    EXPECT_LT(worst, 1e-4) << "seed " << seed;
  }
}
