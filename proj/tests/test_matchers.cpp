#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "compose/errors.hpp"
#include "compose/matchers.hpp"
#include "fixtures.hpp"

using namespace compose;
using namespace compose::match;

namespace {

MatcherConfig kind(MatcherKind k) {
  MatcherConfig c;
  c.kind = k;
  return c;
}

void expect_row_stochastic(const Matrix& t) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < t.cols(); ++c) {
      EXPECT_GE(t(r, c), 0.0);
      s += t(r, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

double brute_force_best(const Matrix& s) {
  std::vector<std::size_t> perm(s.rows());
  std::iota(perm.begin(), perm.end(), 0);
  double best = -INFINITY;
  do {
    double v = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) v += s(i, perm[i]);
    best = std::max(best, v);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST(CenterSlots, TwoOrthogonalRows) {
  const CenteredSlots c = center_slots(Matrix{{1, 0}, {0, 1}});
  const double h = std::sqrt(0.5);
  EXPECT_NEAR(c.z_hat(0, 0), h, 1e-15);
  EXPECT_NEAR(c.z_hat(0, 1), -h, 1e-15);
  EXPECT_NEAR(c.z_hat(1, 0), -h, 1e-15);
  EXPECT_NEAR(c.z_hat(1, 1), h, 1e-15);
}

TEST(CenterSlots, RowAtMeanDropped) {
  // The third row coincides with the mean of all three rows.
  const CenteredSlots c = center_slots(Matrix{{1, 0}, {-1, 0}, {0, 0}});
  EXPECT_EQ(c.z_hat.rows(), 2u);
  ASSERT_EQ(c.dropped.size(), 1u);
  EXPECT_EQ(c.dropped[0], 2u);
  EXPECT_EQ(c.source_ids, (std::vector<std::size_t>{0, 1}));
}

TEST(CenterSlots, IdenticalRowsThrow) {
  EXPECT_THROW(center_slots(Matrix{{0.6, 0.8}, {0.6, 0.8}}), EmptyAfterCentering);
}

TEST(CostMatrix, Examples) {
  const Matrix i3 = Matrix::identity(3);
  EXPECT_EQ(cost_matrix(i3, i3), i3);
  EXPECT_DOUBLE_EQ(cost_matrix(Matrix{{1, 0}}, Matrix{{-1, 0}})(0, 0), -1.0);
  Rng rng(1);
  const Matrix a = fixtures::unit_rows(3, 5, rng), b = fixtures::unit_rows(4, 5, rng);
  const Matrix s = cost_matrix(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(s(i, j), dot(a.row(i), b.row(j)), 1e-15);
}

TEST(Coupling, HardPicksRowArgmaxNotPermutation) {
  const Matrix t = make_coupling(kind(MatcherKind::hard_chamfer), Matrix{{0.9, 0.1}, {0.8, 0.2}}).t;
  EXPECT_EQ(t, (Matrix{{1, 0}, {1, 0}}));
}

TEST(Coupling, HardTieGoesToLowestIndex) {
  const Matrix t = make_coupling(kind(MatcherKind::hard_chamfer), Matrix{{0.3, 0.5, 0.5}}).t;
  EXPECT_EQ(t, (Matrix{{0, 1, 0}}));
}

TEST(Coupling, SoftZeroBetaIsUniform) {
  MatcherConfig c = kind(MatcherKind::soft_chamfer);
  c.beta = 0.0;
  const Coupling cp = make_coupling(c, Matrix{{0.9, -0.2, 0.1, 0.4}});
  for (double x : cp.t.data()) EXPECT_NEAR(x, 0.25, 1e-15);
}

TEST(Coupling, SoftIsRowSoftmax) {
  MatcherConfig c = kind(MatcherKind::soft_chamfer);
  c.beta = 3.0;
  const Matrix t = make_coupling(c, Matrix{{0.0, std::log(2.0) / 3.0}}).t;
  EXPECT_NEAR(t(0, 0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(t(0, 1), 2.0 / 3.0, 1e-15);
}

TEST(Coupling, MutualNnEqualsHard) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const Matrix s = cost_matrix(fixtures::unit_rows(1 + rng.uniform_index(6), 4, rng),
                                 fixtures::unit_rows(1 + rng.uniform_index(6), 4, rng));
    EXPECT_EQ(make_coupling(kind(MatcherKind::mutual_nn), s).t, make_coupling(kind(MatcherKind::hard_chamfer), s).t);
  }
}

TEST(Sinkhorn, DominantDiagonal) {
  const Coupling c = sinkhorn(Matrix{{10, 0}, {0, 10}}, 0.1, 1000, 1e-9);
  EXPECT_NEAR(c.t(0, 0), 1.0, 1e-6);
  EXPECT_NEAR(c.t(1, 1), 1.0, 1e-6);
  EXPECT_TRUE(c.converged);
}

TEST(Sinkhorn, LargeEpsilonNearUniformTwoByTwo) {
  // For a 2x2 coupling the exact deviation is tanh(Delta / 4 eps) / 2 with
  // Delta = S00 + S11 - S01 - S10.
  const Matrix s{{0.9, 0.1}, {0.8, 0.2}};
  const Coupling c = sinkhorn(s, 100.0, 1000, 1e-12);
  double dev = 0.0;
  for (double x : c.t.data()) dev = std::max(dev, std::abs(x - 0.5));
  EXPECT_LE(dev, 1e-3);
  EXPECT_NEAR(dev, 0.5 * std::tanh(0.2 / 400.0), 1e-12);

  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const Matrix r = cost_matrix(fixtures::unit_rows(2, 3, rng), fixtures::unit_rows(2, 3, rng));
    const double delta = r(0, 0) + r(1, 1) - r(0, 1) - r(1, 0);
    const Coupling cr = sinkhorn(r, 100.0, 1000, 1e-12);
    EXPECT_NEAR(std::abs(cr.t(0, 0) - 0.5), 0.5 * std::tanh(std::abs(delta) / 400.0), 1e-12);
  }
}

TEST(Sinkhorn, RectangularMarginals) {
  Rng rng(4);
  const Matrix s = cost_matrix(fixtures::unit_rows(3, 4, rng), fixtures::unit_rows(5, 4, rng));
  const Coupling c = sinkhorn(s, 0.2, 5000, 1e-11);
  expect_row_stochastic(c.t);
  for (std::size_t j = 0; j < 5; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < 3; ++i) col += c.t(i, j);
    EXPECT_NEAR(col, 3.0 / 5.0, 1e-9);
  }
}

TEST(Sinkhorn, NonConvergenceReported) {
  Rng rng(5);
  const Matrix s = cost_matrix(fixtures::unit_rows(6, 4, rng), fixtures::unit_rows(6, 4, rng));
  const Coupling c = sinkhorn(s, 0.001, 3, 1e-14);
  EXPECT_FALSE(c.converged);
  EXPECT_EQ(c.iterations, 3);
  EXPECT_GT(c.residual, 1e-14);
  expect_row_stochastic(c.t);
}

TEST(Hungarian, MatchesBruteForce) {
  Rng rng(6);
  for (int t = 0; t < 300; ++t) {
    const std::size_t k = 1 + rng.uniform_index(6);
    const Matrix s = gaussian_matrix(k, k, 1.0, rng);
    const auto a = hungarian_assignment(s);
    std::vector<std::size_t> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < k; ++i) ASSERT_EQ(sorted[i], i);
    double v = 0.0;
    for (std::size_t i = 0; i < k; ++i) v += s(i, a[i]);
    EXPECT_NEAR(v, brute_force_best(s), 1e-12);
  }
}

TEST(Hungarian, RejectsNonSquare) {
  EXPECT_THROW(make_coupling(kind(MatcherKind::hungarian), Matrix(2, 3)), InvalidArgument);
}

TEST(Coupling, AllKindsRowStochasticFuzz) {
  Rng rng(7);
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 1 + rng.uniform_index(6);
    const Matrix s = cost_matrix(fixtures::unit_rows(k, 5, rng), fixtures::unit_rows(k, 5, rng));
    for (auto mk : {MatcherKind::hard_chamfer, MatcherKind::soft_chamfer, MatcherKind::mutual_nn,
                    MatcherKind::sinkhorn, MatcherKind::hungarian}) {
      const Matrix tm = make_coupling(kind(mk), s).t;
      expect_row_stochastic(tm);
      if (mk == MatcherKind::hard_chamfer || mk == MatcherKind::hungarian)
        for (double x : tm.data()) EXPECT_TRUE(x == 0.0 || x == 1.0);
    }
  }
}

TEST(AssignmentScore, Examples) {
  EXPECT_DOUBLE_EQ(assignment_score(Matrix::identity(3), Matrix::identity(3)), 1.0);
  const Matrix s{{0.2, 0.4}, {-0.6, 1.0}};
  EXPECT_DOUBLE_EQ(assignment_score(Matrix(2, 2, 0.5), s), 0.25);
  const Matrix hard = make_coupling(MatcherConfig{}, s).t;
  EXPECT_DOUBLE_EQ(assignment_score(hard, s), (0.4 + 1.0) / 2.0);
}

TEST(AssignmentScore, HardEqualsForwardChamferFuzz) {
  Rng rng(8);
  for (int t = 0; t < 1000; ++t) {
    const Matrix q = fixtures::unit_rows(1 + rng.uniform_index(7), 6, rng);
    const Matrix p = fixtures::unit_rows(1 + rng.uniform_index(9), 6, rng);
    const Matrix s = cost_matrix(q, p);
    ASSERT_NEAR(assignment_score(make_coupling(MatcherConfig{}, s).t, s), forward_chamfer(q, p), 1e-12);
  }
}

TEST(SelectTopk, Examples) {
  EXPECT_EQ(select_topk(Vector{0.1, 0.6, 0.3}, 3), (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_EQ(select_topk(Vector{0.5, 0.3, 0.2}, 2), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(select_topk(Vector{0.4, 0.4, 0.2}, 1), (std::vector<std::size_t>{0}));
  EXPECT_EQ(select_topk(Vector{0.4, 0.6}, 5).size(), 2u);
}

TEST(ChamferScore, Examples) {
  Rng rng(9);
  const Matrix a = fixtures::unit_rows(4, 5, rng);
  EXPECT_NEAR(chamfer_score(a, a), 2.0, 1e-15);
  EXPECT_DOUBLE_EQ(chamfer_score(Matrix{{1, 0}}, Matrix{{0, 1}}), 0.0);
  EXPECT_DOUBLE_EQ(chamfer_score(Matrix{{1, 0}}, Matrix{{1, 0}, {0, 1}}), 1.5);
  EXPECT_THROW(chamfer_score(Matrix(0, 2), a), InvalidArgument);
}

TEST(ChamferScore, SymmetricFuzz) {
  Rng rng(10);
  for (int t = 0; t < 200; ++t) {
    const Matrix q = fixtures::unit_rows(1 + rng.uniform_index(5), 4, rng);
    const Matrix p = fixtures::unit_rows(1 + rng.uniform_index(8), 4, rng);
    const double s = chamfer_score(q, p);
    EXPECT_DOUBLE_EQ(s, chamfer_score(p, q));
    EXPECT_GE(s, -2.0);
    EXPECT_LE(s, 2.0);
    MatcherConfig hard;
    EXPECT_NEAR(bidirectional_assignment_score(hard, q, p), s, 1e-12);
  }
}

TEST(ChamferScore, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    const Matrix q = fixtures::unit_rows(3, 5, rng), p = fixtures::unit_rows(4, 5, rng);
    const ChamferGrad g = chamfer_score_grad(q, p);
    EXPECT_DOUBLE_EQ(g.score, chamfer_score(q, p));
    const Vector fd = finite_diff_gradient(
        [&](std::span<const double> x) { return chamfer_score(Matrix(3, 5, Vector(x.begin(), x.end())), p); },
        q.data(), 1e-6);
    EXPECT_LE(relative_error(g.grad_query.data(), fd), 1e-6);
  }
}

TEST(BlendScore, Examples) {
  EXPECT_DOUBLE_EQ(blend_score(2.0, 0.5, 1.0, 10.0), 2.0);
  EXPECT_DOUBLE_EQ(blend_score(2.0, 0.5, 0.0, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(blend_score(2.0, 0.5, 0.3, 10.0), 0.3 * 2.0 + 0.7 * 5.0);
  EXPECT_DOUBLE_EQ(MatcherConfig{}.gamma_blend, 0.3);
}

TEST(ClassifyEpisode, OneWayAlwaysCorrect) {
  Rng rng(12);
  const Episode ep = fixtures::episode(6, 4, 1, 2, 5, rng);
  const enc::EncoderParams p = enc::init_encoder(6, 5, 10.0, rng);
  const EpisodeResult r = classify_episode(ep, p, MatcherConfig{});
  EXPECT_EQ(r.n_correct, 5u);
}

TEST(ClassifyEpisode, DuplicatedSupportWithHolisticOnly) {
  Rng rng(13);
  Episode ep = fixtures::episode(8, 4, 3, 1, 0, rng);
  ep.queries_per_class = 1;
  for (const auto& s : ep.support) ep.query.push_back(s);
  const enc::EncoderParams p = enc::init_encoder(8, 5, 10.0, rng);
  MatcherConfig c;
  c.gamma_blend = 1.0;
  EXPECT_EQ(classify_episode(ep, p, c).n_correct, 3u);
}

TEST(ClassifyEpisode, SeparableTwoWayPerfect) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    const Episode ep = fixtures::separable_episode(16, 5, 2, 3, 5, 0.1, rng);
    const enc::EncoderParams p = enc::init_encoder(16, 8, 10.0, rng);
    for (auto mk : {MatcherKind::hard_chamfer, MatcherKind::sinkhorn, MatcherKind::hungarian})
      EXPECT_EQ(classify_episode(ep, p, kind(mk)).n_correct, ep.query.size()) << seed;
  }
}

TEST(ClassifyEpisode, MissingSupportClassRejected) {
  Rng rng(14);
  Episode ep = fixtures::episode(6, 3, 2, 1, 1, rng);
  ep.query[0].label = 9;
  EXPECT_THROW(classify_episode(ep, enc::init_encoder(6, 4, 10.0, rng), MatcherConfig{}), InvalidArgument);
}

TEST(ClassifyEpisode, RotationInvariantWithIdentityHead) {
  Rng rng(15);
  const Episode ep = fixtures::episode(8, 5, 4, 2, 3, rng);
  enc::EncoderParams p = enc::init_encoder(8, 6, 10.0, rng);
  const Matrix u = random_orthogonal(8, rng);
  Episode rot = ep;
  for (auto* set : {&rot.support, &rot.query})
    for (auto& img : *set) img.phi = matmul_bt(img.phi, u);
  // The router sees rotated inputs; rotate W1 with them so routing is unchanged.
  enc::EncoderParams pr = p;
  pr.router.w1 = matmul_bt(p.router.w1, u);
  for (auto mk : {MatcherKind::hard_chamfer, MatcherKind::soft_chamfer, MatcherKind::sinkhorn}) {
    const EpisodeResult a = classify_episode(ep, p, kind(mk));
    const EpisodeResult b = classify_episode(rot, pr, kind(mk));
    EXPECT_EQ(a.predictions, b.predictions);
    EXPECT_LE(max_abs(a.blended - b.blended), 1e-10);
  }
}
