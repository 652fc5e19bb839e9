#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "spt/geometry.hpp"

using namespace spt;

namespace {

Points random_points(Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Points p(n, 3);
  for (Index i = 0; i < n; ++i)
    for (Index d = 0; d < 3; ++d) p(i, d) = u(rng);
  return p;
}

double sq(const Points& p, Index i, const Eigen::RowVector3d& q) { return (p.row(i) - q).squaredNorm(); }

// Max-min certificate: every pick is at least as far from the already chosen
// set as any other unchosen point (recomputed from scratch each step).
void expect_greedy_certificate(const Points& p, const IndexVector& picked) {
  const Eigen::RowVector3d centroid = p.colwise().mean();
  for (Index i = 0; i < p.rows(); ++i) EXPECT_GE(sq(p, picked[0], centroid) + 1e-12, sq(p, i, centroid));
  for (std::size_t s = 1; s < picked.size(); ++s) {
    auto gap = [&](Index i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s; ++j) best = std::min(best, sq(p, i, p.row(picked[j])));
      return best;
    };
    const double chosen = gap(picked[s]);
    for (Index i = 0; i < p.rows(); ++i) {
      if (std::find(picked.begin(), picked.begin() + static_cast<std::ptrdiff_t>(s), i) !=
          picked.begin() + static_cast<std::ptrdiff_t>(s))
        continue;
      ASSERT_GE(chosen, gap(i)) << "step " << s << " point " << i;
    }
  }
}

}  // namespace

TEST(Fps, ExhaustionIsPermutation) {
  std::mt19937_64 rng(1);
  const Points p = random_points(40, rng);
  IndexVector idx = fps(p, 40);
  std::sort(idx.begin(), idx.end());
  for (Index i = 0; i < 40; ++i) EXPECT_EQ(idx[static_cast<std::size_t>(i)], i);
}

TEST(Fps, UnitSquarePicksDiagonal) {
  Points p(4, 3);
  p << 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0;
  const IndexVector idx = fps(p, 2);
  // all corners tie against the centroid: lexicographic (0,0,0) seeds
  EXPECT_EQ(idx, (IndexVector{0, 3}));
}

TEST(Fps, SingleSampleIsCentroidFarthest) {
  std::mt19937_64 rng(2);
  const Points p = random_points(50, rng);
  const Eigen::RowVector3d c = p.colwise().mean();
  Index far = 0;
  for (Index i = 1; i < p.rows(); ++i)
    if (sq(p, i, c) > sq(p, far, c)) far = i;
  EXPECT_EQ(fps(p, 1), IndexVector{far});
}

TEST(Fps, CountErrors) {
  const Points p = Points::Zero(5, 3);
  EXPECT_THROW(fps(p, 0), CountError);
  EXPECT_THROW(fps(p, 6), CountError);
}

TEST(Fps, GreedyCertificateOnRandomInputs) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = std::uniform_int_distribution<Index>(1, 128)(rng);
    const Index m = std::uniform_int_distribution<Index>(1, n)(rng);
    const Points p = random_points(n, rng);
    const IndexVector idx = fps(p, m);
    ASSERT_EQ(static_cast<Index>(idx.size()), m);
    EXPECT_EQ(std::set<Index>(idx.begin(), idx.end()).size(), idx.size());
    expect_greedy_certificate(p, idx);
  }
}

TEST(Fps, SelectionFollowsGeometryNotStorageOrder) {
  std::mt19937_64 rng(4);
  const Points p = random_points(64, rng);
  std::vector<Index> perm(64);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Points q(64, 3);
  for (Index i = 0; i < 64; ++i) q.row(i) = p.row(perm[static_cast<std::size_t>(i)]);
  const IndexVector a = fps(p, 16);
  const IndexVector b = fps(q, 16);
  for (std::size_t s = 0; s < a.size(); ++s) EXPECT_EQ(perm[static_cast<std::size_t>(b[s])], a[s]);
}

TEST(Fps, FloatScalarWorks) {
  PointsX3<float> p(3, 3);
  p << 0, 0, 0, 1, 0, 0, 5, 0, 0;
  EXPECT_EQ(fps(p, 2), (IndexVector{2, 0}));
}

TEST(Knn, SinglePoint) {
  const Points p = Points::Zero(1, 3);
  const NeighborIndex nn = knn(p, p, 1);
  EXPECT_EQ(nn(0, 0), 0);
}

TEST(Knn, CollinearOrdering) {
  Points base(3, 3);
  base << 0, 0, 0, 1, 0, 0, 2, 0, 0;
  const NeighborIndex nn = knn(base.topRows(1), base, 2);
  EXPECT_EQ(nn(0, 0), 0);
  EXPECT_EQ(nn(0, 1), 1);
}

TEST(Knn, KTooLarge) {
  const Points p = Points::Zero(3, 3);
  EXPECT_THROW(knn(p, p, 4), CountError);
  EXPECT_THROW(knn(p, p, 0), CountError);
}

TEST(Knn, TiesPreferLowerIndex) {
  Points base(3, 3);
  base << 1, 0, 0, -1, 0, 0, 0, 1, 0;
  const NeighborIndex nn = knn(Points::Zero(1, 3), base, 3);
  EXPECT_EQ(nn(0, 0), 0);
  EXPECT_EQ(nn(0, 1), 1);
  EXPECT_EQ(nn(0, 2), 2);
}

TEST(Knn, MatchesExhaustiveSort) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = std::uniform_int_distribution<Index>(1, 96)(rng);
    const Index k = std::uniform_int_distribution<Index>(1, n)(rng);
    const Points base = random_points(n, rng);
    const Points query = random_points(8, rng);
    const NeighborIndex nn = knn(query, base, k);
    for (Index q = 0; q < query.rows(); ++q) {
      std::vector<std::pair<double, Index>> all;
      for (Index i = 0; i < n; ++i) all.emplace_back(sq(base, i, query.row(q)), i);
      std::sort(all.begin(), all.end());
      for (Index j = 0; j < k; ++j) ASSERT_EQ(nn(q, j), all[static_cast<std::size_t>(j)].second);
    }
  }
}

TEST(LocalMaxPool, SingleNeighbourIsIdentity) {
  Eigen::ArrayXd d = Eigen::ArrayXd::LinSpaced(12, -3, 4);
  const Tensor g({2, 3, 1, 2}, d);
  const Tensor r = local_max_pool(g);
  EXPECT_EQ(r.shape(), (Shape{2, 3, 2}));
  EXPECT_TRUE((r.data() == d).all());
}

TEST(LocalMaxPool, TakesNeighbourhoodMaximum) {
  const Tensor g({1, 1, 3, 1}, (Eigen::ArrayXd(3) << 1, 5, 3).finished());
  EXPECT_DOUBLE_EQ(local_max_pool(g).item(), 5.0);
}

TEST(LocalMaxPool, RankChecked) { EXPECT_THROW(local_max_pool(Tensor({2, 3, 4})), DimensionError); }

TEST(LocalMaxPool, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  // distinct values spaced well beyond the FD step keep the max away from ties
  Eigen::ArrayXd d = Eigen::ArrayXd::LinSpaced(48, -2.4, 2.3);
  std::shuffle(d.data(), d.data() + d.size(), rng);
  Tensor x = Tensor::parameter({2, 3, 4, 2}, d);
  const Tensor w({3, 2}, Eigen::ArrayXd::LinSpaced(6, 0.5, 1.5));
  auto f = [&](const Tensor& t) { return sum(mul(local_max_pool(t), w)); };
  f(x).backward();
  Eigen::ArrayXd fd(d.size());
  const double h = 1e-5;
  for (Index i = 0; i < d.size(); ++i) {
    Eigen::ArrayXd p = d, m = d;
    p(i) += h;
    m(i) -= h;
    fd(i) = (f(Tensor({2, 3, 4, 2}, p)).item() - f(Tensor({2, 3, 4, 2}, m)).item()) / (2 * h);
  }
  EXPECT_LT((fd - x.grad()).matrix().norm() / fd.matrix().norm(), 1e-6);
}

TEST(NormalizeUnitSphere, CentresAndScales) {
  std::mt19937_64 rng(7);
  PointCloud pc = PointCloud::from_xyz(random_points(30, rng) * 3.0 + Points::Constant(30, 3, 2.0));
  normalize_unit_sphere(pc);
  EXPECT_LT(pc.xyz.colwise().mean().norm(), 1e-12);
  EXPECT_NEAR(pc.xyz.rowwise().norm().maxCoeff(), 1.0, 1e-12);
}
