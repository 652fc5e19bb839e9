#pragma once

// Point-set kernels: farthest point sampling, k-nearest neighbours and local
// max pooling. All selection rules are deterministic functions of geometry:
// ties on distance fall back to lexicographic xyz and then to the lower index,
// so results do not depend on the storage order of the points.

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "spt/errors.hpp"
#include "spt/tensor.hpp"

namespace spt {

using IndexVector = std::vector<Index>;
using NeighborIndex = IndexMatrix;

template <typename Scalar>
using PointsX3 = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Points = PointsX3<double>;

struct PointCloud {
  Points xyz;
  // N x (C0 - 3) extra per-point channels; zero columns for plain xyz clouds.
  RowMatrix features;

  Index size() const { return xyz.rows(); }
  Index channels() const { return 3 + features.cols(); }

  static PointCloud from_xyz(Points xyz) {
    PointCloud pc;
    pc.features.resize(xyz.rows(), 0);
    pc.xyz = std::move(xyz);
    return pc;
  }
};

namespace geometry_detail {

// Order-independent coordinate sum: summing sorted values gives the same
// rounding for every permutation of the rows.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 1, 3> sorted_centroid(const Eigen::MatrixBase<Derived>& xyz) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, 1, 3> c;
  std::vector<Scalar> column(static_cast<std::size_t>(xyz.rows()));
  for (Index d = 0; d < 3; ++d) {
    for (Index i = 0; i < xyz.rows(); ++i) column[static_cast<std::size_t>(i)] = xyz(i, d);
    std::sort(column.begin(), column.end());
    Scalar total = 0;
    for (Scalar v : column) total += v;
    c(d) = total / static_cast<Scalar>(xyz.rows());
  }
  return c;
}

template <typename Derived>
bool lex_less(const Eigen::MatrixBase<Derived>& xyz, Index a, Index b) {
  for (Index d = 0; d < 3; ++d) {
    if (xyz(a, d) != xyz(b, d)) return xyz(a, d) < xyz(b, d);
  }
  return a < b;
}

template <typename Derived, typename Scalar>
Scalar squared_distance(const Eigen::MatrixBase<Derived>& xyz, Index i, const Eigen::Matrix<Scalar, 1, 3>& p) {
  const Scalar dx = xyz(i, 0) - p(0);
  const Scalar dy = xyz(i, 1) - p(1);
  const Scalar dz = xyz(i, 2) - p(2);
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace geometry_detail

enum class FpsSeed { CentroidFarthest };

// Greedy max-min subset of m distinct row indices, in selection order.
template <typename Derived>
IndexVector fps(const Eigen::MatrixBase<Derived>& xyz, Index m, FpsSeed = FpsSeed::CentroidFarthest) {
  using Scalar = typename Derived::Scalar;
  using geometry_detail::lex_less;
  using geometry_detail::squared_distance;
  const Index n = xyz.rows();
  if (xyz.cols() != 3) throw DimensionError("fps: points must have 3 columns");
  if (m < 1 || m > n) {
    throw CountError("fps: sample count " + std::to_string(m) + " must lie in [1, " + std::to_string(n) + "]");
  }

  // Larger key wins; equal keys fall back to lexicographic xyz, then index.
  auto better = [&](Index a, Scalar ka, Index b, Scalar kb) {
    if (ka != kb) return ka > kb;
    return lex_less(xyz, a, b);
  };

  const Eigen::Matrix<Scalar, 1, 3> centroid = geometry_detail::sorted_centroid(xyz);
  std::vector<Scalar> min_dist(static_cast<std::size_t>(n));
  Index seed = 0;
  for (Index i = 0; i < n; ++i) {
    min_dist[static_cast<std::size_t>(i)] = squared_distance(xyz, i, centroid);
    if (i > 0 && better(i, min_dist[static_cast<std::size_t>(i)], seed, min_dist[static_cast<std::size_t>(seed)])) {
      seed = i;
    }
  }

  IndexVector picked;
  picked.reserve(static_cast<std::size_t>(m));
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  std::fill(min_dist.begin(), min_dist.end(), std::numeric_limits<Scalar>::infinity());
  Index last = seed;
  for (Index step = 0; step < m; ++step) {
    picked.push_back(last);
    taken[static_cast<std::size_t>(last)] = true;
    if (step + 1 == m) break;
    const Eigen::Matrix<Scalar, 1, 3> anchor = xyz.row(last);
    Index best = -1;
    for (Index i = 0; i < n; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      auto& d = min_dist[static_cast<std::size_t>(i)];
      d = std::min(d, squared_distance(xyz, i, anchor));
      if (best < 0 || better(i, d, best, min_dist[static_cast<std::size_t>(best)])) best = i;
    }
    last = best;
  }
  return picked;
}

inline IndexVector fps(const PointCloud& pc, Index m, FpsSeed seed = FpsSeed::CentroidFarthest) {
  return fps(pc.xyz, m, seed);
}

// For every query row, the k nearest base rows ordered by ascending squared
// distance (ties: lower base index first).
template <typename DerivedQ, typename DerivedB>
NeighborIndex knn(const Eigen::MatrixBase<DerivedQ>& query, const Eigen::MatrixBase<DerivedB>& base, Index k) {
  using Scalar = typename DerivedB::Scalar;
  const Index nb = base.rows();
  if (k < 1 || k > nb) {
    throw CountError("knn: k = " + std::to_string(k) + " must lie in [1, " + std::to_string(nb) + "]");
  }
  NeighborIndex out(query.rows(), k);
  std::vector<Scalar> dist(static_cast<std::size_t>(nb));
  std::vector<Index> order(static_cast<std::size_t>(nb));
  for (Index q = 0; q < query.rows(); ++q) {
    const Eigen::Matrix<Scalar, 1, 3> p = query.row(q).template cast<Scalar>();
    for (Index i = 0; i < nb; ++i) dist[static_cast<std::size_t>(i)] = geometry_detail::squared_distance(base, i, p);
    std::iota(order.begin(), order.end(), Index{0});
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Index a, Index b) {
      const Scalar da = dist[static_cast<std::size_t>(a)];
      const Scalar db = dist[static_cast<std::size_t>(b)];
      return da != db ? da < db : a < b;
    });
    for (Index j = 0; j < k; ++j) out(q, j) = order[static_cast<std::size_t>(j)];
  }
  return out;
}

inline NeighborIndex knn(const PointCloud& query, const PointCloud& base, Index k) {
  return knn(query.xyz, base.xyz, k);
}

// grouped[T, N_l, N_k, C] -> [T, N_l, C], maximum over the neighbourhood.
inline Tensor local_max_pool(const Tensor& grouped) {
  if (grouped.rank() != 4) {
    throw DimensionError("local_max_pool: expected rank-4 input, got " + to_string(grouped.shape()));
  }
  return max_axis(grouped, 2);
}

// Shifts the centroid to the origin and scales the farthest point to radius 1.
void normalize_unit_sphere(PointCloud& pc);

}  // namespace spt
