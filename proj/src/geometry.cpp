#include "spt/geometry.hpp"

#include <cmath>

namespace spt {

void normalize_unit_sphere(PointCloud& pc) {
  if (pc.size() < 1) throw CountError("normalize_unit_sphere: empty cloud");
  if (!pc.xyz.allFinite()) throw ContractError("normalize_unit_sphere: non-finite coordinates");
  const Eigen::RowVector3d centroid = geometry_detail::sorted_centroid(pc.xyz);
  pc.xyz.rowwise() -= centroid;
  const double radius = pc.xyz.rowwise().norm().maxCoeff();
  if (radius > 0.0) pc.xyz /= radius;
}

}  // namespace spt
