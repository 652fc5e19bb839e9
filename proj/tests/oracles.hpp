#pragma once

// Independent reference checks shared by the unit suites and the acceptance
// binary. Each returns an empty string on success, else the first violation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spt/encoding.hpp"
#include "spt/geometry.hpp"
#include "spt/neurons.hpp"

namespace oracle {

using spt::Index;
using spt::IndexVector;

inline spt::PointCloud random_cloud(Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  spt::Points p(n, 3);
  for (Index i = 0; i < n; ++i)
    for (Index d = 0; d < 3; ++d) p(i, d) = u(rng);
  return spt::PointCloud::from_xyz(std::move(p));
}

// Q-SDE queue discipline replayed on the provenance: step 0 is FPS(P, N_s);
// step t keeps step t-1 without its first N_p entries (FIFO dequeue) and
// appends N_p never-seen points in FPS order over the never-seen remainder.
inline std::string check_qsde(const spt::PointCloud& pc, const spt::EncodedPointMatrix& pe, Index ns, Index t_steps) {
  std::ostringstream err;
  const Index n = pc.size();
  if (pe.time_steps() != t_steps) return "wrong number of steps";
  for (Index t = 0; t < t_steps; ++t) {
    const IndexVector& s = pe.provenance[static_cast<std::size_t>(t)];
    if (static_cast<Index>(s.size()) != ns || pe.steps[static_cast<std::size_t>(t)].rows() != ns) {
      err << "step " << t << " has " << s.size() << " points, expected " << ns;
      return err.str();
    }
    if (std::set<Index>(s.begin(), s.end()).size() != s.size()) return "duplicate point within a step";
    for (Index j = 0; j < ns; ++j) {
      if (pe.steps[static_cast<std::size_t>(t)].row(j).head<3>() != pc.xyz.row(s[static_cast<std::size_t>(j)]))
        return "step rows disagree with provenance";
    }
  }
  if (pe.provenance[0] != spt::fps(pc.xyz, ns)) return "step 0 is not FPS(P, N_s)";
  if (t_steps == 1) return {};

  const Index np = std::min((n - ns) / (t_steps - 1), ns);
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (Index p : pe.provenance[0]) seen[static_cast<std::size_t>(p)] = true;
  for (Index t = 1; t < t_steps; ++t) {
    const IndexVector& prev = pe.provenance[static_cast<std::size_t>(t - 1)];
    const IndexVector& cur = pe.provenance[static_cast<std::size_t>(t)];
    if (!std::equal(prev.begin() + np, prev.end(), cur.begin())) {
      err << "step " << t << " does not continue the queue of step " << t - 1;
      return err.str();
    }
    std::vector<Index> fresh_pool;
    for (Index p = 0; p < n; ++p)
      if (!seen[static_cast<std::size_t>(p)]) fresh_pool.push_back(p);
    if (np > 0) {
      spt::Points cand(static_cast<Index>(fresh_pool.size()), 3);
      for (std::size_t j = 0; j < fresh_pool.size(); ++j) cand.row(static_cast<Index>(j)) = pc.xyz.row(fresh_pool[j]);
      const IndexVector local = spt::fps(cand, np);
      for (Index j = 0; j < np; ++j) {
        if (cur[static_cast<std::size_t>(ns - np + j)] != fresh_pool[static_cast<std::size_t>(local[static_cast<std::size_t>(j)])]) {
          err << "step " << t << " enqueued points are not FPS over the unseen remainder";
          return err.str();
        }
      }
    }
    std::set<Index> a(prev.begin(), prev.end());
    Index overlap = 0;
    for (Index p : cur) overlap += a.count(p) ? 1 : 0;
    if (overlap != ns - np) {
      err << "step " << t << " overlap " << overlap << ", expected " << ns - np;
      return err.str();
    }
    for (Index p : cur) seen[static_cast<std::size_t>(p)] = true;
  }
  const Index unused = spt::unused_point_count(pe, n);
  const Index expected = n - ns - (t_steps - 1) * np;
  if (unused != expected) {
    err << "unused " << unused << ", expected " << expected;
    return err.str();
  }
  if (np > 0 && (unused < 0 || unused > t_steps - 2)) {
    err << "unused " << unused << " outside [0, T-2]";
    return err.str();
  }
  return {};
}

// Plain scalar iteration of the EIF charge / fire / reset recurrence under a
// constant input, one potential per step (pre-spike H).
inline std::vector<double> eif_recurrence(const spt::NeuronParams& p, double x, int steps) {
  std::vector<double> h_seq;
  double v = p.v_reset;
  for (int t = 0; t < steps; ++t) {
    double h = v + (x - (v - p.v_reset) + p.delta_T * std::exp((v - p.theta_rh) / p.delta_T)) / p.tau;
    h = std::clamp(h, -p.eif_clamp, p.eif_clamp);
    h_seq.push_back(h);
    v = h >= p.v_th ? p.v_reset : h;
  }
  return h_seq;
}

}  // namespace oracle
