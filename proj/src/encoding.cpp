#include "spt/encoding.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <random>
#include <unordered_set>

namespace spt {

namespace {

RowMatrix rows_of(const PointCloud& pc, const IndexVector& idx) {
  RowMatrix out(static_cast<Index>(idx.size()), pc.channels());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const Index i = idx[j];
    out.row(static_cast<Index>(j)).head<3>() = pc.xyz.row(i);
    if (pc.features.cols() > 0) out.row(static_cast<Index>(j)).tail(pc.features.cols()) = pc.features.row(i);
  }
  return out;
}

EncodedPointMatrix assemble(const PointCloud& pc, std::vector<IndexVector> provenance) {
  EncodedPointMatrix pe;
  pe.steps.reserve(provenance.size());
  for (const auto& idx : provenance) pe.steps.push_back(rows_of(pc, idx));
  pe.provenance = std::move(provenance);
  return pe;
}

}  // namespace

const char* to_string(EncodingMethod method) {
  switch (method) {
    case EncodingMethod::Direct:
      return "direct";
    case EncodingMethod::RandomSDE:
      return "random_sde";
    case EncodingMethod::QSDE:
      return "qsde";
  }
  return "?";
}

EncodingMethod parse_encoding_method(const std::string& name) {
  if (name == "direct") return EncodingMethod::Direct;
  if (name == "random_sde") return EncodingMethod::RandomSDE;
  if (name == "qsde") return EncodingMethod::QSDE;
  throw ConfigError("unknown encoding method '" + name + "' (expected direct, random_sde or qsde)");
}

Index dequeue_count(Index n, Index samples_per_step, Index time_steps) {
  if (time_steps <= 1) throw ContractError("dequeue_count: defined only for T > 1, got T = " + std::to_string(time_steps));
  if (samples_per_step < 1 || samples_per_step > n) {
    throw CountError("dequeue_count: N_s = " + std::to_string(samples_per_step) + " must lie in [1, N = " +
                     std::to_string(n) + "]");
  }
  return (n - samples_per_step) / (time_steps - 1);
}

EncodedPointMatrix qsde_encode(const PointCloud& pc, const EncodingConfig& cfg) {
  if (cfg.method != EncodingMethod::QSDE) throw ContractError("qsde_encode: config method is not QSDE");
  const Index n = pc.size();
  const Index ns = cfg.samples_per_step;
  const Index t_steps = cfg.time_steps;
  if (t_steps < 1) throw CountError("qsde_encode: T must be at least 1");
  if (ns < 1 || ns > n) {
    throw CountError("qsde_encode: N_s = " + std::to_string(ns) + " exceeds N = " + std::to_string(n) +
                     " (need 1 <= N_s <= N)");
  }

  std::vector<IndexVector> steps;
  steps.push_back(fps(pc.xyz, ns));
  if (t_steps == 1) return assemble(pc, std::move(steps));

  // The dequeue count can exceed the queue length when N > T * N_s; the queue then turns
  // over completely each step.
  const Index np = std::min(dequeue_count(n, ns, t_steps), ns);
  std::vector<bool> queued(static_cast<std::size_t>(n), true);  // membership of P

  for (Index i = 1; i < t_steps; ++i) {
    const IndexVector& prev = steps.back();
    std::vector<bool> in_prev(static_cast<std::size_t>(n), false);
    for (Index p : prev) in_prev[static_cast<std::size_t>(p)] = true;

    IndexVector remainder;
    for (Index p = 0; p < n; ++p) {
      if (queued[static_cast<std::size_t>(p)] && !in_prev[static_cast<std::size_t>(p)]) remainder.push_back(p);
    }
    if (remainder.empty() || np == 0) {
      steps.push_back(prev);
      continue;
    }

    IndexVector next(prev.begin() + np, prev.end());
    Points candidates(static_cast<Index>(remainder.size()), 3);
    for (std::size_t j = 0; j < remainder.size(); ++j) candidates.row(static_cast<Index>(j)) = pc.xyz.row(remainder[j]);
    for (Index local : fps(candidates, np)) next.push_back(remainder[static_cast<std::size_t>(local)]);

    for (Index j = 0; j < np; ++j) queued[static_cast<std::size_t>(prev[static_cast<std::size_t>(j)])] = false;
    steps.push_back(std::move(next));
  }
  return assemble(pc, std::move(steps));
}

EncodedPointMatrix direct_encode(const PointCloud& pc, Index time_steps) {
  if (time_steps < 1) throw CountError("direct_encode: T must be at least 1");
  IndexVector all(static_cast<std::size_t>(pc.size()));
  std::iota(all.begin(), all.end(), Index{0});
  return assemble(pc, std::vector<IndexVector>(static_cast<std::size_t>(time_steps), all));
}

EncodedPointMatrix random_sde_encode(const PointCloud& pc, Index time_steps, std::uint64_t seed) {
  if (time_steps < 1) throw CountError("random_sde_encode: T must be at least 1");
  const Index n = pc.size();
  const Index per_step = n / time_steps;
  if (per_step < 1) throw CountError("random_sde_encode: fewer points than time steps");
  std::mt19937_64 rng(seed);
  std::vector<IndexVector> steps;
  IndexVector pool(static_cast<std::size_t>(n));
  for (Index t = 0; t < time_steps; ++t) {
    std::iota(pool.begin(), pool.end(), Index{0});
    // partial Fisher-Yates: the first per_step entries form the sample
    for (Index j = 0; j < per_step; ++j) {
      std::uniform_int_distribution<Index> pick(j, n - 1);
      std::swap(pool[static_cast<std::size_t>(j)], pool[static_cast<std::size_t>(pick(rng))]);
    }
    steps.emplace_back(pool.begin(), pool.begin() + per_step);
  }
  return assemble(pc, std::move(steps));
}

EncodedPointMatrix encode(const PointCloud& pc, const EncodingConfig& cfg, std::uint64_t seed) {
  switch (cfg.method) {
    case EncodingMethod::Direct:
      return direct_encode(pc, cfg.time_steps);
    case EncodingMethod::RandomSDE:
      return random_sde_encode(pc, cfg.time_steps, seed);
    case EncodingMethod::QSDE:
      return qsde_encode(pc, cfg);
  }
  throw ConfigError("encode: unknown method");
}

Index encoded_points_per_step(const EncodingConfig& cfg, Index n) {
  switch (cfg.method) {
    case EncodingMethod::Direct:
      return n;
    case EncodingMethod::RandomSDE:
      return n / cfg.time_steps;
    case EncodingMethod::QSDE:
      return cfg.samples_per_step;
  }
  return 0;
}

Index unused_point_count(const EncodedPointMatrix& pe, Index n) {
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (const auto& step : pe.provenance) {
    for (Index p : step) seen[static_cast<std::size_t>(p)] = true;
  }
  return static_cast<Index>(std::count(seen.begin(), seen.end(), false));
}

void write_encoded(std::ostream& os, const EncodedPointMatrix& pe) {
  os << pe.time_steps() << ' ' << pe.samples_per_step() << ' ' << pe.channels() << '\n';
  os << std::setprecision(17);
  for (Index t = 0; t < pe.time_steps(); ++t) {
    const RowMatrix& step = pe.steps[static_cast<std::size_t>(t)];
    for (Index j = 0; j < step.rows(); ++j) {
      os << pe.provenance[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
      for (Index c = 0; c < step.cols(); ++c) os << ' ' << step(j, c);
      os << '\n';
    }
  }
}

}  // namespace spt
