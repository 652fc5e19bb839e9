#pragma once

// Temporal input encodings: every method turns one point cloud into T ordered
// point sets. Q-SDE treats the cloud as a FIFO queue: each step drops the
// first N_p queue positions of the previous step and appends N_p fresh points
// drawn by FPS from the not-yet-sampled remainder.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "spt/geometry.hpp"

namespace spt {

enum class EncodingMethod { Direct, RandomSDE, QSDE };

// "direct", "random_sde", "qsde"
const char* to_string(EncodingMethod method);
EncodingMethod parse_encoding_method(const std::string& name);

struct EncodingConfig {
  EncodingMethod method = EncodingMethod::QSDE;
  Index time_steps = 2;
  Index samples_per_step = 128;  // N_s; ignored by Direct and RandomSDE
};

struct EncodedPointMatrix {
  // provenance[t][slot] = row of the source cloud
  std::vector<IndexVector> provenance;
  // steps[t] holds N_s rows of C0 values (xyz first)
  std::vector<RowMatrix> steps;

  Index time_steps() const { return static_cast<Index>(steps.size()); }
  Index samples_per_step() const { return steps.empty() ? 0 : steps.front().rows(); }
  Index channels() const { return steps.empty() ? 0 : steps.front().cols(); }
};

// floor((N - N_s) / (T - 1)); defined for T > 1 only.
Index dequeue_count(Index n, Index samples_per_step, Index time_steps);

EncodedPointMatrix qsde_encode(const PointCloud& pc, const EncodingConfig& cfg);
EncodedPointMatrix direct_encode(const PointCloud& pc, Index time_steps);
EncodedPointMatrix random_sde_encode(const PointCloud& pc, Index time_steps, std::uint64_t seed);

// Dispatches on cfg.method; the seed only matters for RandomSDE.
EncodedPointMatrix encode(const PointCloud& pc, const EncodingConfig& cfg, std::uint64_t seed = 0);

// Number of points per step the method produces for an N-point input.
Index encoded_points_per_step(const EncodingConfig& cfg, Index n);

// Source rows that appear in no step.
Index unused_point_count(const EncodedPointMatrix& pe, Index n);

// Text form: header "T N_s C0", then T blocks of N_s lines, each line the
// provenance index followed by the C0 values.
void write_encoded(std::ostream& os, const EncodedPointMatrix& pe);

}  // namespace spt
