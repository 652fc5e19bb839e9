#pragma once

// Encoder blocks. A stage holds T time steps of a batch of B instances; rows
// are laid out as [T, B * N_l, ...] with instance b occupying rows
// [b * N_l, (b + 1) * N_l). Neighbourhoods never cross instances or steps.

#include <optional>
#include <random>
#include <span>
#include <vector>

#include "spt/encoding.hpp"
#include "spt/layers.hpp"
#include "spt/neurons.hpp"

namespace spt {

struct StageConfig {
  Index points = 128;   // N_l
  Index channels = 32;  // C_l
  Index neighbors = 16; // N_k
  Index downsample_ratio = 4;
};

struct StageState {
  Tensor positions;  // [T, B * N_l, 3], no gradient
  Tensor potential;  // [T, B * N_l, C_l]
  Index batch = 1;

  Index time_steps() const { return potential.size(0); }
  Index points() const { return potential.size(1) / batch; }
  Index channels() const { return potential.size(2); }
};

// Global row ids of each point's k nearest neighbours (itself included) for
// positions[T, B * N, 3], flattened over (t, b): [T * B * N, k].
IndexMatrix self_neighbors(const Tensor& positions, Index batch, Index k);

// Stage-0 embedding: per-point linear + BN from C0 input channels.
class InputMlp {
 public:
  InputMlp() = default;
  InputMlp(Index in_channels, Index out_channels, std::mt19937_64& rng);

  // Encoded matrices share T, N_s and C0.
  StageState forward(std::span<const EncodedPointMatrix> batch, bool training) const;
  void collect(std::vector<NamedTensor>& out) const { mlp.collect(out); }

  MlpLayer mlp;
};

// FPS downsampling, KNN grouping of [relative xyz, U], SN, MLP, local max pool.
class TransitionDown {
 public:
  TransitionDown() = default;
  TransitionDown(std::string name, Index in_channels, const StageConfig& cfg, std::mt19937_64& rng);

  StageState forward(const StageState& s, bool training) const;
  void collect(std::vector<NamedTensor>& out) const { mlp.collect(out); }

  StageConfig config;
  SpikingNeuron sn;
  MlpLayer mlp;
};

// Spiking source in front of each transformer block: HD-IF or a single kind.
struct SpikeSourceConfig {
  bool hybrid = true;
  NeuronKind single = NeuronKind::LIF;
};

// Intermediates of one transformer-block pass, for inspection in tests.
struct AttentionTrace {
  Tensor input_spikes;   // S_l'
  Tensor hidden_spikes;  // S_l''
  Tensor query;
  Tensor key;
  Tensor value;
  Tensor position;       // delta
  Tensor weights;        // rho, [T * B * N, k, C]
  Tensor aggregated;     // U_l''
};

class PointTransformerBlock {
 public:
  PointTransformerBlock() = default;
  PointTransformerBlock(std::string name, Index time_steps, const StageConfig& cfg, const SpikeSourceConfig& source,
                        std::mt19937_64& rng);

  StageState forward(const StageState& s, bool training, AttentionTrace* trace = nullptr) const;
  void collect(std::vector<NamedTensor>& out) const;

  // Rebuilds the gate for a different number of time steps: the per-step
  // weight blocks are averaged and repeated, scaled by T / T' so that a
  // time-constant input keeps its routing logits.
  void retarget_time_steps(Index time_steps);

  std::string name;
  StageConfig config;
  SpikeSourceConfig source;
  HDIFGate gate;
  std::array<NeuronParams, kExpertCount> experts;
  SpikingNeuron single;
  MlpLayer pre, key, query, value, position, gamma_in, gamma_out, out;
  SpikingNeuron sn_pre, sn_key, sn_query, sn_value, sn_position, sn_gamma_in, sn_gamma_mid, sn_out;
};

// Mean over T, max over points, linear map to class logits [B, K].
class ClassificationHead {
 public:
  ClassificationHead() = default;
  ClassificationHead(Index channels, Index num_classes, std::mt19937_64& rng);

  Tensor forward(const StageState& s, bool training) const;
  void collect(std::vector<NamedTensor>& out) const { fc.collect(out); }

  MlpLayer fc;
};

}  // namespace spt
