#pragma once

// Multi-step spiking neurons (IF, LIF, EIF, PLIF) and the HD-IF gated mixture.
//
// Charge equations, with V the retained potential and x the input current:
//   IF    H = V + x
//   LIF   H = V + (x - (V - v_reset)) / tau
//   EIF   H = V + (x - (V - v_reset) + delta_T exp((V - theta_rh) / delta_T)) / tau,
//         clamped to [-eif_clamp, eif_clamp]
//   PLIF  H = V + sigmoid(w) (x - (V - v_reset))
// Fire S = spike(H, v_th); hard reset V' = H (1 - S) + v_reset S.

#include <array>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spt/tensor.hpp"

namespace spt {

enum class NeuronKind { IF, LIF, EIF, PLIF };

const char* to_string(NeuronKind kind);
NeuronKind parse_neuron_kind(const std::string& name);

struct NeuronParams {
  NeuronKind kind = NeuronKind::LIF;
  double v_th = 0.5;
  double v_reset = 0.0;
  double tau = 2.0;
  double delta_T = 0.5;
  double theta_rh = 0.25;
  double eif_clamp = 10.0;
  Tensor w;  // PLIF only: learnable scalar, sigmoid(w) is the inverse time constant

  // Defaults for `kind`; PLIF gets a fresh learnable w = 0.
  static NeuronParams make(NeuronKind kind);
  void validate() const;
};

struct NeuronState {
  Tensor V;

  static NeuronState at_rest(const Shape& shape, const NeuronParams& params);
};

// Pre-spike potential H for one step.
Tensor charge(const NeuronParams& params, const Tensor& v, const Tensor& x);

// Hard reset of H given the emitted spikes.
Tensor reset(const NeuronParams& params, const Tensor& h, const Tensor& spikes);

struct StepOutput {
  Tensor spikes;
  NeuronState state;
};

StepOutput neuron_step(const NeuronParams& params, const NeuronState& state, const Tensor& x,
                       const SurrogateSpec& surrogate = {});

// x_seq[T, ...] -> spikes[T, ...], state starting at rest. Fused: the whole
// unrolling is one tape node with a BPTT backward rule.
Tensor multi_step(const NeuronParams& params, const Tensor& x_seq, const SurrogateSpec& surrogate = {});
// The same unrolling composed from neuron_step; identical forward values.
Tensor multi_step_reference(const NeuronParams& params, const Tensor& x_seq, const SurrogateSpec& surrogate = {});

// ---- HD-IF ----

enum class GateMode { DenseTrain, Top2Infer };

inline constexpr std::size_t kExpertCount = 4;

struct HDIFGate {
  Tensor weight;  // [T*C, 4]
  Tensor bias;    // [4]
  GateMode mode = GateMode::DenseTrain;

  static HDIFGate make(Index time_steps, Index channels, std::mt19937_64& rng);
};

// Expert list in declaration order IF, LIF, EIF, PLIF (PLIF with a fresh w).
std::array<NeuronParams, kExpertCount> default_experts();

// Softmax routing weights [N, 4] from the detached potentials u[T, N, C].
Tensor gate_weights(const HDIFGate& gate, const Tensor& u);

// Keeps the two largest weights per row (ties: declaration order) and
// renormalises them; the result is a constant.
Tensor top2_weights(const Tensor& weights);

// Mixes the experts' pre-spike potentials with per-point weights [N, 4], fires
// the mixture each step and resets every expert with the mixed spikes.
// `mixed_out`, when given, receives the mixed potential of every step.
Tensor hdif_mix(std::span<const NeuronParams> experts, const Tensor& u, const Tensor& weights,
                const SurrogateSpec& surrogate = {}, double v_th = 0.5, std::vector<Tensor>* mixed_out = nullptr);

// u[T, N, C] -> spikes[T, N, C]. Throws ConfigError unless the experts are
// exactly IF, LIF, EIF, PLIF in that order.
Tensor hdif_forward(const HDIFGate& gate, std::span<const NeuronParams> experts, const Tensor& u,
                    const SurrogateSpec& surrogate = {}, double v_th = 0.5);

}  // namespace spt
