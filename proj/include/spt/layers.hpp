#pragma once

// Trainable building blocks shared by the encoder blocks: a linear map with
// optional BatchNorm (folded into the map at inference), and a named spiking
// neuron layer. Both report to the active energy counter.

#include <random>
#include <string>
#include <vector>

#include "spt/neurons.hpp"
#include "spt/tensor.hpp"

namespace spt {

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

enum class InputKind { Spike, Real };

class MlpLayer {
 public:
  MlpLayer() = default;
  MlpLayer(std::string name, Index in, Index out, InputKind input, std::mt19937_64& rng, bool batch_norm = true);

  // x[..., in] -> [..., out]. Training mode normalises with batch statistics
  // and updates the running estimates; inference folds them into the map.
  Tensor forward(const Tensor& x, bool training) const;

  void collect(std::vector<NamedTensor>& out) const;

  const std::string& name() const { return name_; }
  Index in_features() const { return weight.size(0); }
  Index out_features() const { return weight.size(1); }
  bool has_batch_norm() const { return gamma.defined(); }
  InputKind input_kind() const { return input_; }

  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

 private:
  std::string name_;
  InputKind input_ = InputKind::Real;
};

// Multi-step spiking neuron over the leading time axis.
class SpikingNeuron {
 public:
  SpikingNeuron() = default;
  SpikingNeuron(std::string name, NeuronParams params) : name_(std::move(name)), params_(std::move(params)) {}

  Tensor forward(const Tensor& x_seq) const;
  void collect(std::vector<NamedTensor>& out) const;

  const NeuronParams& params() const { return params_; }
  NeuronParams& params() { return params_; }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  NeuronParams params_;
};

}  // namespace spt
