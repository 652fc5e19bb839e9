#pragma once

// Operation accounting for spiking inference.
//
// Counting rules (all exact, accumulated over the T axis):
//   * a linear map whose input is a spike tensor S costs nnz(S) * fan_out AC;
//     BatchNorm folded into such a map adds nothing.
//   * an elementwise addition of a spike operand costs nnz(operand) AC
//     (fan_out 1), e.g. Q - K + delta and V + delta in attention.
//   * a linear map with real-valued input costs rows * fan_in * fan_out MAC.
//   * softmax costs 2 MAC per element (exp and normalisation), the attention
//     weighted sum one MAC per weight, the residual add one MAC per element,
//     HD-IF mixing one MAC per active expert per element, the head's temporal
//     mean one MAC per input element.
//   * neuron state updates are not counted; max pooling is comparison only.
//   * FPS / KNN distance evaluations are reported separately as preprocessing
//     and never enter the energy total.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spt/tensor.hpp"

namespace spt::energy {

inline constexpr double kMacPicojoule = 4.6;
inline constexpr double kAcPicojoule = 0.9;

enum class OpKind { AC, MAC };

struct LayerRecord {
  std::string name;
  OpKind kind = OpKind::AC;
  std::int64_t ops = 0;
  // spike statistics of the layer input (AC layers only)
  std::int64_t input_ones = 0;
  std::int64_t input_slots = 0;

  double input_firing_rate() const {
    return input_slots == 0 ? 0.0 : static_cast<double>(input_ones) / static_cast<double>(input_slots);
  }
};

struct SpikeRecord {
  std::string name;
  std::int64_t ones = 0;
  std::int64_t slots = 0;
};

class OpCounter {
 public:
  void add_ac(const std::string& layer, const Tensor& spike_input, Index fan_out);
  void add_mac(const std::string& layer, std::int64_t ops);
  // Firing-rate instrumentation for the output of a spiking neuron.
  void add_spikes(const std::string& site, const Tensor& spikes);
  void add_preprocessing(std::int64_t distance_evaluations) { preprocessing_ += distance_evaluations; }
  void merge(const OpCounter& other);

  const std::vector<LayerRecord>& layers() const { return layers_; }
  const std::vector<SpikeRecord>& spike_sites() const { return spikes_; }
  std::int64_t ac_ops() const;
  std::int64_t mac_ops() const;
  std::int64_t preprocessing_ops() const { return preprocessing_; }
  std::int64_t spike_ones() const;
  std::int64_t spike_slots() const;
  // Slot-weighted share of ones over every recorded neuron output.
  double firing_rate() const;

 private:
  LayerRecord& layer(const std::string& name, OpKind kind);
  SpikeRecord& site(const std::string& name);

  std::vector<LayerRecord> layers_;
  std::map<std::string, std::size_t> layer_index_;
  std::vector<SpikeRecord> spikes_;
  std::map<std::string, std::size_t> spike_index_;
  std::int64_t preprocessing_ = 0;
};

// Counter receiving events on this thread, or nullptr.
OpCounter* active_counter();

class CountingScope {
 public:
  explicit CountingScope(OpCounter& counter);
  ~CountingScope();
  CountingScope(const CountingScope&) = delete;
  CountingScope& operator=(const CountingScope&) = delete;

 private:
  OpCounter* previous_;
};

struct EnergyReport {
  std::int64_t ac_ops = 0;
  std::int64_t mac_ops = 0;
  double energy_mj = 0.0;
  double firing_rate = 0.0;
  std::int64_t preprocessing_ops = 0;
  std::vector<LayerRecord> layers;

  // giga-op totals to 3 significant figures, energy to 1 decimal
  std::string ac_gops_display() const;
  std::string mac_gops_display() const;
  std::string energy_display() const;
};

// (0.9 pJ * AC + 4.6 pJ * MAC) expressed in millijoules.
double energy_mj(double ac_ops, double mac_ops);

EnergyReport report(const OpCounter& counter);

}  // namespace spt::energy
