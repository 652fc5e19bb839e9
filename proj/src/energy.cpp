#include "spt/energy.hpp"

#include <cstdio>

namespace spt::energy {

namespace {

thread_local OpCounter* g_active = nullptr;

std::string format_significant(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, value);
  return buf;
}

}  // namespace

LayerRecord& OpCounter::layer(const std::string& name, OpKind kind) {
  auto it = layer_index_.find(name);
  if (it == layer_index_.end()) {
    it = layer_index_.emplace(name, layers_.size()).first;
    layers_.push_back(LayerRecord{name, kind});
  }
  LayerRecord& rec = layers_[it->second];
  if (rec.kind != kind) throw ContractError("OpCounter: layer '" + name + "' recorded with two op kinds");
  return rec;
}

SpikeRecord& OpCounter::site(const std::string& name) {
  auto it = spike_index_.find(name);
  if (it == spike_index_.end()) {
    it = spike_index_.emplace(name, spikes_.size()).first;
    spikes_.push_back(SpikeRecord{name});
  }
  return spikes_[it->second];
}

void OpCounter::add_ac(const std::string& name, const Tensor& spike_input, Index fan_out) {
  const auto ones = static_cast<std::int64_t>((spike_input.data() != 0.0).count());
  LayerRecord& rec = layer(name, OpKind::AC);
  rec.ops += ones * static_cast<std::int64_t>(fan_out);
  rec.input_ones += ones;
  rec.input_slots += static_cast<std::int64_t>(spike_input.numel());
}

void OpCounter::add_mac(const std::string& name, std::int64_t ops) { layer(name, OpKind::MAC).ops += ops; }

void OpCounter::add_spikes(const std::string& name, const Tensor& spikes) {
  SpikeRecord& rec = site(name);
  rec.ones += static_cast<std::int64_t>((spikes.data() != 0.0).count());
  rec.slots += static_cast<std::int64_t>(spikes.numel());
}

void OpCounter::merge(const OpCounter& other) {
  for (const LayerRecord& r : other.layers_) {
    LayerRecord& mine = layer(r.name, r.kind);
    mine.ops += r.ops;
    mine.input_ones += r.input_ones;
    mine.input_slots += r.input_slots;
  }
  for (const SpikeRecord& r : other.spikes_) {
    SpikeRecord& mine = site(r.name);
    mine.ones += r.ones;
    mine.slots += r.slots;
  }
  preprocessing_ += other.preprocessing_;
}

std::int64_t OpCounter::ac_ops() const {
  std::int64_t total = 0;
  for (const auto& r : layers_) total += r.kind == OpKind::AC ? r.ops : 0;
  return total;
}

std::int64_t OpCounter::mac_ops() const {
  std::int64_t total = 0;
  for (const auto& r : layers_) total += r.kind == OpKind::MAC ? r.ops : 0;
  return total;
}

std::int64_t OpCounter::spike_ones() const {
  std::int64_t total = 0;
  for (const auto& r : spikes_) total += r.ones;
  return total;
}

std::int64_t OpCounter::spike_slots() const {
  std::int64_t total = 0;
  for (const auto& r : spikes_) total += r.slots;
  return total;
}

double OpCounter::firing_rate() const {
  const std::int64_t slots = spike_slots();
  return slots == 0 ? 0.0 : static_cast<double>(spike_ones()) / static_cast<double>(slots);
}

OpCounter* active_counter() { return g_active; }

CountingScope::CountingScope(OpCounter& counter) : previous_(g_active) { g_active = &counter; }
CountingScope::~CountingScope() { g_active = previous_; }

double energy_mj(double ac_ops, double mac_ops) {
  return (kAcPicojoule * 1e-12 * ac_ops + kMacPicojoule * 1e-12 * mac_ops) * 1e3;
}

EnergyReport report(const OpCounter& counter) {
  EnergyReport r;
  r.ac_ops = counter.ac_ops();
  r.mac_ops = counter.mac_ops();
  r.energy_mj = energy_mj(static_cast<double>(r.ac_ops), static_cast<double>(r.mac_ops));
  r.firing_rate = counter.firing_rate();
  r.preprocessing_ops = counter.preprocessing_ops();
  r.layers = counter.layers();
  return r;
}

std::string EnergyReport::ac_gops_display() const { return format_significant(static_cast<double>(ac_ops) / 1e9, 3); }

std::string EnergyReport::mac_gops_display() const {
  return format_significant(static_cast<double>(mac_ops) / 1e9, 3);
}

std::string EnergyReport::energy_display() const {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f", energy_mj);
  return buf;
}

}  // namespace spt::energy
