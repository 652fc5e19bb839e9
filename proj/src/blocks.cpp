#include "spt/blocks.hpp"

#include <cstring>

#include "spt/energy.hpp"
#include "spt/geometry.hpp"

namespace spt {

namespace {

using ConstPointsMap = Eigen::Map<const Points>;

ConstPointsMap block_of(const Tensor& positions, Index row0, Index rows) {
  return ConstPointsMap(positions.data().data() + row0 * 3, rows, 3);
}

bool same_block(const Tensor& positions, Index row_a, Index row_b, Index rows) {
  const double* a = positions.data().data() + row_a * 3;
  const double* b = positions.data().data() + row_b * 3;
  return std::memcmp(a, b, static_cast<std::size_t>(rows * 3) * sizeof(double)) == 0;
}

void note_preprocessing(std::int64_t evaluations) {
  if (auto* counter = energy::active_counter()) counter->add_preprocessing(evaluations);
}

NeuronParams sn_params() { return NeuronParams::make(NeuronKind::LIF); }

}  // namespace

IndexMatrix self_neighbors(const Tensor& positions, Index batch, Index k) {
  const Index steps = positions.size(0);
  const Index n = positions.size(1) / batch;
  IndexMatrix out(steps * batch * n, k);
  for (Index t = 0; t < steps; ++t) {
    for (Index b = 0; b < batch; ++b) {
      const Index row0 = (t * batch + b) * n;
      if (t > 0 && same_block(positions, row0 - batch * n, row0, n)) {
        out.middleRows(row0, n) = out.middleRows(row0 - batch * n, n) + batch * n;
        continue;
      }
      auto pts = block_of(positions, row0, n);
      out.middleRows(row0, n) = knn(pts, pts, k) + row0;
      note_preprocessing(n * n);
    }
  }
  return out;
}

// ---------------------------------------------------------------- input MLP

InputMlp::InputMlp(Index in_channels, Index out_channels, std::mt19937_64& rng)
    : mlp("input_mlp", in_channels, out_channels, InputKind::Real, rng) {}

StageState InputMlp::forward(std::span<const EncodedPointMatrix> batch, bool training) const {
  if (batch.empty()) throw ContractError("input_mlp: empty batch");
  const Index steps = batch[0].time_steps();
  const Index n = batch[0].samples_per_step();
  const Index c0 = batch[0].channels();
  if (c0 != mlp.in_features()) {
    throw DimensionError("input_mlp: encoded points carry " + std::to_string(c0) + " channels, layer expects " +
                         std::to_string(mlp.in_features()));
  }
  const Index bsz = static_cast<Index>(batch.size());
  Eigen::ArrayXd feats(steps * bsz * n * c0);
  Eigen::ArrayXd pos(steps * bsz * n * 3);
  for (Index b = 0; b < bsz; ++b) {
    const EncodedPointMatrix& pe = batch[static_cast<std::size_t>(b)];
    if (pe.time_steps() != steps || pe.samples_per_step() != n || pe.channels() != c0) {
      throw DimensionError("input_mlp: batch members disagree on (T, N_s, C0)");
    }
    for (Index t = 0; t < steps; ++t) {
      const RowMatrix& step = pe.steps[static_cast<std::size_t>(t)];
      const Index row0 = (t * bsz + b) * n;
      Eigen::Map<RowMatrix>(feats.data() + row0 * c0, n, c0) = step;
      Eigen::Map<Points>(pos.data() + row0 * 3, n, 3) = step.leftCols<3>();
    }
  }
  StageState s;
  s.batch = bsz;
  s.positions = Tensor(Shape{steps, bsz * n, 3}, std::move(pos));
  s.potential = mlp.forward(Tensor(Shape{steps, bsz * n, c0}, std::move(feats)), training);
  return s;
}

// ---------------------------------------------------------------- transition down

TransitionDown::TransitionDown(std::string name, Index in_channels, const StageConfig& cfg, std::mt19937_64& rng)
    : config(cfg),
      sn(name + ".sn", sn_params()),
      mlp(name + ".mlp", in_channels + 3, cfg.channels, InputKind::Spike, rng) {}

StageState TransitionDown::forward(const StageState& s, bool training) const {
  const Index steps = s.time_steps();
  const Index bsz = s.batch;
  const Index n_prev = s.points();
  const Index c = s.channels();
  const Index n = config.points;
  const Index k = config.neighbors;
  if (n > n_prev) {
    throw CountError("stdb: cannot downsample " + std::to_string(n_prev) + " points to " + std::to_string(n));
  }
  if (c + 3 != mlp.in_features()) throw DimensionError("stdb: channel count does not match the stage plan");

  Eigen::ArrayXd pos(steps * bsz * n * 3);
  IndexMatrix idx(steps * bsz * n, k);
  for (Index t = 0; t < steps; ++t) {
    for (Index b = 0; b < bsz; ++b) {
      const Index prev0 = (t * bsz + b) * n_prev;
      const Index row0 = (t * bsz + b) * n;
      Eigen::Map<Points> picked(pos.data() + row0 * 3, n, 3);
      if (t > 0 && same_block(s.positions, prev0 - bsz * n_prev, prev0, n_prev)) {
        picked = Eigen::Map<const Points>(pos.data() + (row0 - bsz * n) * 3, n, 3);
        idx.middleRows(row0, n) = idx.middleRows(row0 - bsz * n, n) + bsz * n_prev;
        continue;
      }
      auto prev = block_of(s.positions, prev0, n_prev);
      const IndexVector sel = fps(prev, n);
      for (Index j = 0; j < n; ++j) picked.row(j) = prev.row(sel[static_cast<std::size_t>(j)]);
      idx.middleRows(row0, n) = knn(picked, prev, k) + prev0;
      note_preprocessing(n * n_prev + n * n_prev);
    }
  }

  StageState next;
  next.batch = bsz;
  next.positions = Tensor(Shape{steps, bsz * n, 3}, std::move(pos));

  const Index rows = steps * bsz * n;
  Tensor neighbor_xyz = gather(reshape(s.positions, Shape{steps * bsz * n_prev, 3}), idx);
  Tensor center = expand(reshape(next.positions, Shape{rows, 1, 3}), Shape{rows, k, 3});
  Tensor feats = gather(reshape(s.potential, Shape{steps * bsz * n_prev, c}), idx);
  const std::array<Tensor, 2> parts{neighbor_xyz - center, feats};
  Tensor grouped = reshape(concat(parts, 2), Shape{steps, bsz * n * k, c + 3});

  Tensor lifted = mlp.forward(sn.forward(grouped), training);
  next.potential = local_max_pool(reshape(lifted, Shape{steps, bsz * n, k, config.channels}));
  return next;
}

// ---------------------------------------------------------------- transformer block

PointTransformerBlock::PointTransformerBlock(std::string block_name, Index time_steps, const StageConfig& cfg,
                                             const SpikeSourceConfig& src, std::mt19937_64& rng)
    : name(std::move(block_name)), config(cfg), source(src) {
  const Index c = cfg.channels;
  if (source.hybrid) {
    gate = HDIFGate::make(time_steps, c, rng);
    experts = default_experts();
  } else {
    single = SpikingNeuron(name + ".source", NeuronParams::make(source.single));
  }
  pre = MlpLayer(name + ".pre", c, c, InputKind::Spike, rng);
  key = MlpLayer(name + ".key", c, c, InputKind::Spike, rng);
  query = MlpLayer(name + ".query", c, c, InputKind::Spike, rng);
  value = MlpLayer(name + ".value", c, c, InputKind::Spike, rng);
  position = MlpLayer(name + ".position", 3, c, InputKind::Real, rng);
  gamma_in = MlpLayer(name + ".gamma_in", c, c, InputKind::Spike, rng);
  gamma_out = MlpLayer(name + ".gamma_out", c, c, InputKind::Spike, rng);
  out = MlpLayer(name + ".out", c, c, InputKind::Spike, rng);
  sn_pre = SpikingNeuron(name + ".sn_pre", sn_params());
  sn_key = SpikingNeuron(name + ".sn_key", sn_params());
  sn_query = SpikingNeuron(name + ".sn_query", sn_params());
  sn_value = SpikingNeuron(name + ".sn_value", sn_params());
  sn_position = SpikingNeuron(name + ".sn_position", sn_params());
  sn_gamma_in = SpikingNeuron(name + ".sn_gamma_in", sn_params());
  sn_gamma_mid = SpikingNeuron(name + ".sn_gamma_mid", sn_params());
  sn_out = SpikingNeuron(name + ".sn_out", sn_params());
}

StageState PointTransformerBlock::forward(const StageState& s, bool training, AttentionTrace* trace) const {
  const Index steps = s.time_steps();
  const Index bsz = s.batch;
  const Index n = s.points();
  const Index c = s.channels();
  const Index k = config.neighbors;
  const Index rows = steps * bsz * n;
  if (c != config.channels) throw DimensionError(name + ": channel count does not match the stage plan");
  if (k > n) throw CountError(name + ": neighbourhood of " + std::to_string(k) + " exceeds " + std::to_string(n) + " points");
  auto* counter = energy::active_counter();

  // S_l' from the membrane potential U_l'
  Tensor s1;
  if (source.hybrid) {
    Tensor g = gate_weights(gate, s.potential);
    if (!training) g = top2_weights(g);
    s1 = hdif_mix(experts, s.potential, g);
    if (counter) {
      counter->add_mac(name + ".hdif.gate", (bsz * n) * (steps * c) * static_cast<Index>(kExpertCount));
      counter->add_mac(name + ".hdif.gate_softmax", 2 * bsz * n * static_cast<Index>(kExpertCount));
      counter->add_mac(name + ".hdif.mix", static_cast<std::int64_t>((g.data() != 0.0).count()) * steps * c);
      counter->add_spikes(name + ".hdif", s1);
    }
  } else {
    s1 = single.forward(s.potential);
  }

  Tensor s2 = sn_pre.forward(pre.forward(s1, training));
  Tensor k_spikes = sn_key.forward(key.forward(s2, training));

  const IndexMatrix idx = self_neighbors(s.positions, bsz, k);
  Tensor grouped = reshape(gather(reshape(s2, Shape{rows, c}), idx), Shape{steps, bsz * n * k, c});
  Tensor q = sn_query.forward(query.forward(grouped, training));
  Tensor v = sn_value.forward(value.forward(grouped, training));

  Tensor neighbor_xyz = gather(reshape(s.positions, Shape{rows, 3}), idx);
  Tensor center = expand(reshape(s.positions, Shape{rows, 1, 3}), Shape{rows, k, 3});
  Tensor rel = reshape(neighbor_xyz - center, Shape{steps, bsz * n * k, 3});
  Tensor delta = sn_position.forward(position.forward(rel, training));

  Tensor k_grouped =
      reshape(expand(reshape(k_spikes, Shape{rows, 1, c}), Shape{rows, k, c}), Shape{steps, bsz * n * k, c});
  Tensor relation = q - k_grouped + delta;
  if (counter) {
    counter->add_ac(name + ".relation", q, 1);
    counter->add_ac(name + ".relation_key", k_grouped, 1);
    counter->add_ac(name + ".relation_position", delta, 1);
    counter->add_ac(name + ".value_position", v, 1);
    counter->add_ac(name + ".value_position_delta", delta, 1);
  }
  Tensor logits = gamma_out.forward(sn_gamma_mid.forward(gamma_in.forward(sn_gamma_in.forward(relation), training)),
                                    training);
  Tensor rho = softmax(reshape(logits, Shape{rows, k, c}), 1);
  Tensor carried = reshape(v + delta, Shape{rows, k, c});
  Tensor aggregated = reshape(sum_axis(rho * carried, 1), Shape{steps, bsz * n, c});
  if (counter) {
    counter->add_mac(name + ".softmax", 2 * rho.numel());
    counter->add_mac(name + ".aggregate", rho.numel());
    counter->add_mac(name + ".residual", s.potential.numel());
  }

  StageState next;
  next.batch = bsz;
  next.positions = s.positions;
  next.potential = out.forward(sn_out.forward(aggregated), training) + s.potential;

  if (trace) {
    *trace = AttentionTrace{s1, s2, q, k_spikes, v, delta, rho, aggregated};
  }
  return next;
}

void PointTransformerBlock::collect(std::vector<NamedTensor>& out_params) const {
  if (source.hybrid) {
    out_params.push_back({name + ".gate.weight", gate.weight, true});
    out_params.push_back({name + ".gate.bias", gate.bias, true});
    out_params.push_back({name + ".plif.w", experts[3].w, true});
  } else {
    single.collect(out_params);
  }
  for (const MlpLayer* layer : {&pre, &key, &query, &value, &position, &gamma_in, &gamma_out, &out}) {
    layer->collect(out_params);
  }
}

void PointTransformerBlock::retarget_time_steps(Index time_steps) {
  if (!source.hybrid) return;
  const Index c = config.channels;
  const Index old_steps = gate.weight.size(0) / c;
  if (old_steps == time_steps) return;
  const Index e = static_cast<Index>(kExpertCount);
  Eigen::Map<const RowMatrix> w(gate.weight.data().data(), old_steps * c, e);
  RowMatrix mean_block = RowMatrix::Zero(c, e);
  for (Index t = 0; t < old_steps; ++t) mean_block += w.middleRows(t * c, c);
  mean_block /= static_cast<double>(old_steps);
  mean_block *= static_cast<double>(old_steps) / static_cast<double>(time_steps);
  RowMatrix next(time_steps * c, e);
  for (Index t = 0; t < time_steps; ++t) next.middleRows(t * c, c) = mean_block;
  gate.weight = Tensor::parameter(Shape{time_steps * c, e}, Eigen::Map<const Eigen::ArrayXd>(next.data(), next.size()));
}

// ---------------------------------------------------------------- head

ClassificationHead::ClassificationHead(Index channels, Index num_classes, std::mt19937_64& rng)
    : fc("head.fc", channels, num_classes, InputKind::Real, rng, /*batch_norm=*/false) {}

Tensor ClassificationHead::forward(const StageState& s, bool training) const {
  const Index n = s.points();
  const Index c = s.channels();
  Tensor pooled_t = mean_axis(s.potential, 0);
  if (auto* counter = energy::active_counter()) counter->add_mac("head.temporal_mean", s.potential.numel());
  Tensor per_instance = max_axis(reshape(pooled_t, Shape{s.batch, n, c}), 1);
  return fc.forward(per_instance, training);
}

}  // namespace spt
