#include "spt/neurons.hpp"

#include <algorithm>
#include <cmath>

namespace spt {

const char* to_string(NeuronKind kind) {
  switch (kind) {
    case NeuronKind::IF:
      return "if";
    case NeuronKind::LIF:
      return "lif";
    case NeuronKind::EIF:
      return "eif";
    case NeuronKind::PLIF:
      return "plif";
  }
  return "?";
}

NeuronKind parse_neuron_kind(const std::string& name) {
  if (name == "if") return NeuronKind::IF;
  if (name == "lif") return NeuronKind::LIF;
  if (name == "eif") return NeuronKind::EIF;
  if (name == "plif") return NeuronKind::PLIF;
  throw ConfigError("unknown neuron kind '" + name + "' (expected if, lif, eif or plif)");
}

NeuronParams NeuronParams::make(NeuronKind kind) {
  NeuronParams p;
  p.kind = kind;
  if (kind == NeuronKind::PLIF) p.w = Tensor::parameter(Shape{}, Eigen::ArrayXd::Zero(1));
  return p;
}

void NeuronParams::validate() const {
  if (!(v_th > v_reset)) throw ConfigError("neuron: v_th must exceed v_reset");
  if (!(tau >= 1.0)) throw ConfigError("neuron: tau must be at least 1");
  if (!(delta_T > 0.0)) throw ConfigError("neuron: delta_T must be positive");
  if (kind == NeuronKind::PLIF && (!w.defined() || w.numel() != 1)) {
    throw ConfigError("neuron: PLIF needs a scalar parameter w");
  }
}

NeuronState NeuronState::at_rest(const Shape& shape, const NeuronParams& params) {
  return NeuronState{Tensor(shape, params.v_reset)};
}

Tensor charge(const NeuronParams& p, const Tensor& v, const Tensor& x) {
  if (v.shape() != x.shape()) {
    throw DimensionError("neuron: state " + to_string(v.shape()) + " and input " + to_string(x.shape()) + " differ");
  }
  switch (p.kind) {
    case NeuronKind::IF:
      return v + x;
    case NeuronKind::LIF:
      return v + scale(x - add_scalar(v, -p.v_reset), 1.0 / p.tau);
    case NeuronKind::EIF: {
      Tensor boost = scale(exp(scale(add_scalar(v, -p.theta_rh), 1.0 / p.delta_T)), p.delta_T);
      Tensor h = v + scale(x - add_scalar(v, -p.v_reset) + boost, 1.0 / p.tau);
      return clamp(h, -p.eif_clamp, p.eif_clamp);
    }
    case NeuronKind::PLIF:
      return v + mul(x - add_scalar(v, -p.v_reset), sigmoid(p.w));
  }
  throw ConfigError("neuron: unknown kind");
}

Tensor reset(const NeuronParams& p, const Tensor& h, const Tensor& spikes) {
  Tensor kept = h * add_scalar(neg(spikes), 1.0);
  return p.v_reset == 0.0 ? kept : kept + scale(spikes, p.v_reset);
}

StepOutput neuron_step(const NeuronParams& params, const NeuronState& state, const Tensor& x,
                       const SurrogateSpec& surrogate) {
  Tensor h = charge(params, state.V, x);
  Tensor s = spike(h, params.v_th, surrogate);
  return StepOutput{s, NeuronState{reset(params, h, s)}};
}

Tensor multi_step_reference(const NeuronParams& params, const Tensor& x_seq, const SurrogateSpec& surrogate) {
  if (x_seq.rank() < 1) throw DimensionError("multi_step: input needs a leading time axis");
  params.validate();
  const Index steps = x_seq.size(0);
  Shape frame(x_seq.shape().begin() + 1, x_seq.shape().end());
  NeuronState state = NeuronState::at_rest(frame, params);
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(steps));
  for (Index t = 0; t < steps; ++t) {
    StepOutput step = neuron_step(params, state, select(x_seq, 0, t), surrogate);
    out.push_back(step.spikes);
    state = std::move(step.state);
  }
  return stack(out, 0);
}

namespace {

// Per-step records kept for the backward pass of the fused unrolling.
struct Unrolled {
  Eigen::ArrayXd h;        // post-clamp charge, [T * F]
  Eigen::ArrayXd v_prev;   // state entering each step
  Eigen::ArrayXd inside;   // EIF: 1 where the clamp was inactive
};

}  // namespace

// Same arithmetic as neuron_step, one element at a time, recorded as a single
// tape node whose backward rule runs BPTT over the unrolled steps.
Tensor multi_step(const NeuronParams& p, const Tensor& x_seq, const SurrogateSpec& surrogate) {
  if (x_seq.rank() < 1) throw DimensionError("multi_step: input needs a leading time axis");
  p.validate();
  const Index steps = x_seq.size(0);
  const Index frame = x_seq.numel() / steps;
  const bool smooth = spike_forward_mode() == SpikeForward::Smooth;
  const double inv_tau = 1.0 / p.tau;
  const double inv_dt = 1.0 / p.delta_T;
  const double sg = p.kind == NeuronKind::PLIF ? 1.0 / (1.0 + std::exp(-p.w.data()[0])) : 0.0;
  const auto& x = x_seq.data();

  auto rec = std::make_shared<Unrolled>();
  rec->h.resize(x.size());
  rec->v_prev.resize(x.size());
  if (p.kind == NeuronKind::EIF) rec->inside.resize(x.size());
  Eigen::ArrayXd out(x.size());
  Eigen::ArrayXd v = Eigen::ArrayXd::Constant(frame, p.v_reset);
  for (Index t = 0; t < steps; ++t) {
    for (Index i = 0; i < frame; ++i) {
      const Index j = t * frame + i;
      const double vi = v[i];
      const double drive = x[j] - (vi + (-p.v_reset));
      double h = 0.0;
      switch (p.kind) {
        case NeuronKind::IF:
          h = vi + x[j];
          break;
        case NeuronKind::LIF:
          h = vi + drive * inv_tau;
          break;
        case NeuronKind::EIF: {
          const double boost = std::exp((vi + (-p.theta_rh)) * inv_dt) * p.delta_T;
          const double raw = vi + (drive + boost) * inv_tau;
          rec->inside[j] = raw >= -p.eif_clamp && raw <= p.eif_clamp ? 1.0 : 0.0;
          h = std::min(std::max(raw, -p.eif_clamp), p.eif_clamp);
          break;
        }
        case NeuronKind::PLIF:
          h = vi + drive * sg;
          break;
      }
      const double s = smooth ? surrogate.primitive(h - p.v_th) : (h - p.v_th >= 0.0 ? 1.0 : 0.0);
      rec->h[j] = h;
      rec->v_prev[j] = vi;
      out[j] = s;
      const double kept = h * (-s + 1.0);
      v[i] = p.v_reset == 0.0 ? kept : kept + s * p.v_reset;
    }
  }
  if (!rec->h.allFinite()) throw ContractError("multi_step: produced a non-finite potential");

  auto node = std::make_shared<detail::Node>();
  node->shape = x_seq.shape();
  node->value = std::move(out);
  node->op = "multi_step";
  const bool learn_w = p.kind == NeuronKind::PLIF && p.w.requires_grad();
  if (grad_enabled() && (x_seq.requires_grad() || learn_w)) {
    node->requires_grad = true;
    node->parents = {x_seq.node()};
    if (p.kind == NeuronKind::PLIF) node->parents.push_back(p.w.node());
    const NeuronParams params = p;
    node->backward = [rec, params, surrogate, steps, frame, inv_tau, inv_dt, sg](detail::Node& self) {
      const auto& s = self.value;
      const auto& xv = self.parents[0]->value;
      Eigen::ArrayXd gx(s.size());
      Eigen::ArrayXd gv = Eigen::ArrayXd::Zero(frame);  // dL/dV leaving the current step
      double gw = 0.0;
      for (Index t = steps - 1; t >= 0; --t) {
        for (Index i = 0; i < frame; ++i) {
          const Index j = t * frame + i;
          const double h = rec->h[j];
          const double ds = surrogate.derivative(h - params.v_th);
          // V' = H (1 - S) + v_reset S with S = spike(H)
          double gh = self.grad[j] * ds + gv[i] * ((1.0 - s[j]) + (params.v_reset - h) * ds);
          double dh_dv = 1.0;
          switch (params.kind) {
            case NeuronKind::IF:
              gx[j] = gh;
              break;
            case NeuronKind::LIF:
              gx[j] = gh * inv_tau;
              dh_dv = 1.0 - inv_tau;
              break;
            case NeuronKind::EIF:
              gh *= rec->inside[j];
              gx[j] = gh * inv_tau;
              dh_dv = 1.0 + (std::exp((rec->v_prev[j] - params.theta_rh) * inv_dt) - 1.0) * inv_tau;
              break;
            case NeuronKind::PLIF:
              gx[j] = gh * sg;
              dh_dv = 1.0 - sg;
              gw += gh * (xv[j] - (rec->v_prev[j] - params.v_reset));
              break;
          }
          gv[i] = gh * dh_dv;
        }
      }
      self.parents[0]->accumulate(std::move(gx));
      if (params.kind == NeuronKind::PLIF) {
        self.parents[1]->accumulate(Eigen::ArrayXd::Constant(1, gw * sg * (1.0 - sg)));
      }
    };
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------- HD-IF

HDIFGate HDIFGate::make(Index time_steps, Index channels, std::mt19937_64& rng) {
  const Index in = time_steps * channels;
  std::normal_distribution<double> dist(0.0, 0.01);
  Eigen::ArrayXd w(in * static_cast<Index>(kExpertCount));
  for (auto& v : w) v = dist(rng);
  HDIFGate gate;
  gate.weight = Tensor::parameter(Shape{in, static_cast<Index>(kExpertCount)}, std::move(w));
  gate.bias = Tensor::parameter(Shape{static_cast<Index>(kExpertCount)}, Eigen::ArrayXd::Zero(kExpertCount));
  return gate;
}

std::array<NeuronParams, kExpertCount> default_experts() {
  return {NeuronParams::make(NeuronKind::IF), NeuronParams::make(NeuronKind::LIF),
          NeuronParams::make(NeuronKind::EIF), NeuronParams::make(NeuronKind::PLIF)};
}

Tensor gate_weights(const HDIFGate& gate, const Tensor& u) {
  if (u.rank() != 3) throw DimensionError("hdif: expected u[T, N, C], got " + to_string(u.shape()));
  const Index t = u.size(0);
  const Index n = u.size(1);
  const Index c = u.size(2);
  if (gate.weight.size(0) != t * c) {
    throw DimensionError("hdif: gate expects " + std::to_string(gate.weight.size(0)) + " inputs per point, got T*C = " +
                         std::to_string(t * c));
  }
  const std::array<Index, 3> order{1, 0, 2};
  Tensor flat = reshape(permute(u.detach(), order), Shape{n, t * c});
  return softmax(linear(flat, gate.weight, gate.bias), 1);
}

Tensor top2_weights(const Tensor& weights) {
  const Index n = weights.size(0);
  const Index k = weights.size(1);
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(n * k);
  for (Index i = 0; i < n; ++i) {
    Index first = 0;
    for (Index j = 1; j < k; ++j) {
      if (weights.data()[i * k + j] > weights.data()[i * k + first]) first = j;
    }
    Index second = first == 0 ? 1 : 0;
    for (Index j = 0; j < k; ++j) {
      if (j != first && weights.data()[i * k + j] > weights.data()[i * k + second]) second = j;
    }
    const double a = weights.data()[i * k + first];
    const double b = weights.data()[i * k + second];
    out[i * k + first] = a / (a + b);
    out[i * k + second] = b / (a + b);
  }
  return Tensor(Shape{n, k}, std::move(out));
}

Tensor hdif_mix(std::span<const NeuronParams> experts, const Tensor& u, const Tensor& weights,
                const SurrogateSpec& surrogate, double v_th, std::vector<Tensor>* mixed_out) {
  if (u.rank() != 3) throw DimensionError("hdif: expected u[T, N, C], got " + to_string(u.shape()));
  const Index steps = u.size(0);
  const Index n = u.size(1);
  const Index c = u.size(2);
  const Index k = static_cast<Index>(experts.size());
  if (weights.shape() != Shape{n, k}) {
    throw DimensionError("hdif: weights " + to_string(weights.shape()) + " do not match " + std::to_string(n) +
                         " points x " + std::to_string(k) + " experts");
  }

  // Experts whose weight is zero everywhere contribute nothing to the mixture.
  std::vector<Index> active;
  std::vector<Tensor> scale_k;
  for (Index e = 0; e < k; ++e) {
    const bool used = weights.requires_grad() || (Eigen::Map<const Eigen::ArrayXd, 0, Eigen::InnerStride<>>(
                                                      weights.data().data() + e, n, Eigen::InnerStride<>(k)) != 0.0)
                                                     .any();
    if (!used) continue;
    active.push_back(e);
    scale_k.push_back(expand(reshape(select(weights, 1, e), Shape{n, 1}), Shape{n, c}));
  }

  std::vector<NeuronState> states;
  for (const NeuronParams& p : experts) {
    p.validate();
    states.push_back(NeuronState::at_rest(Shape{n, c}, p));
  }
  std::vector<Tensor> out;
  for (Index t = 0; t < steps; ++t) {
    Tensor x = select(u, 0, t);
    std::vector<Tensor> h;
    for (Index e = 0; e < k; ++e) h.push_back(charge(experts[static_cast<std::size_t>(e)], states[e].V, x));
    Tensor mixed;
    for (std::size_t a = 0; a < active.size(); ++a) {
      Tensor term = h[static_cast<std::size_t>(active[a])] * scale_k[a];
      mixed = mixed.defined() ? mixed + term : term;
    }
    if (!mixed.defined()) mixed = Tensor(Shape{n, c});
    if (mixed_out) mixed_out->push_back(mixed);
    Tensor s = spike(mixed, v_th, surrogate);
    for (Index e = 0; e < k; ++e) states[e].V = reset(experts[static_cast<std::size_t>(e)], h[e], s);
    out.push_back(s);
  }
  return stack(out, 0);
}

Tensor hdif_forward(const HDIFGate& gate, std::span<const NeuronParams> experts, const Tensor& u,
                    const SurrogateSpec& surrogate, double v_th) {
  static constexpr std::array<NeuronKind, kExpertCount> kOrder{NeuronKind::IF, NeuronKind::LIF, NeuronKind::EIF,
                                                               NeuronKind::PLIF};
  if (experts.size() != kExpertCount ||
      !std::equal(experts.begin(), experts.end(), kOrder.begin(),
                  [](const NeuronParams& p, NeuronKind k) { return p.kind == k; })) {
    throw ConfigError("hdif: experts must be exactly IF, LIF, EIF, PLIF");
  }
  Tensor g = gate_weights(gate, u);
  if (gate.mode == GateMode::Top2Infer) g = top2_weights(g);
  return hdif_mix(experts, u, g, surrogate, v_th);
}

}  // namespace spt
