#include "spt/layers.hpp"

#include <cmath>

#include "spt/energy.hpp"

namespace spt {

MlpLayer::MlpLayer(std::string name, Index in, Index out, InputKind input, std::mt19937_64& rng, bool batch_norm)
    : name_(std::move(name)), input_(input) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Eigen::ArrayXd w(in * out);
  for (auto& v : w) v = dist(rng);
  Eigen::ArrayXd b(out);
  for (auto& v : b) v = dist(rng);
  weight = Tensor::parameter(Shape{in, out}, std::move(w));
  bias = Tensor::parameter(Shape{out}, std::move(b));
  if (batch_norm) {
    gamma = Tensor::parameter(Shape{out}, Eigen::ArrayXd::Ones(out));
    beta = Tensor::parameter(Shape{out}, Eigen::ArrayXd::Zero(out));
    running_mean = Tensor(Shape{out}, 0.0);
    running_var = Tensor(Shape{out}, 1.0);
  }
}

Tensor MlpLayer::forward(const Tensor& x, bool training) const {
  const Index in = in_features();
  const Index out = out_features();
  if (x.rank() < 1 || x.shape().back() != in) {
    throw DimensionError(name_ + ": expected input [..., " + std::to_string(in) + "], got " + to_string(x.shape()));
  }
  if (auto* counter = energy::active_counter()) {
    if (input_ == InputKind::Spike) {
      counter->add_ac(name_, x, out);
    } else {
      counter->add_mac(name_, (x.numel() / in) * in * out);
    }
  }
  if (!has_batch_norm()) return linear(x, weight, bias);

  if (training) {
    Tensor y = linear(x, weight, bias);
    const Index rows = y.numel() / out;
    Eigen::ArrayXd mu;
    Eigen::ArrayXd var;
    Tensor z = batch_norm(reshape(y, Shape{rows, out}), gamma, beta, eps, &mu, &var);
    const double unbias = rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
    Tensor rm = running_mean;  // handles share storage
    Tensor rv = running_var;
    rm.mutable_data() = (1.0 - momentum) * rm.data() + momentum * mu;
    rv.mutable_data() = (1.0 - momentum) * rv.data() + momentum * var * unbias;
    return reshape(z, y.shape());
  }

  // Fold: y = (xW + b - mu) * s + beta with s = gamma / sqrt(var + eps).
  const Eigen::ArrayXd s = gamma.data() / (running_var.data() + eps).sqrt();
  Eigen::ArrayXd w = weight.data();
  Eigen::Map<RowMatrix>(w.data(), in, out).array().rowwise() *= s.transpose();
  Eigen::ArrayXd b = (bias.data() - running_mean.data()) * s + beta.data();
  return linear(x, Tensor(Shape{in, out}, std::move(w)), Tensor(Shape{out}, std::move(b)));
}

void MlpLayer::collect(std::vector<NamedTensor>& out) const {
  out.push_back({name_ + ".weight", weight, true});
  out.push_back({name_ + ".bias", bias, true});
  if (has_batch_norm()) {
    out.push_back({name_ + ".bn.gamma", gamma, true});
    out.push_back({name_ + ".bn.beta", beta, true});
    out.push_back({name_ + ".bn.running_mean", running_mean, false});
    out.push_back({name_ + ".bn.running_var", running_var, false});
  }
}

Tensor SpikingNeuron::forward(const Tensor& x_seq) const {
  Tensor s = multi_step(params_, x_seq);
  if (auto* counter = energy::active_counter()) counter->add_spikes(name_, s);
  return s;
}

void SpikingNeuron::collect(std::vector<NamedTensor>& out) const {
  if (params_.kind == NeuronKind::PLIF) out.push_back({name_ + ".w", params_.w, true});
}

}  // namespace spt
