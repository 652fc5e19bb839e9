#include "spt/gradcheck.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "spt/model.hpp"
#include "spt/neurons.hpp"

namespace spt {

namespace {

using Inputs = std::span<const Tensor>;

Tensor uniform(const Shape& shape, std::mt19937_64& rng, double lo, double hi, bool grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::ArrayXd data(numel(shape));
  for (auto& v : data) v = u(rng);
  return grad ? Tensor::parameter(shape, std::move(data)) : Tensor(shape, std::move(data));
}

// Values in [lo, hi] kept at least `gap` away from each of `kinks`.
Tensor uniform_avoiding(const Shape& shape, std::mt19937_64& rng, double lo, double hi,
                        std::initializer_list<double> kinks, double gap) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::ArrayXd data(numel(shape));
  for (auto& v : data) {
    do {
      v = u(rng);
    } while (std::any_of(kinks.begin(), kinks.end(), [&](double k) { return std::abs(v - k) < gap; }));
  }
  return Tensor::parameter(shape, std::move(data));
}

// sum(y * R) with R fixed by (seed, shape), so every output element carries a
// distinct upstream gradient.
Tensor project(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return sum(mul(y, uniform(y.shape(), rng, -1.0, 1.0, false)));
}

// Deliberately wrong multiplication: each operand receives g * itself.
Tensor broken_mul(const Tensor& a, const Tensor& b) {
  auto node = std::make_shared<detail::Node>();
  node->shape = a.shape();
  node->value = a.data() * b.data();
  node->op = "mul";
  if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
    node->requires_grad = true;
    node->parents = {a.node(), b.node()};
    node->backward = [](detail::Node& self) {
      self.parents[0]->accumulate(self.grad * self.parents[0]->value);
      self.parents[1]->accumulate(self.grad * self.parents[1]->value);
    };
  }
  return Tensor(std::move(node));
}

using Builder = std::function<std::pair<std::function<Tensor(Inputs)>, std::vector<Tensor>>(std::mt19937_64&)>;

GradCheck fd(std::string name, Builder build, double tolerance = 1e-6) {
  return {name, tolerance, [build](std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            auto [f, inputs] = build(rng);
            return finite_difference_check([f, seed](Inputs in) { return project(f(in), seed); }, inputs);
          }};
}

GradCheck fd_smooth(std::string name, Builder build, double tolerance = 1e-6) {
  GradCheck c = fd(std::move(name), std::move(build), tolerance);
  c.run = [inner = c.run](std::uint64_t seed) {
    SmoothSpikeGuard smooth;
    return inner(seed);
  };
  return c;
}

SPTConfig micro_config(std::uint64_t seed) {
  SPTConfig cfg;
  cfg.encoding = {EncodingMethod::QSDE, 2, 8};
  cfg.input_points = 16;
  cfg.stages = {{8, 4, 4, 2}, {4, 8, 2, 2}};
  cfg.num_classes = 3;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

double relative_error(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
  const double denom = std::max({a.matrix().norm(), b.matrix().norm(), 1e-12});
  return (a - b).matrix().norm() / denom;
}

double finite_difference_check(const std::function<Tensor(std::span<const Tensor>)>& loss,
                               std::vector<Tensor> inputs, double step) {
  for (Tensor& t : inputs) t.zero_grad();
  DetachTape frozen;
  {
    DetachTapeScope record(frozen);
    loss(inputs).backward();
  }
  frozen.replay = true;
  DetachTapeScope replay(frozen);
  std::vector<std::pair<Eigen::ArrayXd, Eigen::ArrayXd>> grads;  // (tape, central difference)
  double global = 0.0;
  for (Tensor& t : inputs) {
    if (!t.requires_grad()) continue;
    const Eigen::ArrayXd analytic = t.grad();
    Eigen::ArrayXd numeric(t.numel());
    NoGradGuard no_grad;
    for (Index i = 0; i < t.numel(); ++i) {
      const double x0 = t.data()[i];
      frozen.cursor = 0;
      t.mutable_data()[i] = x0 + step;
      const double up = loss(inputs).item();
      t.mutable_data()[i] = x0 - step;
      frozen.cursor = 0;
      const double down = loss(inputs).item();
      t.mutable_data()[i] = x0;
      numeric[i] = (up - down) / (2.0 * step);
    }
    global += analytic.square().sum();
    grads.emplace_back(analytic, numeric);
  }
  // Tensors whose exact gradient vanishes (e.g. a bias ahead of BatchNorm)
  // leave only rounding noise in the difference quotient; their error is
  // measured against a floor of 1e-6 of the overall gradient norm.
  const double floor = 1e-6 * std::sqrt(global);
  double worst = 0.0;
  for (const auto& [a, b] : grads) {
    const double denom = std::max({a.matrix().norm(), b.matrix().norm(), floor, 1e-12});
    worst = std::max(worst, (a - b).matrix().norm() / denom);
  }
  return worst;
}

std::vector<GradCheck> gradcheck_registry(bool inject_fault) {
  std::vector<GradCheck> checks;
  auto unary = [](auto op, double lo = -2.0, double hi = 2.0) -> Builder {
    return [op, lo, hi](std::mt19937_64& rng) {
      std::vector<Tensor> in{uniform({2, 3, 4}, rng, lo, hi)};
      return std::pair{std::function<Tensor(Inputs)>([op](Inputs x) { return op(x[0]); }), in};
    };
  };
  auto binary = [](auto op, Shape sa, Shape sb) -> Builder {
    return [op, sa, sb](std::mt19937_64& rng) {
      std::vector<Tensor> in{uniform(sa, rng, -2.0, 2.0), uniform(sb, rng, -2.0, 2.0)};
      return std::pair{std::function<Tensor(Inputs)>([op](Inputs x) { return op(x[0], x[1]); }), in};
    };
  };

  checks.push_back(fd("add", binary([](const Tensor& a, const Tensor& b) { return add(a, b); }, {2, 3, 4}, {4})));
  checks.push_back(fd("sub", binary([](const Tensor& a, const Tensor& b) { return sub(a, b); }, {2, 3, 4}, {3, 4})));
  if (inject_fault) {
    checks.push_back(
        fd("mul", binary([](const Tensor& a, const Tensor& b) { return broken_mul(a, b); }, {3, 4}, {3, 4})));
  } else {
    checks.push_back(fd("mul", binary([](const Tensor& a, const Tensor& b) { return mul(a, b); }, {2, 3, 4}, {3, 4})));
  }
  checks.push_back(fd("neg", unary([](const Tensor& x) { return neg(x); })));
  checks.push_back(fd("scale", unary([](const Tensor& x) { return scale(x, -1.7); })));
  checks.push_back(fd("add_scalar", unary([](const Tensor& x) { return add_scalar(x, 0.3); })));
  checks.push_back(fd("exp", unary([](const Tensor& x) { return exp(x); })));
  checks.push_back(fd("log", unary([](const Tensor& x) { return log(x); }, 0.5, 2.0)));
  checks.push_back(fd("sigmoid", unary([](const Tensor& x) { return sigmoid(x); })));
  checks.push_back(fd("clamp", [](std::mt19937_64& rng) {
    std::vector<Tensor> in{uniform_avoiding({2, 3, 4}, rng, -2.0, 2.0, {-1.0, 1.0}, 1e-3)};
    return std::pair{std::function<Tensor(Inputs)>([](Inputs x) { return clamp(x[0], -1.0, 1.0); }), in};
  }));
  checks.push_back(fd("sum", unary([](const Tensor& x) { return sum(x); })));
  checks.push_back(fd("mean", unary([](const Tensor& x) { return mean(x); })));
  checks.push_back(fd("sum_axis", unary([](const Tensor& x) { return sum_axis(x, 1); })));
  checks.push_back(fd("mean_axis", unary([](const Tensor& x) { return mean_axis(x, 0); })));
  checks.push_back(fd("max_axis", unary([](const Tensor& x) { return max_axis(x, 2); })));
  checks.push_back(fd("softmax", unary([](const Tensor& x) { return softmax(x, 1); })));
  checks.push_back(fd("matmul", binary([](const Tensor& a, const Tensor& b) { return matmul(a, b); }, {4, 5}, {5, 3})));
  checks.push_back(fd("linear", [](std::mt19937_64& rng) {
    std::vector<Tensor> in{uniform({2, 3, 5}, rng, -1, 1), uniform({5, 4}, rng, -1, 1), uniform({4}, rng, -1, 1)};
    return std::pair{std::function<Tensor(Inputs)>([](Inputs x) { return linear(x[0], x[1], x[2]); }), in};
  }));
  checks.push_back(fd("batch_norm", [](std::mt19937_64& rng) {
    std::vector<Tensor> in{uniform({6, 3}, rng, -2, 2), uniform({3}, rng, 0.5, 1.5), uniform({3}, rng, -1, 1)};
    return std::pair{std::function<Tensor(Inputs)>([](Inputs x) { return batch_norm(x[0], x[1], x[2], 1e-5); }), in};
  }));
  checks.push_back(fd("cross_entropy", [](std::mt19937_64& rng) {
    std::vector<Tensor> in{uniform({3, 4}, rng, -2, 2)};
    return std::pair{std::function<Tensor(Inputs)>([](Inputs x) {
                       const std::vector<Index> labels{0, 3, 1};
                       return cross_entropy(x[0], labels);
                     }),
                     in};
  }));
  checks.push_back(fd("reshape", unary([](const Tensor& x) { return reshape(x, {6, 4}); })));
  checks.push_back(fd("permute", unary([](const Tensor& x) {
                        const std::vector<Index> order{2, 0, 1};
                        return permute(x, order);
                      })));
  checks.push_back(fd("concat", binary(
                                    [](const Tensor& a, const Tensor& b) {
                                      const std::vector<Tensor> xs{a, b};
                                      return concat(xs, 1);
                                    },
                                    {2, 3, 4}, {2, 2, 4})));
  checks.push_back(fd("stack", binary(
                                   [](const Tensor& a, const Tensor& b) {
                                     const std::vector<Tensor> xs{a, b};
                                     return stack(xs, 1);
                                   },
                                   {3, 4}, {3, 4})));
  checks.push_back(fd("slice", unary([](const Tensor& x) { return slice(x, 2, 1, 2); })));
  checks.push_back(fd("select", unary([](const Tensor& x) { return select(x, 1, 2); })));
  checks.push_back(fd("expand", [](std::mt19937_64& rng) {
    std::vector<Tensor> in{uniform({2, 1, 3}, rng, -2, 2)};
    return std::pair{std::function<Tensor(Inputs)>([](Inputs x) { return expand(x[0], {2, 4, 3}); }), in};
  }));
  checks.push_back(fd("gather", [](std::mt19937_64& rng) {
    std::vector<Tensor> in{uniform({4, 3}, rng, -2, 2)};
    return std::pair{std::function<Tensor(Inputs)>([](Inputs x) {
                       IndexMatrix idx(3, 2);
                       idx << 0, 0, 3, 1, 1, 0;
                       return gather(x[0], idx);
                     }),
                     in};
  }));
  checks.push_back(fd("index_rows", [](std::mt19937_64& rng) {
    std::vector<Tensor> in{uniform({4, 3}, rng, -2, 2)};
    return std::pair{std::function<Tensor(Inputs)>([](Inputs x) {
                       const std::vector<Index> idx{2, 2, 0};
                       return index_rows(x[0], idx);
                     }),
                     in};
  }));

  // Backward of the Heaviside spike against the closed-form atan surrogate.
  checks.push_back({"spike.surrogate", 1e-12, [](std::uint64_t seed) {
                      std::mt19937_64 rng(seed);
                      const double v_th = 0.5;
                      const double alpha = 2.0;
                      Tensor h = uniform({100}, rng, -1.5, 2.5);
                      sum(spike(h, v_th)).backward();
                      double worst = 0.0;
                      for (Index i = 0; i < h.numel(); ++i) {
                        const double x = h.data()[i] - v_th;
                        const double z = std::numbers::pi / 2.0 * alpha * x;
                        worst = std::max(worst, std::abs(h.grad()[i] - alpha / (2.0 * (1.0 + z * z))));
                      }
                      return worst;
                    }});
  checks.push_back(fd_smooth("spike.smooth", unary([](const Tensor& x) { return spike(x, 0.5); })));

  for (NeuronKind kind : {NeuronKind::IF, NeuronKind::LIF, NeuronKind::EIF, NeuronKind::PLIF}) {
    checks.push_back(fd_smooth(std::string("neuron.") + to_string(kind), [kind](std::mt19937_64& rng) {
      auto params = std::make_shared<NeuronParams>(NeuronParams::make(kind));
      std::vector<Tensor> in{uniform({3, 2, 3}, rng, -0.5, 1.0)};
      if (params->w.defined()) {
        params->w.mutable_data()[0] = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
        in.push_back(params->w);
      }
      return std::pair{std::function<Tensor(Inputs)>([params](Inputs x) { return multi_step(*params, x[0]); }), in};
    }));
    checks.push_back(fd_smooth(std::string("neuron.") + to_string(kind) + ".composite", [kind](std::mt19937_64& rng) {
      auto params = std::make_shared<NeuronParams>(NeuronParams::make(kind));
      std::vector<Tensor> in{uniform({3, 2, 3}, rng, -0.5, 1.0)};
      if (params->w.defined()) {
        params->w.mutable_data()[0] = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
        in.push_back(params->w);
      }
      return std::pair{
          std::function<Tensor(Inputs)>([params](Inputs x) { return multi_step_reference(*params, x[0]); }), in};
    }));
  }

  // Gate path: gate parameters and PLIF w against a fixed potential u (T=2, N=3, C=2).
  checks.push_back(fd_smooth(
      "hdif.gate",
      [](std::mt19937_64& rng) {
        auto experts = std::make_shared<std::array<NeuronParams, kExpertCount>>(default_experts());
        const Tensor u = uniform({2, 3, 2}, rng, -0.5, 1.0, false);
        std::vector<Tensor> in{uniform({4, 4}, rng, -1, 1), uniform({4}, rng, -1, 1)};
        (*experts)[3].w.mutable_data()[0] = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
        in.push_back((*experts)[3].w);
        return std::pair{std::function<Tensor(Inputs)>([experts, u](Inputs x) {
                           HDIFGate gate{x[0], x[1], GateMode::DenseTrain};
                           return hdif_forward(gate, *experts, u);
                         }),
                         in};
      },
      1e-4));
  // Full dense HD-IF including the potential; the gate sees u only through a stop-gradient.
  checks.push_back(fd_smooth("hdif.dense", [](std::mt19937_64& rng) {
    auto experts = std::make_shared<std::array<NeuronParams, kExpertCount>>(default_experts());
    std::vector<Tensor> in{uniform({2, 3, 4}, rng, -0.5, 1.0), uniform({8, 4}, rng, -1, 1), uniform({4}, rng, -1, 1)};
    (*experts)[3].w.mutable_data()[0] = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    in.push_back((*experts)[3].w);
    return std::pair{std::function<Tensor(Inputs)>([experts](Inputs x) {
                       HDIFGate gate{x[1], x[2], GateMode::DenseTrain};
                       return hdif_forward(gate, *experts, x[0]);
                     }),
                     in};
  }));

  // Whole classifier, all parameters, through smooth spikes.
  checks.push_back({"model.micro", 1e-3, [](std::uint64_t seed) {
                      SmoothSpikeGuard smooth;
                      auto model = std::make_shared<SpikingPointTransformer>(micro_config(seed));
                      std::mt19937_64 rng(seed + 1);
                      std::vector<PointCloud> clouds;
                      for (int b = 0; b < 2; ++b) {
                        PointCloud pc;
                        pc.xyz = Points::NullaryExpr(16, 3, [&]() {
                          return std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
                        });
                        clouds.push_back(pc);
                      }
                      const std::vector<Index> labels{0, 2};
                      return finite_difference_check(
                          [model, clouds, labels](Inputs) {
                            return classification_loss(model->forward(clouds, /*training=*/true), labels);
                          },
                          model->parameters());
                    }});
  return checks;
}

std::vector<GradCheckResult> run_gradchecks(const std::vector<GradCheck>& checks, std::uint64_t seed, int trials) {
  std::vector<GradCheckResult> results;
  for (const GradCheck& c : checks) {
    GradCheckResult r{c.name, 0.0, c.tolerance, false};
    for (int t = 0; t < trials; ++t) r.max_error = std::max(r.max_error, c.run(seed + static_cast<std::uint64_t>(t)));
    r.passed = r.max_error < c.tolerance;
    results.push_back(r);
  }
  return results;
}

}  // namespace spt
