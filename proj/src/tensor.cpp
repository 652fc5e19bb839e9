#include "spt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace spt {

namespace {

using RowArray = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using detail::Node;
using NodePtr = std::shared_ptr<Node>;

thread_local bool g_grad_enabled = true;
thread_local SpikeForward g_spike_forward = SpikeForward::Heaviside;

struct AxisSplit {
  Index outer = 1;
  Index len = 1;
  Index inner = 1;
};

AxisSplit split_at(const Shape& shape, Index axis) {
  AxisSplit s;
  for (Index i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) s.inner *= shape[i];
  return s;
}

void check_axis(const Tensor& x, Index axis, const char* op) {
  if (axis < 0 || axis >= x.rank()) {
    std::ostringstream msg;
    msg << op << ": axis " << axis << " out of range for shape " << to_string(x.shape());
    throw IndexError(msg.str());
  }
}

// Builds a result node; links it into the tape when any input records.
Tensor make_result(Shape shape, Eigen::ArrayXd value, const char* op, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward) {
  if (!value.allFinite()) {
    throw ContractError(std::string(op) + ": produced a non-finite value");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  const bool records = g_grad_enabled && std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) {
                         return p->requires_grad;
                       });
  if (records) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (!is_suffix(b.shape(), a.shape())) {
    std::ostringstream msg;
    msg << op << ": shapes " << to_string(a.shape()) << " and " << to_string(b.shape())
        << " are not trailing-compatible";
    throw DimensionError(msg.str());
  }
}

Eigen::Map<const RowArray> as_rows(const Eigen::ArrayXd& v, Index rows, Index cols) {
  return Eigen::Map<const RowArray>(v.data(), rows, cols);
}

Eigen::ArrayXd tile(const Eigen::ArrayXd& b, Index reps) { return b.replicate(reps, 1); }

Eigen::ArrayXd reduce_tiles(const Eigen::ArrayXd& g, Index reps, Index cols) {
  return as_rows(g, reps, cols).colwise().sum().transpose();
}

Shape strip_axis(const Shape& shape, Index axis) {
  Shape out = shape;
  out.erase(out.begin() + axis);
  return out;
}

}  // namespace

Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream s;
  s << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) s << (i ? ", " : "") << shape[i];
  s << ')';
  return s.str();
}

void detail::Node::accumulate(Eigen::ArrayXd g) {
  if (!requires_grad) return;
  if (grad.size() == 0) {
    grad = std::move(g);
  } else {
    grad += g;
  }
}

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<Node>()) {
  for (Index d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + spt::to_string(shape));
  }
  node_->value = Eigen::ArrayXd::Constant(spt::numel(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, Eigen::ArrayXd data) : node_(std::make_shared<Node>()) {
  for (Index d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + spt::to_string(shape));
  }
  if (spt::numel(shape) != data.size()) {
    throw DimensionError("shape " + spt::to_string(shape) + " does not hold " + std::to_string(data.size()) +
                         " values");
  }
  if (!data.allFinite()) throw ContractError("tensor data must be finite");
  node_->shape = std::move(shape);
  node_->value = std::move(data);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, Eigen::ArrayXd::Constant(1, value)); }

Tensor Tensor::parameter(Shape shape, Eigen::ArrayXd data) {
  Tensor t(std::move(shape), std::move(data));
  t.set_requires_grad(true);
  return t;
}

Index Tensor::size(Index axis) const {
  if (axis < 0 || axis >= rank()) throw IndexError("axis out of range");
  return node_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() needs a single-element tensor, shape " + spt::to_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<Index> idx) const {
  if (static_cast<Index>(idx.size()) != rank()) throw DimensionError("at(): index rank mismatch");
  Index flat = 0;
  Index axis = 0;
  for (Index i : idx) {
    if (i < 0 || i >= node_->shape[axis]) throw IndexError("at(): index out of range");
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

void Tensor::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw ContractError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = on;
}

const Eigen::ArrayXd& Tensor::grad() const {
  if (node_->grad.size() == 0) node_->grad = Eigen::ArrayXd::Zero(node_->value.size());
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.resize(0); }

namespace {
thread_local DetachTape* g_detach_tape = nullptr;
}  // namespace

DetachTapeScope::DetachTapeScope(DetachTape& tape) : previous_(g_detach_tape) { g_detach_tape = &tape; }
DetachTapeScope::~DetachTapeScope() { g_detach_tape = previous_; }

Tensor Tensor::detach() const {
  if (g_detach_tape) {
    DetachTape& tape = *g_detach_tape;
    if (!tape.replay) {
      tape.values.push_back(node_->value);
    } else {
      if (tape.cursor >= tape.values.size() || tape.values[tape.cursor].size() != numel()) {
        throw ContractError("detach: replay diverged from the recorded pass");
      }
      return Tensor(node_->shape, tape.values[tape.cursor++]);
    }
  }
  return Tensor(node_->shape, node_->value);
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + spt::to_string(shape()));
  }
  if (!node_->requires_grad) throw ContractError("backward(): loss was not produced through recorded operations");

  // Post-order DFS: every node appears after all of its recorded inputs.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen{node_.get()};
  std::vector<std::pair<Node*, std::size_t>> pending{{node_.get(), 0}};
  while (!pending.empty()) {
    auto& [n, next] = pending.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) pending.emplace_back(p, 0);
    } else {
      order.push_back(n);
      pending.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.resize(0);
  }
  node_->accumulate(Eigen::ArrayXd::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf() || n->grad.size() == 0) continue;
    n->backward(*n);
    n->grad.resize(0);
  }
  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.resize(0);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------- surrogate

double SurrogateSpec::derivative(double x) const {
  const double z = std::numbers::pi / 2.0 * alpha * x;
  return alpha / (2.0 * (1.0 + z * z));
}

double SurrogateSpec::primitive(double x) const {
  return std::atan(std::numbers::pi / 2.0 * alpha * x) / std::numbers::pi + 0.5;
}

SpikeForward spike_forward_mode() { return g_spike_forward; }

SmoothSpikeGuard::SmoothSpikeGuard() : previous_(g_spike_forward) { g_spike_forward = SpikeForward::Smooth; }
SmoothSpikeGuard::~SmoothSpikeGuard() { g_spike_forward = previous_; }

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "add");
  const Index cols = b.numel();
  const Index reps = a.numel() / cols;
  Eigen::ArrayXd out = a.data() + tile(b.data(), reps);
  return make_result(a.shape(), std::move(out), "add", {a.node(), b.node()}, [reps, cols](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(reps == 1 ? self.grad : reduce_tiles(self.grad, reps, cols));
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "sub");
  const Index cols = b.numel();
  const Index reps = a.numel() / cols;
  Eigen::ArrayXd out = a.data() - tile(b.data(), reps);
  return make_result(a.shape(), std::move(out), "sub", {a.node(), b.node()}, [reps, cols](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(-(reps == 1 ? self.grad : reduce_tiles(self.grad, reps, cols)));
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "mul");
  const Index cols = b.numel();
  const Index reps = a.numel() / cols;
  Eigen::ArrayXd out = a.data() * tile(b.data(), reps);
  return make_result(a.shape(), std::move(out), "mul", {a.node(), b.node()}, [reps, cols](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) pa->accumulate(self.grad * tile(pb->value, reps));
    if (pb->requires_grad) {
      Eigen::ArrayXd g = self.grad * pa->value;
      pb->accumulate(reps == 1 ? g : reduce_tiles(g, reps, cols));
    }
  });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double s) {
  return make_result(x.shape(), x.data() * s, "scale", {x.node()},
                     [s](Node& self) { self.parents[0]->accumulate(self.grad * s); });
}

Tensor add_scalar(const Tensor& x, double s) {
  return make_result(x.shape(), x.data() + s, "add_scalar", {x.node()},
                     [](Node& self) { self.parents[0]->accumulate(self.grad); });
}

Tensor exp(const Tensor& x) {
  return make_result(x.shape(), x.data().exp(), "exp", {x.node()},
                     [](Node& self) { self.parents[0]->accumulate(self.grad * self.value); });
}

Tensor log(const Tensor& x) {
  return make_result(x.shape(), x.data().log(), "log", {x.node()},
                     [](Node& self) { self.parents[0]->accumulate(self.grad / self.parents[0]->value); });
}

Tensor sigmoid(const Tensor& x) {
  Eigen::ArrayXd y = 1.0 / (1.0 + (-x.data()).exp());
  return make_result(x.shape(), std::move(y), "sigmoid", {x.node()}, [](Node& self) {
    self.parents[0]->accumulate(self.grad * self.value * (1.0 - self.value));
  });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lo must not exceed hi");
  return make_result(x.shape(), x.data().max(lo).min(hi), "clamp", {x.node()}, [lo, hi](Node& self) {
    const auto& v = self.parents[0]->value;
    self.parents[0]->accumulate((v >= lo && v <= hi).select(self.grad, 0.0));
  });
}

Tensor spike(const Tensor& h, double v_th, const SurrogateSpec& s) {
  if (!std::isfinite(v_th)) throw ContractError("spike: threshold must be finite");
  if (!(s.alpha > 0.0)) throw ContractError("spike: surrogate alpha must be positive");
  Eigen::ArrayXd out(h.numel());
  const auto& hv = h.data();
  if (g_spike_forward == SpikeForward::Heaviside) {
    for (Index i = 0; i < hv.size(); ++i) out[i] = hv[i] - v_th >= 0.0 ? 1.0 : 0.0;
  } else {
    for (Index i = 0; i < hv.size(); ++i) out[i] = s.primitive(hv[i] - v_th);
  }
  return make_result(h.shape(), std::move(out), "spike", {h.node()}, [v_th, s](Node& self) {
    const auto& hv = self.parents[0]->value;
    Eigen::ArrayXd g(hv.size());
    for (Index i = 0; i < hv.size(); ++i) g[i] = self.grad[i] * s.derivative(hv[i] - v_th);
    self.parents[0]->accumulate(g);
  });
}

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
  return make_result(Shape{}, Eigen::ArrayXd::Constant(1, x.data().sum()), "sum", {x.node()}, [](Node& self) {
    self.parents[0]->accumulate(Eigen::ArrayXd::Constant(self.parents[0]->value.size(), self.grad[0]));
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  return make_result(Shape{}, Eigen::ArrayXd::Constant(1, x.data().sum() / n), "mean", {x.node()},
                     [n](Node& self) {
                       self.parents[0]->accumulate(
                           Eigen::ArrayXd::Constant(self.parents[0]->value.size(), self.grad[0] / n));
                     });
}

Tensor sum_axis(const Tensor& x, Index axis) {
  check_axis(x, axis, "sum_axis");
  const AxisSplit s = split_at(x.shape(), axis);
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(s.outer * s.inner);
  const auto& v = x.data();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index l = 0; l < s.len; ++l) {
      out.segment(o * s.inner, s.inner) += v.segment((o * s.len + l) * s.inner, s.inner);
    }
  }
  return make_result(strip_axis(x.shape(), axis), std::move(out), "sum_axis", {x.node()}, [s](Node& self) {
    Eigen::ArrayXd g(s.outer * s.len * s.inner);
    for (Index o = 0; o < s.outer; ++o) {
      for (Index l = 0; l < s.len; ++l) {
        g.segment((o * s.len + l) * s.inner, s.inner) = self.grad.segment(o * s.inner, s.inner);
      }
    }
    self.parents[0]->accumulate(g);
  });
}

Tensor mean_axis(const Tensor& x, Index axis) {
  check_axis(x, axis, "mean_axis");
  return scale(sum_axis(x, axis), 1.0 / static_cast<double>(x.size(axis)));
}

Tensor max_axis(const Tensor& x, Index axis) {
  check_axis(x, axis, "max_axis");
  const AxisSplit s = split_at(x.shape(), axis);
  const auto& v = x.data();
  Eigen::ArrayXd out(s.outer * s.inner);
  std::vector<Index> arg(static_cast<std::size_t>(s.outer * s.inner));
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      Index best = o * s.len * s.inner + i;
      for (Index l = 1; l < s.len; ++l) {
        const Index at = (o * s.len + l) * s.inner + i;
        if (v[at] > v[best]) best = at;
      }
      out[o * s.inner + i] = v[best];
      arg[static_cast<std::size_t>(o * s.inner + i)] = best;
    }
  }
  return make_result(strip_axis(x.shape(), axis), std::move(out), "max_axis", {x.node()},
                     [arg = std::move(arg)](Node& self) {
                       Eigen::ArrayXd g = Eigen::ArrayXd::Zero(self.parents[0]->value.size());
                       for (std::size_t j = 0; j < arg.size(); ++j) g[arg[j]] += self.grad[static_cast<Index>(j)];
                       self.parents[0]->accumulate(g);
                     });
}

Tensor softmax(const Tensor& x, Index axis) {
  check_axis(x, axis, "softmax");
  const AxisSplit s = split_at(x.shape(), axis);
  const auto& v = x.data();
  Eigen::ArrayXd y(v.size());
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.len * s.inner + i;
      double peak = v[base];
      for (Index l = 1; l < s.len; ++l) peak = std::max(peak, v[base + l * s.inner]);
      double total = 0.0;
      for (Index l = 0; l < s.len; ++l) {
        const double e = std::exp(v[base + l * s.inner] - peak);
        y[base + l * s.inner] = e;
        total += e;
      }
      for (Index l = 0; l < s.len; ++l) y[base + l * s.inner] /= total;
    }
  }
  return make_result(x.shape(), std::move(y), "softmax", {x.node()}, [s](Node& self) {
    const auto& y = self.value;
    const auto& gy = self.grad;
    Eigen::ArrayXd g(y.size());
    for (Index o = 0; o < s.outer; ++o) {
      for (Index i = 0; i < s.inner; ++i) {
        const Index base = o * s.len * s.inner + i;
        double dot = 0.0;
        for (Index l = 0; l < s.len; ++l) dot += gy[base + l * s.inner] * y[base + l * s.inner];
        for (Index l = 0; l < s.len; ++l) {
          const Index at = base + l * s.inner;
          g[at] = y[at] * (gy[at] - dot);
        }
      }
    }
    self.parents[0]->accumulate(g);
  });
}

// ---------------------------------------------------------------- linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.size(1) != b.size(0)) {
    throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
  const Index m = a.size(0);
  const Index k = a.size(1);
  const Index n = b.size(1);
  Eigen::ArrayXd out(m * n);
  Eigen::Map<RowMatrix>(out.data(), m, n).noalias() =
      Eigen::Map<const RowMatrix>(a.data().data(), m, k) * Eigen::Map<const RowMatrix>(b.data().data(), k, n);
  return make_result(Shape{m, n}, std::move(out), "matmul", {a.node(), b.node()}, [m, k, n](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    Eigen::Map<const RowMatrix> g(self.grad.data(), m, n);
    if (pa->requires_grad) {
      Eigen::ArrayXd ga(m * k);
      Eigen::Map<RowMatrix>(ga.data(), m, k).noalias() =
          g * Eigen::Map<const RowMatrix>(pb->value.data(), k, n).transpose();
      pa->accumulate(ga);
    }
    if (pb->requires_grad) {
      Eigen::ArrayXd gb(k * n);
      Eigen::Map<RowMatrix>(gb.data(), k, n).noalias() =
          Eigen::Map<const RowMatrix>(pa->value.data(), m, k).transpose() * g;
      pb->accumulate(gb);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() < 1 || w.rank() != 2 || b.rank() != 1 || x.shape().back() != w.size(0) || b.size(0) != w.size(1)) {
    throw DimensionError("linear: input " + to_string(x.shape()) + ", weight " + to_string(w.shape()) + ", bias " +
                         to_string(b.shape()));
  }
  const Index in = w.size(0);
  const Index out_dim = w.size(1);
  const Index rows = x.numel() / in;
  Eigen::ArrayXd out(rows * out_dim);
  Eigen::Map<RowMatrix> y(out.data(), rows, out_dim);
  y.noalias() = Eigen::Map<const RowMatrix>(x.data().data(), rows, in) *
                Eigen::Map<const RowMatrix>(w.data().data(), in, out_dim);
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), out_dim);
  Shape shape = x.shape();
  shape.back() = out_dim;
  return make_result(std::move(shape), std::move(out), "linear", {x.node(), w.node(), b.node()},
                     [rows, in, out_dim](Node& self) {
                       auto& px = self.parents[0];
                       auto& pw = self.parents[1];
                       auto& pb = self.parents[2];
                       Eigen::Map<const RowMatrix> g(self.grad.data(), rows, out_dim);
                       if (px->requires_grad) {
                         Eigen::ArrayXd gx(rows * in);
                         Eigen::Map<RowMatrix>(gx.data(), rows, in).noalias() =
                             g * Eigen::Map<const RowMatrix>(pw->value.data(), in, out_dim).transpose();
                         px->accumulate(gx);
                       }
                       if (pw->requires_grad) {
                         Eigen::ArrayXd gw(in * out_dim);
                         Eigen::Map<RowMatrix>(gw.data(), in, out_dim).noalias() =
                             Eigen::Map<const RowMatrix>(px->value.data(), rows, in).transpose() * g;
                         pw->accumulate(gw);
                       }
                       if (pb->requires_grad) pb->accumulate(g.colwise().sum().transpose().array());
                     });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, Eigen::ArrayXd* batch_mean,
                  Eigen::ArrayXd* batch_var) {
  if (x.rank() != 2 || gamma.rank() != 1 || beta.rank() != 1 || gamma.size(0) != x.size(1) ||
      beta.size(0) != x.size(1)) {
    throw DimensionError("batch_norm: input " + to_string(x.shape()) + ", gamma " + to_string(gamma.shape()) +
                         ", beta " + to_string(beta.shape()));
  }
  const Index rows = x.size(0);
  const Index c = x.size(1);
  auto xv = as_rows(x.data(), rows, c);
  const Eigen::ArrayXd mu = xv.colwise().mean().transpose();
  RowArray centered = xv.rowwise() - mu.transpose();
  const Eigen::ArrayXd var = centered.square().colwise().mean().transpose();
  const Eigen::ArrayXd inv_std = (var + eps).rsqrt();
  RowArray xhat = centered.rowwise() * inv_std.transpose();
  RowArray y = (xhat.rowwise() * gamma.data().transpose()).rowwise() + beta.data().transpose();
  if (batch_mean) *batch_mean = mu;
  if (batch_var) *batch_var = var;
  Eigen::ArrayXd out = Eigen::Map<const Eigen::ArrayXd>(y.data(), rows * c);
  return make_result(x.shape(), std::move(out), "batch_norm", {x.node(), gamma.node(), beta.node()},
                     [rows, c, xhat = std::move(xhat), inv_std](Node& self) {
                       auto& px = self.parents[0];
                       auto& pg = self.parents[1];
                       auto& pb = self.parents[2];
                       auto g = as_rows(self.grad, rows, c);
                       if (pg->requires_grad) pg->accumulate((g * xhat).colwise().sum().transpose());
                       if (pb->requires_grad) pb->accumulate(g.colwise().sum().transpose());
                       if (px->requires_grad) {
                         RowArray dxhat = g.rowwise() * pg->value.transpose();
                         const Eigen::ArrayXd s1 = dxhat.colwise().sum().transpose();
                         const Eigen::ArrayXd s2 = (dxhat * xhat).colwise().sum().transpose();
                         const double n = static_cast<double>(rows);
                         RowArray dx = ((dxhat * n).rowwise() - s1.transpose() - (xhat.rowwise() * s2.transpose()))
                                           .rowwise() *
                                       (inv_std / n).transpose();
                         px->accumulate(Eigen::Map<const Eigen::ArrayXd>(dx.data(), rows * c));
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const Index> labels) {
  if (logits.rank() != 2 || logits.size(0) != static_cast<Index>(labels.size())) {
    throw DimensionError("cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const Index b = logits.size(0);
  const Index k = logits.size(1);
  auto z = as_rows(logits.data(), b, k);
  RowArray p(b, k);
  double loss = 0.0;
  for (Index i = 0; i < b; ++i) {
    const Index label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= k) {
      throw IndexError("cross_entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
    }
    const double peak = z.row(i).maxCoeff();
    const auto e = (z.row(i) - peak).exp();
    const double total = e.sum();
    p.row(i) = e / total;
    loss += std::log(total) + peak - z(i, label);
  }
  std::vector<Index> owned(labels.begin(), labels.end());
  return make_result(Shape{}, Eigen::ArrayXd::Constant(1, loss / static_cast<double>(b)), "cross_entropy",
                     {logits.node()}, [b, k, p = std::move(p), owned = std::move(owned)](Node& self) {
                       RowArray g = p;
                       for (Index i = 0; i < b; ++i) g(i, owned[static_cast<std::size_t>(i)]) -= 1.0;
                       g *= self.grad[0] / static_cast<double>(b);
                       self.parents[0]->accumulate(Eigen::Map<const Eigen::ArrayXd>(g.data(), b * k));
                     });
}

// ---------------------------------------------------------------- shape

Tensor reshape(const Tensor& x, Shape shape) {
  if (spt::numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  return make_result(std::move(shape), x.data(), "reshape", {x.node()},
                     [](Node& self) { self.parents[0]->accumulate(self.grad); });
}

Tensor permute(const Tensor& x, std::span<const Index> order) {
  const Index r = x.rank();
  if (static_cast<Index>(order.size()) != r) throw DimensionError("permute: order length differs from rank");
  std::vector<bool> used(static_cast<std::size_t>(r), false);
  for (Index a : order) {
    if (a < 0 || a >= r || used[static_cast<std::size_t>(a)]) throw IndexError("permute: invalid axis order");
    used[static_cast<std::size_t>(a)] = true;
  }
  const Shape& in = x.shape();
  std::vector<Index> stride(static_cast<std::size_t>(r), 1);
  for (Index i = r - 2; i >= 0; --i) stride[i] = stride[i + 1] * in[i + 1];
  Shape out_shape(static_cast<std::size_t>(r));
  for (Index i = 0; i < r; ++i) out_shape[i] = in[order[i]];

  const Index n = x.numel();
  std::vector<Index> src(static_cast<std::size_t>(n));
  std::vector<Index> counter(static_cast<std::size_t>(r), 0);
  Index offset = 0;
  for (Index j = 0; j < n; ++j) {
    src[static_cast<std::size_t>(j)] = offset;
    for (Index d = r - 1; d >= 0; --d) {
      const Index axis = order[d];
      ++counter[d];
      offset += stride[axis];
      if (counter[d] < out_shape[d]) break;
      offset -= stride[axis] * out_shape[d];
      counter[d] = 0;
    }
  }
  Eigen::ArrayXd out(n);
  for (Index j = 0; j < n; ++j) out[j] = x.data()[src[static_cast<std::size_t>(j)]];
  return make_result(std::move(out_shape), std::move(out), "permute", {x.node()}, [src = std::move(src)](Node& self) {
    Eigen::ArrayXd g(self.grad.size());
    for (std::size_t j = 0; j < src.size(); ++j) g[src[j]] = self.grad[static_cast<Index>(j)];
    self.parents[0]->accumulate(g);
  });
}

Tensor concat(std::span<const Tensor> xs, Index axis) {
  if (xs.empty()) throw ContractError("concat: no inputs");
  check_axis(xs[0], axis, "concat");
  Shape shape = xs[0].shape();
  std::vector<Index> lens;
  Index total = 0;
  for (const Tensor& t : xs) {
    bool ok = t.rank() == xs[0].rank();
    for (Index d = 0; ok && d < t.rank(); ++d) ok = d == axis || t.shape()[d] == shape[d];
    if (!ok) throw DimensionError("concat: " + to_string(t.shape()) + " incompatible with " + to_string(shape));
    lens.push_back(t.shape()[axis]);
    total += t.shape()[axis];
  }
  shape[axis] = total;
  const AxisSplit s = split_at(shape, axis);
  Eigen::ArrayXd out(spt::numel(shape));
  std::vector<NodePtr> parents;
  Index at = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Index chunk = lens[i] * s.inner;
    for (Index o = 0; o < s.outer; ++o) {
      out.segment(o * s.len * s.inner + at * s.inner, chunk) = xs[i].data().segment(o * chunk, chunk);
    }
    at += lens[i];
    parents.push_back(xs[i].node());
  }
  return make_result(std::move(shape), std::move(out), "concat", std::move(parents),
                     [s, lens = std::move(lens)](Node& self) {
                       Index at = 0;
                       for (std::size_t i = 0; i < lens.size(); ++i) {
                         const Index chunk = lens[i] * s.inner;
                         if (self.parents[i]->requires_grad) {
                           Eigen::ArrayXd g(s.outer * chunk);
                           for (Index o = 0; o < s.outer; ++o) {
                             g.segment(o * chunk, chunk) = self.grad.segment(o * s.len * s.inner + at * s.inner, chunk);
                           }
                           self.parents[i]->accumulate(g);
                         }
                         at += lens[i];
                       }
                     });
}

Tensor stack(std::span<const Tensor> xs, Index axis) {
  if (xs.empty()) throw ContractError("stack: no inputs");
  if (axis < 0 || axis > xs[0].rank()) throw IndexError("stack: axis out of range");
  std::vector<Tensor> lifted;
  lifted.reserve(xs.size());
  for (const Tensor& t : xs) {
    if (t.shape() != xs[0].shape()) {
      throw DimensionError("stack: " + to_string(t.shape()) + " differs from " + to_string(xs[0].shape()));
    }
    Shape s = t.shape();
    s.insert(s.begin() + axis, 1);
    lifted.push_back(reshape(t, std::move(s)));
  }
  return concat(lifted, axis);
}

Tensor slice(const Tensor& x, Index axis, Index start, Index length) {
  check_axis(x, axis, "slice");
  if (start < 0 || length <= 0 || start + length > x.size(axis)) {
    throw IndexError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") outside axis of size " + std::to_string(x.size(axis)));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = length;
  const Index chunk = length * s.inner;
  Eigen::ArrayXd out(s.outer * chunk);
  for (Index o = 0; o < s.outer; ++o) {
    out.segment(o * chunk, chunk) = x.data().segment((o * s.len + start) * s.inner, chunk);
  }
  return make_result(std::move(shape), std::move(out), "slice", {x.node()}, [s, start, chunk](Node& self) {
    Eigen::ArrayXd g = Eigen::ArrayXd::Zero(s.outer * s.len * s.inner);
    for (Index o = 0; o < s.outer; ++o) {
      g.segment((o * s.len + start) * s.inner, chunk) = self.grad.segment(o * chunk, chunk);
    }
    self.parents[0]->accumulate(g);
  });
}

Tensor select(const Tensor& x, Index axis, Index i) {
  return reshape(slice(x, axis, i, 1), strip_axis(x.shape(), axis));
}

Tensor expand(const Tensor& x, Shape shape) {
  if (static_cast<Index>(shape.size()) != x.rank()) {
    throw DimensionError("expand: rank of " + to_string(x.shape()) + " differs from " + to_string(shape));
  }
  const Index r = x.rank();
  for (Index d = 0; d < r; ++d) {
    if (x.shape()[d] != shape[d] && x.shape()[d] != 1) {
      throw DimensionError("expand: cannot expand " + to_string(x.shape()) + " to " + to_string(shape));
    }
  }
  std::vector<Index> stride(static_cast<std::size_t>(r), 0);
  Index acc = 1;
  for (Index d = r - 1; d >= 0; --d) {
    stride[d] = x.shape()[d] == 1 ? 0 : acc;
    acc *= x.shape()[d];
  }
  const Index n = spt::numel(shape);
  std::vector<Index> src(static_cast<std::size_t>(n));
  std::vector<Index> counter(static_cast<std::size_t>(r), 0);
  Index offset = 0;
  for (Index j = 0; j < n; ++j) {
    src[static_cast<std::size_t>(j)] = offset;
    for (Index d = r - 1; d >= 0; --d) {
      ++counter[d];
      offset += stride[d];
      if (counter[d] < shape[d]) break;
      offset -= stride[d] * shape[d];
      counter[d] = 0;
    }
  }
  Eigen::ArrayXd out(n);
  for (Index j = 0; j < n; ++j) out[j] = x.data()[src[static_cast<std::size_t>(j)]];
  return make_result(std::move(shape), std::move(out), "expand", {x.node()}, [src = std::move(src)](Node& self) {
    Eigen::ArrayXd g = Eigen::ArrayXd::Zero(self.parents[0]->value.size());
    for (std::size_t j = 0; j < src.size(); ++j) g[src[j]] += self.grad[static_cast<Index>(j)];
    self.parents[0]->accumulate(g);
  });
}

namespace {

Tensor gather_impl(const Tensor& x, const Index* idx, Index count, Shape out_shape, const char* op) {
  if (x.rank() < 1) throw DimensionError(std::string(op) + ": source must have at least one axis");
  const Index n = x.size(0);
  const Index row = x.numel() / n;
  Eigen::ArrayXd out(count * row);
  for (Index j = 0; j < count; ++j) {
    const Index i = idx[j];
    if (i < 0 || i >= n) {
      throw IndexError(std::string(op) + ": index " + std::to_string(i) + " outside [0, " + std::to_string(n) + ")");
    }
    out.segment(j * row, row) = x.data().segment(i * row, row);
  }
  std::vector<Index> owned(idx, idx + count);
  return make_result(std::move(out_shape), std::move(out), op, {x.node()},
                     [row, owned = std::move(owned)](Node& self) {
                       Eigen::ArrayXd g = Eigen::ArrayXd::Zero(self.parents[0]->value.size());
                       for (std::size_t j = 0; j < owned.size(); ++j) {
                         g.segment(owned[j] * row, row) += self.grad.segment(static_cast<Index>(j) * row, row);
                       }
                       self.parents[0]->accumulate(g);
                     });
}

}  // namespace

Tensor gather(const Tensor& x, const IndexMatrix& idx) {
  Shape shape{idx.rows(), idx.cols()};
  shape.insert(shape.end(), x.shape().begin() + 1, x.shape().end());
  return gather_impl(x, idx.data(), idx.size(), std::move(shape), "gather");
}

Tensor index_rows(const Tensor& x, std::span<const Index> idx) {
  if (idx.empty()) throw CountError("index_rows: empty index list");
  Shape shape{static_cast<Index>(idx.size())};
  shape.insert(shape.end(), x.shape().begin() + 1, x.shape().end());
  return gather_impl(x, idx.data(), static_cast<Index>(idx.size()), std::move(shape), "index_rows");
}

}  // namespace spt
