#pragma once

// Dense row-major tensors of doubles with a reverse-mode gradient tape.
//
// Every operation that receives at least one tensor requiring gradients (and
// runs while gradient recording is enabled) links its result to its inputs
// together with a backward rule. Calling backward() on a scalar result orders
// the reachable nodes topologically and replays the rules in reverse.
//
// Broadcasting is limited to trailing-dimension expansion: in add/sub/mul the
// second operand's shape must equal a suffix of the first operand's shape.
// Every other mismatch raises DimensionError.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spt/errors.hpp"

namespace spt {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using IndexMatrix = Eigen::Array<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  Eigen::ArrayXd value;
  Eigen::ArrayXd grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  void accumulate(Eigen::ArrayXd g);  // no-op unless requires_grad
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, Eigen::ArrayXd data);

  static Tensor scalar(double value);
  static Tensor parameter(Shape shape, Eigen::ArrayXd data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index size(Index axis) const;
  Index numel() const { return node_->value.size(); }

  const Eigen::ArrayXd& data() const { return node_->value; }
  // Direct write access for optimizers and test fixtures. Does not record.
  Eigen::ArrayXd& mutable_data() { return node_->value; }
  double item() const;
  double at(std::initializer_list<Index> idx) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return node_->grad.size() > 0; }
  // Gradient buffer; zeros when nothing has been accumulated yet.
  const Eigen::ArrayXd& grad() const;
  void zero_grad();

  // Same values, cut from the tape.
  Tensor detach() const;

  // Accumulates dself/dleaf into every reachable leaf that requires grad.
  // Requires a single-element tensor.
  void backward() const;

  const char* op_name() const { return node_->op; }

  // Internal: used by operation implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Thread-local switch for tape recording.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Finite-difference support. While a DetachTapeScope is active, detach()
// records every value it cuts from the tape; with `replay` set, the same
// sequence of detach() calls returns the recorded values instead. Perturbed
// re-evaluations then treat stop-gradient inputs as the constants the tape
// assumes them to be.
struct DetachTape {
  std::vector<Eigen::ArrayXd> values;
  std::size_t cursor = 0;
  bool replay = false;
};

class DetachTapeScope {
 public:
  explicit DetachTapeScope(DetachTape& tape);
  ~DetachTapeScope();
  DetachTapeScope(const DetachTapeScope&) = delete;
  DetachTapeScope& operator=(const DetachTapeScope&) = delete;

 private:
  DetachTape* previous_;
};

// ---- surrogate spike nonlinearity ----

enum class SurrogateKind { Atan };

struct SurrogateSpec {
  SurrogateKind kind = SurrogateKind::Atan;
  double alpha = 2.0;

  // alpha / (2 (1 + (pi/2 alpha x)^2))
  double derivative(double x) const;
  // 1/pi atan(pi/2 alpha x) + 1/2, the primitive of derivative().
  double primitive(double x) const;
};

// Forward behaviour of spike(). Smooth replaces the Heaviside step by the
// surrogate primitive so that finite differences see the same derivative the
// backward rule uses. Only gradient checks switch it.
enum class SpikeForward { Heaviside, Smooth };

SpikeForward spike_forward_mode();

class SmoothSpikeGuard {
 public:
  SmoothSpikeGuard();
  ~SmoothSpikeGuard();
  SmoothSpikeGuard(const SmoothSpikeGuard&) = delete;
  SmoothSpikeGuard& operator=(const SmoothSpikeGuard&) = delete;

 private:
  SpikeForward previous_;
};

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

// Forward: 1 where h - v_th >= 0 else 0. Backward: surrogate derivative at h - v_th.
Tensor spike(const Tensor& h, double v_th, const SurrogateSpec& s = {});

// ---- reductions ----

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, Index axis);
Tensor mean_axis(const Tensor& x, Index axis);
// Maximum along axis; gradient flows to the first maximal element.
Tensor max_axis(const Tensor& x, Index axis);
Tensor softmax(const Tensor& x, Index axis);

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b);
// x[..., in] * w[in, out] + b[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Per-channel normalization of x[rows, C] with batch statistics.
// Writes the batch mean and biased variance to the optional outputs.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  Eigen::ArrayXd* batch_mean = nullptr, Eigen::ArrayXd* batch_var = nullptr);

// Mean softmax cross-entropy of logits[B, K] against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const Index> labels);

// ---- shape ----

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const Index> order);
Tensor concat(std::span<const Tensor> xs, Index axis);
Tensor stack(std::span<const Tensor> xs, Index axis);
Tensor slice(const Tensor& x, Index axis, Index start, Index length);
// slice of length 1 with the axis removed
Tensor select(const Tensor& x, Index axis, Index i);
// Repeats size-1 axes of x up to shape (ranks must agree).
Tensor expand(const Tensor& x, Shape shape);

// x[n, ...] gathered by idx[m, k] -> [m, k, ...]; gradients scatter-add.
Tensor gather(const Tensor& x, const IndexMatrix& idx);
// x[n, ...] rows picked by idx -> [len(idx), ...]
Tensor index_rows(const Tensor& x, std::span<const Index> idx);

}  // namespace spt
