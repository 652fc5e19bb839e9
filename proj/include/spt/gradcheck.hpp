#pragma once

// Finite-difference oracles for every differentiable operation, the surrogate
// spike rule, the neuron dynamics and a micro model end to end.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spt/tensor.hpp"

namespace spt {

// Norm-wise relative error ||a - b|| / max(||a||, ||b||, 1e-12).
double relative_error(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b);

// Largest norm-wise relative error, over the inputs, between the tape
// gradient of the scalar `loss(inputs)` and central differences with the
// given step. Values cut by detach() are held at their unperturbed values.
double finite_difference_check(const std::function<Tensor(std::span<const Tensor>)>& loss,
                               std::vector<Tensor> inputs, double step = 1e-5);

struct GradCheck {
  std::string name;
  double tolerance;
  // Returns the maximal error the check observed for this seed.
  std::function<double(std::uint64_t seed)> run;
};

struct GradCheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Every registered check, each exactly once. With `inject_fault` the
// multiplication check runs against a deliberately wrong backward rule.
std::vector<GradCheck> gradcheck_registry(bool inject_fault = false);

// Runs each check for `trials` seeds starting at `seed`.
std::vector<GradCheckResult> run_gradchecks(const std::vector<GradCheck>& checks, std::uint64_t seed = 0,
                                            int trials = 3);

}  // namespace spt
