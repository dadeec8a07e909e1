#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tristream/autodiff.hpp"
#include "tristream/params.hpp"
#include "tristream/tensor.hpp"

namespace tristream::ad {

/// Central differences (f(θ + h e_i) - f(θ - h e_i)) / 2h for every coordinate.
/// Throws NumericError when f returns a non-finite value.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& theta, double h = 1e-5);

/// |a - n| / max(|a|, |n|, floor). The floor keeps components whose true
/// value sits below the finite-difference noise level from reporting
/// roundoff as relative error.
double relative_error(double analytic, double numeric, double floor = 1e-12) noexcept;

struct GradReport {
  struct Entry {
    std::string name;
    std::size_t count = 0;
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
  };

  std::vector<Entry> params;
  double step = 1e-5;
  double tolerance = 1e-4;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::vector<std::string> failing_params;
  /// Ops whose isolated reverse rule disagrees with finite differences;
  /// filled only when the check fails.
  std::vector<std::string> failing_ops;

  bool passed() const noexcept { return failing_params.empty() && max_rel_err <= tolerance; }
  std::string summary() const;
};

/// Builds a scalar loss on a fresh graph from parameters bound via the binder.
using LossBuilder = std::function<Var(Binder&)>;

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Evaluation points closer than this to a relu kink are rejected.
  double kink_margin = 1e-3;
  std::size_t max_nudges = 20;
  /// Denominator floor passed to relative_error.
  double floor = 1e-12;
  /// Called to move the evaluation point (e.g. jitter the inputs) when a relu
  /// pre-activation sits too close to 0. Receives the attempt number.
  std::function<void(std::size_t attempt)> nudge;
  /// Localize failures to individual ops.
  bool localize = true;
};

/// Compares reverse-mode gradients of every parameter in `params` against
/// central finite differences of the same loss.
GradReport gradcheck(const ParamStore& params, const LossBuilder& loss, const GradcheckOptions& options = {});

/// Checks each differentiable op in isolation on small random instances and
/// returns the names of ops whose reverse rule fails.
std::vector<std::string> check_op_rules(double step = 1e-5, double tolerance = 1e-4, std::uint64_t seed = 7);

}  // namespace tristream::ad
