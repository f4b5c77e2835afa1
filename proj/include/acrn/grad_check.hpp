#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "acrn/autodiff.hpp"

namespace acrn {

struct GradCheckInput {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;   // at worst_index
  double numerical = 0.0;  // at worst_index
  std::size_t checked = 0;
  // Elements where probes on both sides moved a ReLU input across zero. When
  // only one side crosses, a second-order one-sided stencil is used instead.
  std::size_t kinks_skipped = 0;
};

struct GradCheckReport {
  std::string name;
  double tol = 0.0;
  bool passed = true;
  std::vector<GradCheckInput> inputs;

  double max_rel_error() const;
};

// Scalar-valued graph over a fixed set of leaves.
using LeafGraph = std::function<Variable<double>(Tape<double>&)>;
// Scalar-valued graph over leaves created from plain tensors.
using GraphBuilder = std::function<Variable<double>(Tape<double>&, std::span<const Variable<double>>)>;

// Relative error used throughout: |a - n| / max(1, |a|, |n|). Gradients below
// unit magnitude are compared absolutely.
double gradient_error(double analytic, double numerical);

inline constexpr double kMaxKinkFraction = 0.05;

// Compares backward() against central differences (f(w+h) - f(w-h)) / 2h for
// every element of every leaf. Leaf values are restored afterwards and their
// gradients are left holding the analytic result. Fails if any checked element
// exceeds tol, a leaf has no checkable element, or more than kMaxKinkFraction of
// all elements had to be skipped.
GradCheckReport grad_check(const LeafGraph& f, std::vector<Variable<double>> leaves, double h = 1e-3,
                           double tol = 1e-4);

GradCheckReport grad_check(const GraphBuilder& f, const std::vector<Tensor64>& inputs, double h = 1e-3,
                           double tol = 1e-4);

}  // namespace acrn
