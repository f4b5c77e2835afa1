#include "acrn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "acrn/errors.hpp"

namespace acrn {

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& in : inputs) worst = std::max(worst, in.max_rel_error);
  return worst;
}

double gradient_error(double analytic, double numerical) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numerical)});
  return std::abs(analytic - numerical) / denom;
}

namespace {

struct Probe {
  double value;
  std::vector<bool> pattern;
};

Probe evaluate(const LeafGraph& f) {
  Tape<double> tape(GradMode::kDisabled);
  tape.track_activation_pattern(true);
  const Variable<double> out = f(tape);
  if (out.value().size() != 1) throw AutodiffError("grad_check: graph must produce a scalar");
  return {out.value()[0], tape.activation_pattern()};
}

}  // namespace

GradCheckReport grad_check(const LeafGraph& f, std::vector<Variable<double>> leaves, double h, double tol) {
  GradCheckReport report;
  report.tol = tol;

  for (auto& leaf : leaves) leaf.clear_grad();
  {
    Tape<double> tape;
    const Variable<double> loss = f(tape);
    tape.backward(loss);
  }
  const Probe base = evaluate(f);
  std::size_t total = 0;
  std::size_t skipped = 0;

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    GradCheckInput entry;
    entry.name = leaf.name().empty() ? "input" + std::to_string(li) : leaf.name();
    const Tensor64 analytic = leaf.has_grad() ? leaf.grad() : Tensor64(leaf.shape());
    auto& value = leaf.mutable_value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      const auto at = [&](double offset) {
        value[i] = saved + offset;
        Probe p = evaluate(f);
        value[i] = saved;
        return p;
      };
      const Probe plus = at(h);
      const Probe minus = at(-h);
      const bool plus_smooth = plus.pattern == base.pattern;
      const bool minus_smooth = minus.pattern == base.pattern;
      // A probe across a ReLU kink differences two linear pieces. Fall back to
      // the second-order one-sided stencil on the side that stays smooth.
      double numerical = 0.0;
      if (plus_smooth && minus_smooth) {
        numerical = (plus.value - minus.value) / (2.0 * h);
      } else {
        const double side = plus_smooth ? 1.0 : -1.0;
        const Probe& near = plus_smooth ? plus : minus;
        const Probe far = (plus_smooth || minus_smooth) ? at(2.0 * side * h) : Probe{};
        if (!(plus_smooth || minus_smooth) || far.pattern != base.pattern) {
          ++entry.kinks_skipped;
          continue;
        }
        numerical = side * (-3.0 * base.value + 4.0 * near.value - far.value) / (2.0 * h);
      }
      double err = gradient_error(analytic[i], numerical);
      if (std::isnan(err)) err = std::numeric_limits<double>::infinity();
      if (entry.checked++ == 0 || err > entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.worst_index = i;
        entry.analytic = analytic[i];
        entry.numerical = numerical;
      }
    }
    if (!(entry.max_rel_error < tol) || entry.checked == 0) report.passed = false;
    total += value.size();
    skipped += entry.kinks_skipped;
    report.inputs.push_back(std::move(entry));
  }
  if (static_cast<double>(skipped) > kMaxKinkFraction * static_cast<double>(total)) report.passed = false;
  return report;
}

GradCheckReport grad_check(const GraphBuilder& f, const std::vector<Tensor64>& inputs, double h, double tol) {
  std::vector<Variable<double>> leaves;
  leaves.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    leaves.push_back(Variable<double>::leaf(inputs[i], true, "input" + std::to_string(i)));
  }
  return grad_check([&](Tape<double>& tape) { return f(tape, leaves); }, leaves, h, tol);
}

}  // namespace acrn
