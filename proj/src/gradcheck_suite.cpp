#include "acrn/gradcheck_suite.hpp"

#include <functional>

#include "acrn/errors.hpp"
#include "acrn/layers.hpp"
#include "acrn/random.hpp"
#include "acrn/residual.hpp"

namespace acrn {

namespace {

using Checker = std::function<GradCheckReport(std::uint64_t, double, double)>;

Tensor64 randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  return Tensor64::randn(std::move(shape), rng, stddev);
}

// Values whose magnitude is at least `floor`, so no ReLU kink lies within h.
Tensor64 away_from_zero(Shape shape, std::mt19937_64& rng, double floor) {
  Tensor64 t = randn(std::move(shape), rng);
  for (auto& v : t.data()) v = v >= 0 ? v + floor : v - floor;
  return t;
}

void perturb_affine(BatchNormLayer<double>& bn, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 0.2);
  for (auto& g : bn.gamma().mutable_value().data()) g = 1.0 + noise(rng);
  for (auto& b : bn.beta().mutable_value().data()) b = noise(rng);
}

void perturb_block(ResidualBlock<double>& block, std::mt19937_64& rng) {
  for (auto* bn : block.batch_norms()) perturb_affine(*bn, rng);
}

// Leaves plus display names for the report.
struct LeafSet {
  std::vector<Variable<double>> vars;
  std::vector<std::string> names;

  void add(const Variable<double>& v, std::string name) {
    vars.push_back(v);
    names.push_back(std::move(name));
  }
  void add(const std::vector<Parameter<double>>& params) {
    for (const auto& p : params) add(p.var, p.name);
  }
  GradCheckReport check(const LeafGraph& f, double h, double tol) const {
    auto report = grad_check(f, vars, h, tol);
    for (std::size_t i = 0; i < names.size(); ++i) report.inputs[i].name = names[i];
    return report;
  }
};

GradCheckReport named(GradCheckReport report, std::string name) {
  report.name = std::move(name);
  return report;
}

GradCheckReport check_conv2d(std::uint64_t seed, double h, double tol) {
  auto rng = make_rng(seed, {1});
  const Tensor64 weights = randn(Shape{2, 4, 4, 4}, rng);
  return grad_check(
      [&](Tape<double>& tape, std::span<const Variable<double>> in) {
        return ops::weighted_sum(tape, ops::conv2d(tape, in[0], in[1], {2, 1}), weights);
      },
      {randn(Shape{2, 3, 7, 7}, rng), randn(Shape{4, 3, 3, 3}, rng, 0.5)}, h, tol);
}

GradCheckReport check_relu(std::uint64_t seed, double h, double tol) {
  auto rng = make_rng(seed, {2});
  const Tensor64 weights = randn(Shape{3, 5}, rng);
  return grad_check(
      [&](Tape<double>& tape, std::span<const Variable<double>> in) {
        return ops::weighted_sum(tape, ops::relu(tape, in[0]), weights);
      },
      {away_from_zero(Shape{3, 5}, rng, 0.05)}, h, tol);
}

GradCheckReport check_global_avg_pool(std::uint64_t seed, double h, double tol) {
  auto rng = make_rng(seed, {3});
  const Tensor64 weights = randn(Shape{2, 3}, rng);
  return grad_check(
      [&](Tape<double>& tape, std::span<const Variable<double>> in) {
        return ops::weighted_sum(tape, ops::global_avg_pool(tape, in[0]), weights);
      },
      {randn(Shape{2, 3, 5, 4}, rng)}, h, tol);
}

GradCheckReport check_batchnorm(std::uint64_t seed, double h, double tol, Mode mode) {
  auto rng = make_rng(seed, {4});
  BatchNormLayer<double> bn(3);
  perturb_affine(bn, rng);
  if (mode == Mode::kInference) {
    for (auto& m : bn.running_mean().data()) m = 0.3;
    for (auto& v : bn.running_var().data()) v = 1.7;
  }
  const Tensor64 weights = randn(Shape{4, 3, 4, 4}, rng);
  auto x = Variable<double>::leaf(randn(Shape{4, 3, 4, 4}, rng, 2.0), true, "x");
  LeafSet leaves;
  leaves.add(x, "x");
  leaves.add(bn.named_parameters("bn"));
  return leaves.check([&](Tape<double>& tape) { return ops::weighted_sum(tape, bn.forward(tape, x, mode), weights); },
                      h, tol);
}

GradCheckReport check_dense(std::uint64_t seed, double h, double tol) {
  auto rng = make_rng(seed, {5});
  DenseLayer<double> dense(6, 5, rng);
  for (auto& b : dense.bias().mutable_value().data()) b = 0.1 * std::normal_distribution<double>()(rng);
  const Tensor64 weights = randn(Shape{4, 5}, rng);
  auto x = Variable<double>::leaf(randn(Shape{4, 6}, rng), true, "x");
  LeafSet leaves;
  leaves.add(x, "x");
  leaves.add(dense.named_parameters("dense"));
  return leaves.check([&](Tape<double>& tape) { return ops::weighted_sum(tape, dense.forward(tape, x), weights); }, h,
                      tol);
}

GradCheckReport check_softmax_cross_entropy(std::uint64_t seed, double h, double tol) {
  auto rng = make_rng(seed, {6});
  std::uniform_int_distribution<int> label(0, 9);
  std::vector<int> labels(4);
  for (auto& l : labels) l = label(rng);
  return grad_check(
      [&](Tape<double>& tape, std::span<const Variable<double>> in) {
        return softmax_cross_entropy(tape, in[0], labels);
      },
      {randn(Shape{4, 10}, rng, 2.0)}, h, tol);
}

GradCheckReport check_classic_block(std::uint64_t seed, double h, double tol, bool projection) {
  auto rng = make_rng(seed, {projection ? 8u : 7u});
  const BlockSpec spec{4, projection ? 8u : 4u, projection ? 2u : 1u, BlockKind::kClassic};
  ResidualBlock<double> block(spec, seed, 1);
  perturb_block(block, rng);
  auto x = Variable<double>::leaf(randn(Shape{2, 4, 6, 6}, rng), true, "x");
  auto probe = [&](Tape<double>& tape) { return classic_block_forward(tape, x, block, Mode::kTraining); };
  const Tensor64 weights = [&] {
    Tape<double> tape(GradMode::kDisabled);
    return randn(probe(tape).shape(), rng);
  }();
  LeafSet leaves;
  leaves.add(x, "x");
  leaves.add(block.named_parameters("block"));
  return leaves.check([&](Tape<double>& tape) { return ops::weighted_sum(tape, probe(tape), weights); }, h, tol);
}

// A stack of accumulated blocks sharing one accumulator.
GradCheckReport check_accumulated_stack(std::uint64_t seed, double h, double tol, bool stage_transition) {
  auto rng = make_rng(seed, {stage_transition ? 10u : 9u});
  std::vector<BlockSpec> specs;
  if (stage_transition) {
    specs = {{4, 4, 1, BlockKind::kAccumulated}, {4, 8, 2, BlockKind::kAccumulated}, {8, 8, 1, BlockKind::kAccumulated}};
  } else {
    specs = {{4, 4, 1, BlockKind::kAccumulated}, {4, 4, 1, BlockKind::kAccumulated}};
  }
  std::vector<ResidualBlock<double>> blocks;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    blocks.emplace_back(specs[i], seed, i + 1);
    perturb_block(blocks.back(), rng);
  }
  auto x = Variable<double>::leaf(randn(Shape{4, 4, 4, 4}, rng), true, "x");
  auto probe = [&](Tape<double>& tape) {
    ResidualAccumulator<double> acc;
    Variable<double> h_var = x;
    for (auto& block : blocks) {
      auto step = accumulated_block_forward(tape, h_var, std::move(acc), block, Mode::kTraining);
      acc = std::move(step.acc);
      h_var = step.y;
    }
    return h_var;
  };
  const Tensor64 weights = [&] {
    Tape<double> tape(GradMode::kDisabled);
    return randn(probe(tape).shape(), rng);
  }();
  LeafSet leaves;
  leaves.add(x, "x");
  for (std::size_t i = 0; i < blocks.size(); ++i) leaves.add(blocks[i].named_parameters("block" + std::to_string(i + 1)));
  return leaves.check([&](Tape<double>& tape) { return ops::weighted_sum(tape, probe(tape), weights); }, h, tol);
}

const std::vector<std::pair<std::string, Checker>>& registry() {
  static const std::vector<std::pair<std::string, Checker>> checks = {
      {"conv2d", check_conv2d},
      {"relu", check_relu},
      {"global_avg_pool", check_global_avg_pool},
      {"batchnorm", [](auto s, auto h, auto t) { return check_batchnorm(s, h, t, Mode::kTraining); }},
      {"batchnorm_inference", [](auto s, auto h, auto t) { return check_batchnorm(s, h, t, Mode::kInference); }},
      {"dense", check_dense},
      {"softmax_cross_entropy", check_softmax_cross_entropy},
      {"classic_block", [](auto s, auto h, auto t) { return check_classic_block(s, h, t, false); }},
      {"classic_projection_block", [](auto s, auto h, auto t) { return check_classic_block(s, h, t, true); }},
      {"accumulated_stack", [](auto s, auto h, auto t) { return check_accumulated_stack(s, h, t, false); }},
      {"accumulated_stage_transition",
       [](auto s, auto h, auto t) { return check_accumulated_stack(s, h, t, true); }},
  };
  return checks;
}

}  // namespace

std::vector<std::string> gradcheck_names() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : registry()) names.push_back(name);
  return names;
}

GradCheckReport run_gradcheck(std::string_view name, std::uint64_t seed, double h, double tol) {
  for (const auto& [check_name, fn] : registry()) {
    if (check_name == name) return named(fn(seed, h, tol), check_name);
  }
  throw ConfigError("unknown gradient check '" + std::string(name) + "'");
}

}  // namespace acrn
