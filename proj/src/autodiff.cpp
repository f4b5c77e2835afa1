#include "acrn/autodiff.hpp"

#include <atomic>
#include <utility>

#include "acrn/errors.hpp"

namespace acrn {

namespace {
std::atomic<std::uint64_t> g_next_tape_id{1};
}

template <typename T>
Variable<T> Variable<T>::leaf(BasicTensor<T> value, bool requires_grad, std::string name) {
  Variable v;
  v.node_ = std::make_shared<Node>();
  v.node_->value = std::move(value);
  v.node_->requires_grad = requires_grad;
  v.node_->name = std::move(name);
  return v;
}

template <typename T>
BasicTensor<T>& Variable<T>::mutable_value() {
  if (!is_leaf()) throw AutodiffError("only leaf variables may be mutated");
  return node_->value;
}

template <typename T>
const BasicTensor<T>& Variable<T>::grad() const {
  if (!node_->grad) {
    throw AutodiffError("variable '" + node_->name + "' has no gradient");
  }
  return *node_->grad;
}

template <typename T>
void Variable<T>::accumulate_grad(const BasicTensor<T>& g) {
  require_same_shape(node_->value.shape(), g.shape(), "accumulate_grad");
  if (node_->grad) {
    kernels::add_into(*node_->grad, g);
  } else {
    node_->grad = g;
  }
}

template <typename T>
void Variable<T>::zero_grad() {
  if (node_->grad) node_->grad->fill(T{0});
}

template <typename T>
bool GradientMap<T>::contains(const Variable<T>& v) const {
  for (const auto& leaf : leaves_) {
    if (leaf.same_node(v)) return true;
  }
  return false;
}

template <typename T>
const BasicTensor<T>& GradientMap<T>::at(const Variable<T>& v) const {
  for (const auto& leaf : leaves_) {
    if (leaf.same_node(v)) return leaf.grad();
  }
  throw AutodiffError("variable '" + v.name() + "' was not reached by backward()");
}

template <typename T>
Tape<T>::Tape(GradMode mode) : mode_(mode), id_(g_next_tape_id.fetch_add(1)) {}

template <typename T>
void Tape<T>::append_activation_pattern(const BasicTensor<T>& x) {
  if (!track_pattern_) return;
  for (const T v : x.data()) pattern_.push_back(v > T{0});
}

template <typename T>
Variable<T> Tape<T>::record(std::string op, std::vector<Variable<T>> inputs, BasicTensor<T> output,
                            BackwardRule rule) {
  if (consumed_) throw AutodiffError("cannot record '" + op + "' on a consumed tape");
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (mode_ == GradMode::kDisabled || !any) {
    return Variable<T>::leaf(std::move(output), false, std::move(op));
  }
  Variable<T> out;
  out.node_ = std::make_shared<typename Variable<T>::Node>();
  out.node_->value = std::move(output);
  out.node_->requires_grad = true;
  out.node_->tape_id = id_;
  out.node_->name = op;
  records_.push_back(Record{std::move(op), std::move(inputs), out, std::move(rule)});
  return out;
}

template <typename T>
GradientMap<T> Tape<T>::backward(const Variable<T>& loss) {
  if (consumed_) throw AutodiffError("backward() invoked twice on a consumed tape");
  if (!loss.defined()) throw AutodiffError("backward() on an undefined variable");
  if (loss.value().size() != 1 || loss.value().rank() > 1) {
    throw AutodiffError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (loss.node_->tape_id != id_) throw AutodiffError("loss was not produced on this tape");
  consumed_ = true;

  loss.node_->grad = BasicTensor<T>(loss.shape(), T{1});
  GradientMap<T> result;
  std::vector<bool> needs;

  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    auto& node = *it->output.node_;
    if (!node.grad) {
      it->rule = nullptr;
      continue;
    }
    needs.assign(it->inputs.size(), false);
    for (std::size_t i = 0; i < it->inputs.size(); ++i) needs[i] = it->inputs[i].requires_grad();
    InputGrads grads = it->rule(*node.grad, needs);
    ++rules_applied_;
    if (grads.size() != it->inputs.size()) {
      throw AutodiffError("backward rule of '" + it->op + "' returned the wrong number of gradients");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (!needs[i] || !grads[i]) continue;
      auto& input = it->inputs[i];
      input.accumulate_grad(*grads[i]);
      if (input.is_leaf() && !result.contains(input)) result.leaves_.push_back(input);
    }
    if (!node.retain) node.grad.reset();
    // Saved intermediates are no longer needed.
    it->rule = nullptr;
  }
  return result;
}

template <typename T>
std::vector<std::string> Tape<T>::op_names() const {
  std::vector<std::string> names;
  names.reserve(records_.size());
  for (const auto& r : records_) names.push_back(r.op);
  return names;
}

template class Variable<float>;
template class Variable<double>;
template class GradientMap<float>;
template class GradientMap<double>;
template class Tape<float>;
template class Tape<double>;

namespace ops {

template <typename T>
Variable<T> add(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b) {
  return tape.record("add", {a, b}, kernels::add(a.value(), b.value()),
                     [](const BasicTensor<T>& dy, const std::vector<bool>&) {
                       return typename Tape<T>::InputGrads{dy, dy};
                     });
}

template <typename T>
Variable<T> relu(Tape<T>& tape, const Variable<T>& x) {
  tape.append_activation_pattern(x.value());
  return tape.record("relu", {x}, kernels::relu(x.value()),
                     [x](const BasicTensor<T>& dy, const std::vector<bool>&) {
                       return typename Tape<T>::InputGrads{kernels::relu_backward(x.value(), dy)};
                     });
}

template <typename T>
Variable<T> sum(Tape<T>& tape, const Variable<T>& x) {
  const Shape shape = x.shape();
  return tape.record("sum", {x}, BasicTensor<T>::scalar(kernels::sum(x.value())),
                     [shape](const BasicTensor<T>& dy, const std::vector<bool>&) {
                       return typename Tape<T>::InputGrads{BasicTensor<T>(shape, dy[0])};
                     });
}

template <typename T>
Variable<T> weighted_sum(Tape<T>& tape, const Variable<T>& x, const BasicTensor<T>& weights) {
  require_same_shape(x.shape(), weights.shape(), "weighted_sum");
  T total{0};
  for (std::size_t i = 0; i < weights.size(); ++i) total += weights[i] * x.value()[i];
  return tape.record("weighted_sum", {x}, BasicTensor<T>::scalar(total),
                     [weights](const BasicTensor<T>& dy, const std::vector<bool>&) {
                       return typename Tape<T>::InputGrads{kernels::scale(weights, dy[0])};
                     });
}

template <typename T>
Variable<T> conv2d(Tape<T>& tape, const Variable<T>& x, const Variable<T>& kernel,
                   kernels::Conv2dGeometry geom) {
  return tape.record("conv2d", {x, kernel}, kernels::conv2d(x.value(), kernel.value(), geom),
                     [x, kernel, geom](const BasicTensor<T>& dy, const std::vector<bool>& needs) {
                       typename Tape<T>::InputGrads g(2);
                       if (needs[0]) g[0] = kernels::conv2d_grad_input(dy, kernel.value(), x.shape(), geom);
                       if (needs[1]) g[1] = kernels::conv2d_grad_kernel(x.value(), dy, kernel.shape(), geom);
                       return g;
                     });
}

template <typename T>
Variable<T> global_avg_pool(Tape<T>& tape, const Variable<T>& x) {
  const Shape shape = x.shape();
  return tape.record("global_avg_pool", {x}, kernels::global_avg_pool(x.value()),
                     [shape](const BasicTensor<T>& dy, const std::vector<bool>&) {
                       return typename Tape<T>::InputGrads{kernels::global_avg_pool_backward(dy, shape)};
                     });
}

template <typename T>
Variable<T> matmul(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b) {
  return tape.record("matmul", {a, b}, kernels::matmul(a.value(), b.value()),
                     [a, b](const BasicTensor<T>& dy, const std::vector<bool>& needs) {
                       typename Tape<T>::InputGrads g(2);
                       if (needs[0]) g[0] = kernels::matmul(dy, b.value(), false, true);
                       if (needs[1]) g[1] = kernels::matmul(a.value(), dy, true, false);
                       return g;
                     });
}

template <typename T>
Variable<T> dense(Tape<T>& tape, const Variable<T>& x, const Variable<T>& weight, const Variable<T>& bias) {
  if (x.value().rank() != 2 || weight.value().rank() != 2 || bias.value().rank() != 1 ||
      x.shape()[1] != weight.shape()[1] || bias.shape()[0] != weight.shape()[0]) {
    throw ShapeError("dense: incompatible shapes x " + to_string(x.shape()) + " weight " +
                     to_string(weight.shape()) + " bias " + to_string(bias.shape()));
  }
  BasicTensor<T> out = kernels::matmul(x.value(), weight.value(), false, true);
  const std::size_t n = out.dim(0), units = out.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < units; ++j) out(i, j) += bias.value()[j];
  }
  return tape.record("dense", {x, weight, bias}, std::move(out),
                     [x, weight, n, units](const BasicTensor<T>& dy, const std::vector<bool>& needs) {
                       typename Tape<T>::InputGrads g(3);
                       if (needs[0]) g[0] = kernels::matmul(dy, weight.value(), false, false);
                       if (needs[1]) g[1] = kernels::matmul(dy, x.value(), true, false);
                       if (needs[2]) {
                         BasicTensor<T> db(Shape{units});
                         for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t j = 0; j < units; ++j) db[j] += dy(i, j);
                         }
                         g[2] = std::move(db);
                       }
                       return g;
                     });
}

#define ACRN_INSTANTIATE_OPS(T)                                                                          \
  template Variable<T> add(Tape<T>&, const Variable<T>&, const Variable<T>&);                            \
  template Variable<T> relu(Tape<T>&, const Variable<T>&);                                               \
  template Variable<T> sum(Tape<T>&, const Variable<T>&);                                                \
  template Variable<T> weighted_sum(Tape<T>&, const Variable<T>&, const BasicTensor<T>&);                \
  template Variable<T> conv2d(Tape<T>&, const Variable<T>&, const Variable<T>&, kernels::Conv2dGeometry); \
  template Variable<T> global_avg_pool(Tape<T>&, const Variable<T>&);                                    \
  template Variable<T> matmul(Tape<T>&, const Variable<T>&, const Variable<T>&);                         \
  template Variable<T> dense(Tape<T>&, const Variable<T>&, const Variable<T>&, const Variable<T>&);

ACRN_INSTANTIATE_OPS(float)
ACRN_INSTANTIATE_OPS(double)

#undef ACRN_INSTANTIATE_OPS

}  // namespace ops

}  // namespace acrn
