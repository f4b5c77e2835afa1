#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "acrn/kernels.hpp"
#include "acrn/tensor.hpp"

namespace acrn {

template <typename T>
class Tape;

// Handle to a value in the computation graph. Copies share the same node, so
// gradients accumulated through one handle are visible through all of them.
template <typename T>
class Variable {
 public:
  Variable() = default;

  // A graph leaf (parameter or input); it has no producing record.
  static Variable leaf(BasicTensor<T> value, bool requires_grad = true, std::string name = {});

  bool defined() const { return node_ != nullptr; }
  const BasicTensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  // Only leaves may be mutated (optimizer updates, test fixtures).
  BasicTensor<T>& mutable_value();

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->tape_id == 0; }
  const std::string& name() const { return node_->name; }

  bool has_grad() const { return node_->grad.has_value(); }
  // Throws AutodiffError when no gradient has been materialized.
  const BasicTensor<T>& grad() const;
  void accumulate_grad(const BasicTensor<T>& g);
  // Keeps the gradient buffer but fills it with zeros.
  void zero_grad();
  void clear_grad() { node_->grad.reset(); }
  // Non-leaf gradients are dropped once consumed by backward() unless retained.
  void retain_grad() { node_->retain = true; }

  bool same_node(const Variable& other) const { return node_ == other.node_; }

 private:
  struct Node {
    BasicTensor<T> value;
    std::optional<BasicTensor<T>> grad;
    bool requires_grad = false;
    bool retain = false;
    std::uint64_t tape_id = 0;  // 0 for leaves
    std::string name;
  };
  std::shared_ptr<Node> node_;

  friend class Tape<T>;
};

// Leaves reached by backward(), each mapped to its accumulated gradient.
template <typename T>
class GradientMap {
 public:
  bool contains(const Variable<T>& v) const;
  const BasicTensor<T>& at(const Variable<T>& v) const;
  std::size_t size() const { return leaves_.size(); }
  const std::vector<Variable<T>>& leaves() const { return leaves_; }

 private:
  std::vector<Variable<T>> leaves_;
  friend class Tape<T>;
};

enum class GradMode { kEnabled, kDisabled };

// Records operations in evaluation order and replays their backward rules in
// reverse. One tape per forward/backward pass; backward() consumes it.
template <typename T>
class Tape {
 public:
  // One entry per recorded input; entries for inputs with needs[i] == false
  // may be left empty.
  using InputGrads = std::vector<std::optional<BasicTensor<T>>>;
  using BackwardRule = std::function<InputGrads(const BasicTensor<T>& grad_out, const std::vector<bool>& needs)>;

  explicit Tape(GradMode mode = GradMode::kEnabled);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Appends a record producing `output` from `inputs`. When gradients are
  // disabled, or no input requires them, the output is returned as a constant
  // and nothing is stored.
  Variable<T> record(std::string op, std::vector<Variable<T>> inputs, BasicTensor<T> output,
                     BackwardRule rule);

  GradientMap<T> backward(const Variable<T>& loss);

  bool grad_enabled() const { return mode_ == GradMode::kEnabled; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return records_.size(); }
  std::size_t rules_applied() const { return rules_applied_; }
  std::vector<std::string> op_names() const;

  // When enabled, non-smooth ops append one bit per element recording which
  // side of their kink each input lies on. Recorded in both grad modes.
  void track_activation_pattern(bool on) { track_pattern_ = on; }
  bool tracking_activation_pattern() const { return track_pattern_; }
  void append_activation_pattern(const BasicTensor<T>& x);
  const std::vector<bool>& activation_pattern() const { return pattern_; }

 private:
  struct Record {
    std::string op;
    std::vector<Variable<T>> inputs;
    Variable<T> output;
    BackwardRule rule;
  };

  GradMode mode_;
  std::uint64_t id_;
  bool consumed_ = false;
  std::size_t rules_applied_ = 0;
  std::vector<Record> records_;
  bool track_pattern_ = false;
  std::vector<bool> pattern_;
};

extern template class Variable<float>;
extern template class Variable<double>;
extern template class GradientMap<float>;
extern template class GradientMap<double>;
extern template class Tape<float>;
extern template class Tape<double>;

// Differentiable wrappers over the raw kernels.
namespace ops {

template <typename T>
Variable<T> add(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b);

template <typename T>
Variable<T> relu(Tape<T>& tape, const Variable<T>& x);

// Rank-0 sum of all elements.
template <typename T>
Variable<T> sum(Tape<T>& tape, const Variable<T>& x);

// Rank-0 sum of weights[i] * x[i]; weights are constants.
template <typename T>
Variable<T> weighted_sum(Tape<T>& tape, const Variable<T>& x, const BasicTensor<T>& weights);

template <typename T>
Variable<T> conv2d(Tape<T>& tape, const Variable<T>& x, const Variable<T>& kernel,
                   kernels::Conv2dGeometry geom);

template <typename T>
Variable<T> global_avg_pool(Tape<T>& tape, const Variable<T>& x);

template <typename T>
Variable<T> matmul(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b);

// x [N,in], weight [out,in], bias [out] -> x * weight^T + bias
template <typename T>
Variable<T> dense(Tape<T>& tape, const Variable<T>& x, const Variable<T>& weight, const Variable<T>& bias);

}  // namespace ops

}  // namespace acrn
