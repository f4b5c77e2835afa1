#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "acrn/layers.hpp"

namespace acrn {

enum class BlockKind { kClassic, kAccumulated };

std::string to_string(BlockKind kind);

// One two-convolution residual block. The residual branch F is
// conv3x3(stride) -> BN -> ReLU -> conv3x3 -> BN.
struct BlockSpec {
  std::size_t in_channels = 16;
  std::size_t out_channels = 16;
  std::size_t stride = 1;
  BlockKind kind = BlockKind::kClassic;

  // Shape-changing blocks halve the resolution and double the channels.
  bool changes_shape() const { return stride != 1; }
  void validate() const;
};

// The running sum of batch-normalized shortcut inputs since the last shape
// change. This is the only extra state an accumulated network carries.
template <typename T>
class ResidualAccumulator {
 public:
  bool empty() const { return !value_.defined(); }
  const Variable<T>& value() const { return value_; }
  // (C,H,W) of the accumulated tensors; empty while the accumulator is.
  const Shape& shape_tag() const { return tag_; }
  std::size_t reinitializations() const { return reinitializations_; }
  std::size_t additions() const { return additions_; }

  // Adds `term` to the running sum, or restarts the sum from `term` when the
  // accumulator is empty or the term's (C,H,W) differs from the tag.
  // Returns true on restart.
  bool absorb(Tape<T>& tape, const Variable<T>& term);

  // Restarts from `term` unconditionally.
  void reinitialize(const Variable<T>& term);

 private:
  Variable<T> value_;
  Shape tag_;
  std::size_t reinitializations_ = 0;
  std::size_t additions_ = 0;
};

template <typename T>
class ResidualBlock {
 public:
  // Weights are drawn from make_rng(seed, {index, layer}); blocks with the
  // same spec geometry, seed and index share identical F-path and projection
  // weights regardless of kind.
  ResidualBlock(const BlockSpec& spec, std::uint64_t seed, std::uint64_t index);

  const BlockSpec& spec() const { return spec_; }

  // F(x).
  Variable<T> residual_branch(Tape<T>& tape, const Variable<T>& x, Mode mode);
  // x itself, or the 1x1 strided projection on shape-changing blocks.
  Variable<T> shortcut(Tape<T>& tape, const Variable<T>& x) const;

  Conv2dLayer<T>& conv1() { return conv1_; }
  Conv2dLayer<T>& conv2() { return conv2_; }
  BatchNormLayer<T>& bn1() { return bn1_; }
  BatchNormLayer<T>& bn2() { return bn2_; }
  bool has_projection() const { return projection_.has_value(); }
  Conv2dLayer<T>& projection() { return projection_.value(); }
  bool has_accumulator_norm() const { return accumulator_norm_.has_value(); }
  BatchNormLayer<T>& accumulator_norm() { return accumulator_norm_.value(); }

  // Ablation: the accumulator path degenerates to the plain shortcut, i.e.
  // no batch norm on it and a restart at every block.
  void set_accumulator_ablated(bool ablated) { ablated_ = ablated; }
  bool accumulator_ablated() const { return ablated_; }

  // [k1, g1, b1, k2, g2, b2] + [projection] + [acc gamma, acc beta].
  std::vector<Parameter<T>> named_parameters(const std::string& prefix) const;
  std::vector<Variable<T>> parameters() const { return variables_of(named_parameters("block")); }
  // Batch norms in parameter order, for running-statistics persistence.
  std::vector<BatchNormLayer<T>*> batch_norms();

 private:
  BlockSpec spec_;
  Conv2dLayer<T> conv1_;
  BatchNormLayer<T> bn1_;
  Conv2dLayer<T> conv2_;
  BatchNormLayer<T> bn2_;
  std::optional<Conv2dLayer<T>> projection_;
  std::optional<BatchNormLayer<T>> accumulator_norm_;
  bool ablated_ = false;
};

// y = relu(F(x) + shortcut(x)).
template <typename T>
Variable<T> classic_block_forward(Tape<T>& tape, const Variable<T>& x, ResidualBlock<T>& block, Mode mode);

template <typename T>
struct AccumulatedStep {
  Variable<T> y;
  ResidualAccumulator<T> acc;
  Variable<T> term;  // BN_i(shortcut(x)) folded into acc
  bool reinitialized = false;
};

// acc' = acc + BN_i(s) (or BN_i(s) alone after a shape change), where s is
// the block's shortcut input; y = relu(F(x) + acc').
template <typename T>
AccumulatedStep<T> accumulated_block_forward(Tape<T>& tape, const Variable<T>& x, ResidualAccumulator<T> acc,
                                             ResidualBlock<T>& block, Mode mode);

extern template class ResidualAccumulator<float>;
extern template class ResidualAccumulator<double>;
extern template class ResidualBlock<float>;
extern template class ResidualBlock<double>;

}  // namespace acrn
