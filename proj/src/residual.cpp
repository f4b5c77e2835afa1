#include "acrn/residual.hpp"

#include "acrn/errors.hpp"

namespace acrn {

std::string to_string(BlockKind kind) { return kind == BlockKind::kClassic ? "classic" : "accumulated"; }

void BlockSpec::validate() const {
  if (in_channels == 0 || out_channels == 0) throw ConfigError("block channels must be positive");
  if (stride == 1 && out_channels != in_channels) {
    throw ConfigError("stride-1 block must preserve channels (" + std::to_string(in_channels) + " -> " +
                      std::to_string(out_channels) + ")");
  }
  if (stride == 2 && out_channels != 2 * in_channels) {
    throw ConfigError("stride-2 block must double channels (" + std::to_string(in_channels) + " -> " +
                      std::to_string(out_channels) + ")");
  }
  if (stride != 1 && stride != 2) throw ConfigError("block stride must be 1 or 2");
}

// ---------------------------------------------------------------------------
// ResidualAccumulator

namespace {

Shape activation_tag(const Shape& shape) { return Shape(shape.begin() + 1, shape.end()); }

}  // namespace

template <typename T>
bool ResidualAccumulator<T>::absorb(Tape<T>& tape, const Variable<T>& term) {
  if (empty() || activation_tag(term.shape()) != tag_) {
    reinitialize(term);
    return true;
  }
  value_ = ops::add(tape, value_, term);
  ++additions_;
  return false;
}

template <typename T>
void ResidualAccumulator<T>::reinitialize(const Variable<T>& term) {
  value_ = term;
  tag_ = activation_tag(term.shape());
  ++reinitializations_;
}

// ---------------------------------------------------------------------------
// ResidualBlock

namespace {

template <typename T>
Conv2dLayer<T> seeded_conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad,
                           std::uint64_t seed, std::uint64_t index, std::uint64_t layer) {
  auto rng = make_rng(seed, {index, layer});
  return Conv2dLayer<T>(in, out, k, stride, pad, rng);
}

}  // namespace

template <typename T>
ResidualBlock<T>::ResidualBlock(const BlockSpec& spec, std::uint64_t seed, std::uint64_t index)
    : spec_((spec.validate(), spec)),
      conv1_(seeded_conv<T>(spec.in_channels, spec.out_channels, 3, spec.stride, 1, seed, index, 1)),
      bn1_(spec.out_channels),
      conv2_(seeded_conv<T>(spec.out_channels, spec.out_channels, 3, 1, 1, seed, index, 2)),
      bn2_(spec.out_channels) {
  if (spec.changes_shape()) {
    projection_.emplace(seeded_conv<T>(spec.in_channels, spec.out_channels, 1, spec.stride, 0, seed, index, 3));
  }
  if (spec.kind == BlockKind::kAccumulated) accumulator_norm_.emplace(spec.out_channels);
}

template <typename T>
Variable<T> ResidualBlock<T>::residual_branch(Tape<T>& tape, const Variable<T>& x, Mode mode) {
  if (x.value().rank() != 4 || x.shape()[1] != spec_.in_channels) {
    throw ShapeError("residual block expects " + std::to_string(spec_.in_channels) + " input channels, got " +
                     to_string(x.shape()));
  }
  auto h = conv1_.forward(tape, x);
  h = bn1_.forward(tape, h, mode);
  h = ops::relu(tape, h);
  h = conv2_.forward(tape, h);
  return bn2_.forward(tape, h, mode);
}

template <typename T>
Variable<T> ResidualBlock<T>::shortcut(Tape<T>& tape, const Variable<T>& x) const {
  return projection_ ? projection_->forward(tape, x) : x;
}

template <typename T>
std::vector<Parameter<T>> ResidualBlock<T>::named_parameters(const std::string& prefix) const {
  std::vector<Parameter<T>> out;
  auto append = [&out](std::vector<Parameter<T>> more) {
    for (auto& p : more) out.push_back(std::move(p));
  };
  append(conv1_.named_parameters(prefix + ".conv1"));
  append(bn1_.named_parameters(prefix + ".bn1"));
  append(conv2_.named_parameters(prefix + ".conv2"));
  append(bn2_.named_parameters(prefix + ".bn2"));
  if (projection_) append(projection_->named_parameters(prefix + ".projection"));
  if (accumulator_norm_) append(accumulator_norm_->named_parameters(prefix + ".acc_bn"));
  return out;
}

template <typename T>
std::vector<BatchNormLayer<T>*> ResidualBlock<T>::batch_norms() {
  std::vector<BatchNormLayer<T>*> out{&bn1_, &bn2_};
  if (accumulator_norm_) out.push_back(&*accumulator_norm_);
  return out;
}

// ---------------------------------------------------------------------------
// Block forward passes

template <typename T>
Variable<T> classic_block_forward(Tape<T>& tape, const Variable<T>& x, ResidualBlock<T>& block, Mode mode) {
  if (block.spec().kind != BlockKind::kClassic) throw ConfigError("classic_block_forward on an accumulated block");
  const auto f = block.residual_branch(tape, x, mode);
  return ops::relu(tape, ops::add(tape, f, block.shortcut(tape, x)));
}

template <typename T>
AccumulatedStep<T> accumulated_block_forward(Tape<T>& tape, const Variable<T>& x, ResidualAccumulator<T> acc,
                                             ResidualBlock<T>& block, Mode mode) {
  if (block.spec().kind != BlockKind::kAccumulated) {
    throw ConfigError("accumulated_block_forward on a classic block");
  }
  const auto f = block.residual_branch(tape, x, mode);
  const auto s = block.shortcut(tape, x);

  AccumulatedStep<T> step;
  if (block.accumulator_ablated()) {
    step.term = s;
    acc.reinitialize(s);
    step.reinitialized = true;
  } else {
    step.term = block.accumulator_norm().forward(tape, s, mode);
    step.reinitialized = acc.absorb(tape, step.term);
  }
  step.y = ops::relu(tape, ops::add(tape, f, acc.value()));
  step.acc = std::move(acc);
  return step;
}

template class ResidualAccumulator<float>;
template class ResidualAccumulator<double>;
template class ResidualBlock<float>;
template class ResidualBlock<double>;
template Variable<float> classic_block_forward(Tape<float>&, const Variable<float>&, ResidualBlock<float>&, Mode);
template Variable<double> classic_block_forward(Tape<double>&, const Variable<double>&, ResidualBlock<double>&,
                                                Mode);
template AccumulatedStep<float> accumulated_block_forward(Tape<float>&, const Variable<float>&,
                                                          ResidualAccumulator<float>, ResidualBlock<float>&, Mode);
template AccumulatedStep<double> accumulated_block_forward(Tape<double>&, const Variable<double>&,
                                                           ResidualAccumulator<double>, ResidualBlock<double>&,
                                                           Mode);

}  // namespace acrn
