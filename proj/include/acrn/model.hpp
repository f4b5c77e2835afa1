#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "acrn/data.hpp"
#include "acrn/layers.hpp"
#include "acrn/residual.hpp"

namespace acrn {

enum class Variant { kClassic, kAccumulated };

std::string to_string(Variant variant);
// "classic" or "accumulated"; throws ConfigError otherwise.
Variant parse_variant(std::string_view text);

// CIFAR network of depth 6n+2: stem conv, three stages of n blocks at
// 16/32/64 channels, global average pool, dense classifier.
struct ModelSpec {
  std::size_t depth = 32;
  Variant variant = Variant::kClassic;
  std::size_t num_classes = 10;
  std::array<std::size_t, 3> stage_channels{16, 32, 64};

  std::size_t blocks_per_stage() const { return (depth - 2) / 6; }
  std::size_t total_blocks() const { return 3 * blocks_per_stage(); }
  // Throws ConfigError unless depth = 6n+2 with n >= 1.
  void validate() const;
  std::vector<BlockSpec> block_specs() const;
};

// Per-block record of one forward pass, for instrumentation and tests.
struct BlockTrace {
  Variable<float> input;
  Variable<float> term;         // accumulated variant: BN_i(shortcut)
  Variable<float> accumulator;  // accumulated variant: value after this block
  Variable<float> output;
  bool reinitialized = false;
};

struct ForwardTrace {
  Variable<float> stem_output;
  std::vector<BlockTrace> blocks;
  std::size_t reinitializations = 0;
};

class Model {
 public:
  // Deterministic under `seed`; both variants built from the same seed share
  // every parameter they have in common.
  Model(const ModelSpec& spec, std::uint64_t seed);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  // Deep copy of all parameters, running statistics and input statistics.
  Model clone() const;

  const ModelSpec& spec() const { return spec_; }

  // x: [N,3,32,32] -> logits [N,num_classes]. The accumulated variant starts
  // each call with an empty accumulator.
  Variable<float> forward(Tape<float>& tape, const Variable<float>& x, Mode mode, ForwardTrace* trace = nullptr);

  std::vector<Parameter<float>> named_parameters() const;
  std::vector<Variable<float>> parameters() const { return variables_of(named_parameters()); }
  std::size_t parameter_count() const;

  // Every batch norm, in parameter-registry order.
  std::vector<BatchNormLayer<float>*> batch_norms();
  std::vector<const BatchNormLayer<float>*> batch_norms() const;

  Conv2dLayer<float>& stem_conv() { return stem_conv_; }
  BatchNormLayer<float>& stem_bn() { return stem_bn_; }
  std::vector<ResidualBlock<float>>& blocks() { return blocks_; }
  const std::vector<ResidualBlock<float>>& blocks() const { return blocks_; }
  DenseLayer<float>& head() { return head_; }

  // Standardization applied to raw images before forward().
  const ChannelStats& input_stats() const { return input_stats_; }
  void set_input_stats(const ChannelStats& stats) { input_stats_ = stats; }

 private:
  ModelSpec spec_;
  Conv2dLayer<float> stem_conv_;
  BatchNormLayer<float> stem_bn_;
  std::vector<ResidualBlock<float>> blocks_;
  DenseLayer<float> head_;
  ChannelStats input_stats_;
};

// Weight file: "ACRN", u32 version, u32 depth, u32 variant, u32 num_classes,
// then tensors as (u32 rank, u32 dims[rank], f32 payload), little-endian.
// Tensor order: parameters in registry order, then running mean and running
// variance of every batch norm, then the input mean and std ([3] each).
inline constexpr std::uint32_t kWeightFormatVersion = 1;

void save_weights(const Model& model, const std::filesystem::path& path);

// Throws DataError on bad magic, version, header, tensor shape, truncation
// or trailing bytes. Never returns a partially loaded model.
Model load_weights(const std::filesystem::path& path);
// Additionally requires the file's depth and variant to match `expected`.
Model load_weights(const std::filesystem::path& path, const ModelSpec& expected);

}  // namespace acrn
