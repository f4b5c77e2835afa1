#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "acrn/tensor.hpp"

namespace acrn {

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImageValues = kImageChannels * kImageSide * kImageSide;
inline constexpr std::size_t kCifarRecordBytes = 1 + kImageValues;
inline constexpr std::size_t kCifarRecordsPerFile = 10000;
inline constexpr std::size_t kCifarFileBytes = kCifarRecordBytes * kCifarRecordsPerFile;
inline constexpr int kCifarClasses = 10;

enum class Split { kTrain, kTest };

struct Dataset {
  Tensor images;  // [M,3,32,32], values in [0,1]
  std::vector<int> labels;
  Split split = Split::kTrain;

  std::size_t size() const { return labels.size(); }
  // The first `count` records.
  Dataset head(std::size_t count) const;
  Dataset select(std::span<const std::size_t> indices) const;
  // One image as [3,32,32].
  Tensor image(std::size_t index) const;
};

// Per-channel standardization statistics of a training split.
struct ChannelStats {
  std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
  std::array<float, 3> stddev{1.0f, 1.0f, 1.0f};

  friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

ChannelStats compute_channel_stats(const Dataset& dataset);

// (x - mean_c) / std_c over [N,3,H,W] or [3,H,W]. Throws DataError when a
// channel has zero standard deviation.
Tensor normalize(const Tensor& images, const ChannelStats& stats);

// Parses CIFAR-10 binary records: one label byte, then 1024 R, 1024 G and
// 1024 B bytes, each plane row-major 32x32. Pixels are scaled to [0,1].
Dataset parse_cifar10(std::span<const std::uint8_t> bytes, Split split);

// Reads data_batch_{1..5}.bin and test_batch.bin from `dir`. Every file must
// be exactly kCifarFileBytes long.
std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir);

// Zero-pads [3,32,32] to 40x40, takes the 32x32 window at (offset_y,
// offset_x) in [0,8], then mirrors left-right if requested.
Tensor pad_crop_flip(const Tensor& image, std::size_t offset_y, std::size_t offset_x, bool flip);

// pad_crop_flip with a uniformly drawn offset and a fair coin for the flip.
Tensor augment(const Tensor& image, std::mt19937_64& rng);

// Class-conditional Gaussian blobs over a per-class base color plus pixel
// noise, clamped to [0,1]. Record i has label i % classes.
Dataset synthetic_dataset(std::size_t classes, std::size_t per_class, std::uint64_t seed, float noise = 0.1f);

// Train/test splits drawn from the same class prototypes: the first
// classes*train_per_class records train, the rest test.
std::pair<Dataset, Dataset> synthetic_split(std::size_t classes, std::size_t train_per_class,
                                            std::size_t test_per_class, std::uint64_t seed, float noise = 0.1f);

// Shuffled batching for one epoch.
struct BatchPlan {
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  bool drop_last = false;

  std::vector<std::size_t> permutation(std::size_t records) const;
  std::vector<std::vector<std::size_t>> batches(std::size_t records) const;
};

struct Batch {
  Tensor images;  // normalized [B,3,32,32]
  std::vector<int> labels;
};

// Gathers `indices`, augments each image when `augment_rng` is non-null, then
// normalizes with `stats`.
Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices, const ChannelStats& stats,
                 std::mt19937_64* augment_rng);

}  // namespace acrn
