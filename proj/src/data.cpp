#include "acrn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>

#include "acrn/errors.hpp"
#include "acrn/random.hpp"

namespace acrn {

namespace {

constexpr std::size_t kPad = 4;
constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::size_t kPlane = kImageSide * kImageSide;

void copy_image(const Tensor& src, std::size_t src_index, Tensor& dst, std::size_t dst_index) {
  std::memcpy(dst.raw() + dst_index * kImageValues, src.raw() + src_index * kImageValues,
              kImageValues * sizeof(float));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  if (size != 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw DataError("failed to read " + path.string());
  }
  return bytes;
}

void parse_records(std::span<const std::uint8_t> bytes, Tensor& images, std::vector<int>& labels,
                   std::size_t first_record) {
  const std::size_t records = bytes.size() / kCifarRecordBytes;
  for (std::size_t r = 0; r < records; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] >= kCifarClasses) {
      throw DataError("record " + std::to_string(r) + " has label byte " + std::to_string(rec[0]) + " > 9");
    }
    labels[first_record + r] = rec[0];
    float* dst = images.raw() + (first_record + r) * kImageValues;
    for (std::size_t i = 0; i < kImageValues; ++i) dst[i] = static_cast<float>(rec[1 + i]) / 255.0f;
  }
}

Dataset load_split(const std::filesystem::path& dir, const std::vector<std::string>& names, Split split) {
  Dataset out;
  out.split = split;
  out.images = Tensor(Shape{names.size() * kCifarRecordsPerFile, kImageChannels, kImageSide, kImageSide});
  out.labels.assign(names.size() * kCifarRecordsPerFile, 0);
  for (std::size_t f = 0; f < names.size(); ++f) {
    const auto path = dir / names[f];
    if (!std::filesystem::exists(path)) throw DataError("missing CIFAR-10 file " + path.string());
    const auto bytes = read_file(path);
    if (bytes.size() != kCifarFileBytes) {
      throw DataError(path.string() + " has " + std::to_string(bytes.size()) + " bytes, expected exactly " +
                      std::to_string(kCifarFileBytes));
    }
    parse_records(bytes, out.images, out.labels, f * kCifarRecordsPerFile);
  }
  return out;
}

}  // namespace

Dataset Dataset::head(std::size_t count) const {
  std::vector<std::size_t> idx(std::min(count, size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return select(idx);
}

Dataset Dataset::select(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw DataError("cannot select an empty subset");
  Dataset out;
  out.split = split;
  out.images = Tensor(Shape{indices.size(), kImageChannels, kImageSide, kImageSide});
  out.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw DataError("record index " + std::to_string(indices[i]) + " out of range");
    copy_image(images, indices[i], out.images, i);
    out.labels[i] = labels[indices[i]];
  }
  return out;
}

Tensor Dataset::image(std::size_t index) const {
  Tensor out(Shape{kImageChannels, kImageSide, kImageSide});
  std::memcpy(out.raw(), images.raw() + index * kImageValues, kImageValues * sizeof(float));
  return out;
}

ChannelStats compute_channel_stats(const Dataset& dataset) {
  ChannelStats stats;
  const std::size_t m = dataset.size();
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    double total = 0.0;
    for (std::size_t n = 0; n < m; ++n) {
      const float* plane = dataset.images.raw() + n * kImageValues + c * kPlane;
      for (std::size_t k = 0; k < kPlane; ++k) total += plane[k];
    }
    const double count = static_cast<double>(m * kPlane);
    const double mean = total / count;
    double sq = 0.0;
    for (std::size_t n = 0; n < m; ++n) {
      const float* plane = dataset.images.raw() + n * kImageValues + c * kPlane;
      for (std::size_t k = 0; k < kPlane; ++k) {
        const double d = plane[k] - mean;
        sq += d * d;
      }
    }
    stats.mean[c] = static_cast<float>(mean);
    stats.stddev[c] = static_cast<float>(std::sqrt(sq / count));
  }
  return stats;
}

Tensor normalize(const Tensor& images, const ChannelStats& stats) {
  const Shape& s = images.shape();
  const bool batched = s.size() == 4;
  if (!(batched || s.size() == 3) || s[batched ? 1 : 0] != kImageChannels) {
    throw ShapeError("normalize: expected [N,3,H,W] or [3,H,W], got " + to_string(s));
  }
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    if (!(stats.stddev[c] > 0.0f)) {
      throw DataError("normalize: channel " + std::to_string(c) + " has zero standard deviation");
    }
  }
  const std::size_t n = batched ? s[0] : 1;
  const std::size_t plane = s[s.size() - 2] * s[s.size() - 1];
  Tensor out(s);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < kImageChannels; ++c) {
      const std::size_t base = (b * kImageChannels + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        out[base + k] = (images[base + k] - stats.mean[c]) / stats.stddev[c];
      }
    }
  }
  return out;
}

Dataset parse_cifar10(std::span<const std::uint8_t> bytes, Split split) {
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw DataError("CIFAR-10 payload of " + std::to_string(bytes.size()) + " bytes is not a whole number of " +
                    std::to_string(kCifarRecordBytes) + "-byte records");
  }
  const std::size_t records = bytes.size() / kCifarRecordBytes;
  Dataset out;
  out.split = split;
  out.images = Tensor(Shape{records, kImageChannels, kImageSide, kImageSide});
  out.labels.assign(records, 0);
  parse_records(bytes, out.images, out.labels, 0);
  return out;
}

std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("CIFAR-10 directory not found: " + dir.string());
  auto train = load_split(dir,
                          {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin",
                           "data_batch_5.bin"},
                          Split::kTrain);
  auto test = load_split(dir, {"test_batch.bin"}, Split::kTest);
  return {std::move(train), std::move(test)};
}

Tensor pad_crop_flip(const Tensor& image, std::size_t offset_y, std::size_t offset_x, bool flip) {
  require_same_shape(image.shape(), Shape{kImageChannels, kImageSide, kImageSide}, "augment");
  if (offset_y > 2 * kPad || offset_x > 2 * kPad) throw ShapeError("augment: crop offset outside [0,8]");
  Tensor out(image.shape());
  const auto side = static_cast<std::ptrdiff_t>(kImageSide);
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    for (std::size_t y = 0; y < kImageSide; ++y) {
      const auto sy = static_cast<std::ptrdiff_t>(y + offset_y) - static_cast<std::ptrdiff_t>(kPad);
      for (std::size_t x = 0; x < kImageSide; ++x) {
        const std::size_t cx = flip ? kImageSide - 1 - x : x;
        const auto sx = static_cast<std::ptrdiff_t>(cx + offset_x) - static_cast<std::ptrdiff_t>(kPad);
        float v = 0.0f;
        if (sy >= 0 && sy < side && sx >= 0 && sx < side) {
          v = image[(c * kImageSide + static_cast<std::size_t>(sy)) * kImageSide + static_cast<std::size_t>(sx)];
        }
        out[(c * kImageSide + y) * kImageSide + x] = v;
      }
    }
  }
  return out;
}

Tensor augment(const Tensor& image, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> offset(0, 2 * kPad);
  std::bernoulli_distribution coin(0.5);
  const std::size_t oy = offset(rng);
  const std::size_t ox = offset(rng);
  const bool flip = coin(rng);
  return pad_crop_flip(image, oy, ox, flip);
}

Dataset synthetic_dataset(std::size_t classes, std::size_t per_class, std::uint64_t seed, float noise) {
  if (classes == 0 || per_class == 0) throw ConfigError("synthetic dataset needs at least one class and record");
  struct Prototype {
    std::array<float, 3> base;
    std::array<float, 3> amplitude;
    float cy, cx, sigma;
  };
  auto rng = make_rng(seed, {classes, per_class});
  std::uniform_real_distribution<float> base_dist(0.25f, 0.75f);
  std::uniform_real_distribution<float> amp_dist(0.15f, 0.25f);
  std::uniform_real_distribution<float> centre_dist(8.0f, 24.0f);
  std::uniform_real_distribution<float> sigma_dist(3.0f, 6.0f);
  std::bernoulli_distribution sign(0.5);

  std::vector<Prototype> protos(classes);
  for (auto& p : protos) {
    for (std::size_t c = 0; c < 3; ++c) {
      p.base[c] = base_dist(rng);
      p.amplitude[c] = sign(rng) ? amp_dist(rng) : -amp_dist(rng);
    }
    p.cy = centre_dist(rng);
    p.cx = centre_dist(rng);
    p.sigma = sigma_dist(rng);
  }

  const std::size_t m = classes * per_class;
  Dataset out;
  out.split = Split::kTrain;
  out.images = Tensor(Shape{m, kImageChannels, kImageSide, kImageSide});
  out.labels.resize(m);
  std::normal_distribution<float> pixel_noise(0.0f, noise);
  std::normal_distribution<float> jitter(0.0f, 1.5f);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t k = i % classes;
    const Prototype& p = protos[k];
    out.labels[i] = static_cast<int>(k);
    const float cy = p.cy + jitter(rng);
    const float cx = p.cx + jitter(rng);
    float* dst = out.images.raw() + i * kImageValues;
    for (std::size_t c = 0; c < kImageChannels; ++c) {
      for (std::size_t y = 0; y < kImageSide; ++y) {
        for (std::size_t x = 0; x < kImageSide; ++x) {
          const float dy = static_cast<float>(y) - cy;
          const float dx = static_cast<float>(x) - cx;
          const float blob = std::exp(-(dy * dy + dx * dx) / (2.0f * p.sigma * p.sigma));
          const float v = p.base[c] + p.amplitude[c] * blob + pixel_noise(rng);
          dst[(c * kImageSide + y) * kImageSide + x] = std::clamp(v, 0.0f, 1.0f);
        }
      }
    }
  }
  return out;
}

std::pair<Dataset, Dataset> synthetic_split(std::size_t classes, std::size_t train_per_class,
                                            std::size_t test_per_class, std::uint64_t seed, float noise) {
  if (train_per_class == 0 || test_per_class == 0) throw ConfigError("synthetic split needs records on both sides");
  const Dataset all = synthetic_dataset(classes, train_per_class + test_per_class, seed, noise);
  const std::size_t train_count = classes * train_per_class;
  std::vector<std::size_t> train_idx(train_count), test_idx(all.size() - train_count);
  std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
  std::iota(test_idx.begin(), test_idx.end(), train_count);
  Dataset train = all.select(train_idx);
  Dataset test = all.select(test_idx);
  train.split = Split::kTrain;
  test.split = Split::kTest;
  return {std::move(train), std::move(test)};
}

std::vector<std::size_t> BatchPlan::permutation(std::size_t records) const {
  std::vector<std::size_t> order(records);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(seed, {kShuffleStream, epoch});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<std::vector<std::size_t>> BatchPlan::batches(std::size_t records) const {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  const auto order = permutation(records);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < records; start += batch_size) {
    const std::size_t end = std::min(records, start + batch_size);
    if (drop_last && end - start < batch_size) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices, const ChannelStats& stats,
                 std::mt19937_64* augment_rng) {
  Batch batch;
  batch.images = Tensor(Shape{indices.size(), kImageChannels, kImageSide, kImageSide});
  batch.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (augment_rng != nullptr) {
      const Tensor img = augment(dataset.image(indices[i]), *augment_rng);
      std::memcpy(batch.images.raw() + i * kImageValues, img.raw(), kImageValues * sizeof(float));
    } else {
      copy_image(dataset.images, indices[i], batch.images, i);
    }
    batch.labels[i] = dataset.labels[indices[i]];
  }
  batch.images = normalize(batch.images, stats);
  return batch;
}

}  // namespace acrn
