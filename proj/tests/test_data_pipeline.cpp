#include <gtest/gtest.h>

#include <set>

#include "acrn/data.hpp"
#include "acrn/errors.hpp"
#include "acrn/random.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace acrn;

namespace {

std::vector<std::uint8_t> records(std::size_t count, std::uint8_t label, std::uint8_t pixel) {
  std::vector<std::uint8_t> bytes(count * kCifarRecordBytes, pixel);
  for (std::size_t i = 0; i < count; ++i) bytes[i * kCifarRecordBytes] = label;
  return bytes;
}

Tensor marker_image() {
  Tensor img(Shape{3, 32, 32});
  img[0] = 1.0f;  // channel 0, row 0, col 0
  return img;
}

}  // namespace

TEST(Cifar, RecordLayoutAndScaling) {
  auto bytes = records(2, 3, 255);
  bytes[kCifarRecordBytes] = 7;
  bytes[kCifarRecordBytes + 1 + 1024 + 33] = 0;  // record 1, green, row 1, col 1
  const Dataset ds = parse_cifar10(bytes, Split::kTest);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.labels, (std::vector<int>{3, 7}));
  EXPECT_EQ(ds.split, Split::kTest);
  for (std::size_t i = 0; i < kImageValues; ++i) EXPECT_EQ(ds.images[i], 1.0f);
  EXPECT_EQ(ds.images(1, 1, 1, 1), 0.0f);
  EXPECT_EQ(ds.images(1, 1, 1, 2), 1.0f);
}

TEST(Cifar, RejectsMalformedPayloads) {
  auto one_extra = records(3, 1, 10);
  one_extra.push_back(0);
  EXPECT_THROW(parse_cifar10(one_extra, Split::kTrain), DataError);
  EXPECT_THROW(parse_cifar10({}, Split::kTrain), DataError);
  EXPECT_THROW(parse_cifar10(records(1, 10, 0), Split::kTrain), DataError);
}

TEST(Cifar, LoaderRejectsWrongFileSizes) {
  scratch::TempDir dir("cifar");
  EXPECT_THROW(load_cifar10(dir / "absent"), DataError);
  for (const char* name : {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin",
                           "data_batch_5.bin", "test_batch.bin"}) {
    scratch::write_bytes(dir / name, std::vector<char>(kCifarRecordBytes * 2, 0));
  }
  EXPECT_THROW(load_cifar10(dir.path()), DataError);
}

TEST(Augment, CentredCropIsIdentity) {
  auto rng = make_rng(51, {});
  const Tensor img = Tensor::uniform(Shape{3, 32, 32}, rng, 0.0f, 1.0f);
  EXPECT_EQ(pad_crop_flip(img, 4, 4, false), img);
  EXPECT_EQ(pad_crop_flip(pad_crop_flip(img, 4, 4, true), 4, 4, true), img);
}

TEST(Augment, CornerCropShiftsMarker) {
  // Zero-padding by 4 puts source (0,0) at padded (4,4); a crop at (0,0)
  // keeps that position.
  const Tensor out = pad_crop_flip(marker_image(), 0, 0, false);
  EXPECT_EQ(out[4 * 32 + 4], 1.0f);
  float total = 0.0f;
  for (float v : out.data()) total += v;
  EXPECT_EQ(total, 1.0f);
  // Crop at (8,8) moves the marker off the canvas entirely.
  const Tensor gone = pad_crop_flip(marker_image(), 8, 8, false);
  for (float v : gone.data()) EXPECT_EQ(v, 0.0f);
  // Flip mirrors columns after the crop.
  EXPECT_EQ(pad_crop_flip(marker_image(), 0, 0, true)[4 * 32 + 27], 1.0f);
  EXPECT_THROW(pad_crop_flip(marker_image(), 9, 0, false), ShapeError);
}

TEST(Augment, DrawsAllOffsetsAndBothFlips) {
  auto rng = make_rng(52, {});
  std::set<std::pair<std::size_t, bool>> seen;
  for (int t = 0; t < 2000; ++t) {
    const Tensor out = augment(marker_image(), rng);
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x)
        if (out[y * 32 + x] == 1.0f) seen.insert({y, x > 15});
  }
  // Marker row = 4 - oy for oy <= 4, i.e. rows 0..4 reachable.
  EXPECT_EQ(seen.size(), 10u);
}

TEST(Normalize, HandValues) {
  ChannelStats stats{{0.5f, 0.5f, 0.5f}, {0.25f, 0.25f, 0.25f}};
  EXPECT_EQ(normalize(Tensor(Shape{3, 2, 2}, 0.75f), stats), Tensor(Shape{3, 2, 2}, 1.0f));
}

TEST(Normalize, TrainingSetBecomesZeroMean) {
  const Dataset ds = synthetic_dataset(4, 8, 53);
  const ChannelStats stats = compute_channel_stats(ds);
  const Tensor z = normalize(ds.images, stats);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0;
    for (std::size_t n = 0; n < ds.size(); ++n)
      for (std::size_t i = 0; i < 1024; ++i) s += z[(n * 3 + c) * 1024 + i];
    EXPECT_NEAR(s / static_cast<double>(ds.size() * 1024), 0.0, 1e-5);
  }
}

TEST(Normalize, ConstantDatasetIsAnError) {
  Dataset ds;
  ds.images = Tensor(Shape{4, 3, 32, 32}, 0.5f);
  ds.labels = {0, 1, 2, 3};
  EXPECT_THROW(normalize(ds.images, compute_channel_stats(ds)), DataError);
}

TEST(Synthetic, DeterministicAndBalanced) {
  const Dataset a = synthetic_dataset(10, 16, 54);
  const Dataset b = synthetic_dataset(10, 16, 54);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.images, synthetic_dataset(10, 16, 55).images);

  const Dataset two = synthetic_dataset(2, 8, 54);
  ASSERT_EQ(two.size(), 16u);
  EXPECT_EQ(std::count(two.labels.begin(), two.labels.end(), 0), 8);
  EXPECT_EQ(std::count(two.labels.begin(), two.labels.end(), 1), 8);
  for (float v : two.images.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Synthetic, LinearlySeparable) {
  const Dataset ds = synthetic_dataset(10, 30, 56);
  EXPECT_GE(oracle::logistic_probe_accuracy(ds.images, ds.labels, 10, 100), 0.99);
}

TEST(Synthetic, SplitSharesPrototypes) {
  const auto [train, test] = synthetic_split(10, 20, 5, 57);
  EXPECT_EQ(train.size(), 200u);
  EXPECT_EQ(test.size(), 50u);
  EXPECT_EQ(train.split, Split::kTrain);
  EXPECT_EQ(test.split, Split::kTest);
}

TEST(Batching, PermutationCoversAllRecords) {
  BatchPlan plan{.batch_size = 7, .seed = 3, .epoch = 0, .drop_last = false};
  auto perm = plan.permutation(30);
  std::sort(perm.begin(), perm.end());
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(perm[i], i);
  const auto batches = plan.batches(30);
  ASSERT_EQ(batches.size(), 5u);
  EXPECT_EQ(batches.back().size(), 2u);
  EXPECT_EQ(plan.batches(30), batches);
  BatchPlan next = plan;
  next.epoch = 1;
  EXPECT_NE(next.permutation(30), plan.permutation(30));
  plan.drop_last = true;
  EXPECT_EQ(plan.batches(30).size(), 4u);
}

TEST(Batching, MakeBatchNormalizes) {
  const Dataset ds = synthetic_dataset(2, 4, 58);
  const ChannelStats stats = compute_channel_stats(ds);
  const std::vector<std::size_t> idx{3, 0};
  const Batch b = make_batch(ds, idx, stats, nullptr);
  EXPECT_EQ(b.labels, (std::vector<int>{ds.labels[3], ds.labels[0]}));
  EXPECT_FLOAT_EQ(b.images(1, 2, 5, 6), (ds.images(0, 2, 5, 6) - stats.mean[2]) / stats.stddev[2]);
}
