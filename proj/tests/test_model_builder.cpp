#include <gtest/gtest.h>

#include "acrn/errors.hpp"
#include "acrn/kernels.hpp"
#include "acrn/model.hpp"
#include "acrn/random.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace acrn;

namespace {

ModelSpec spec_of(std::size_t depth, Variant v) {
  ModelSpec s;
  s.depth = depth;
  s.variant = v;
  return s;
}

Variable<float> random_images(std::size_t n, std::uint64_t seed) {
  auto rng = make_rng(seed, {});
  return Variable<float>::leaf(Tensor::randn(Shape{n, 3, 32, 32}, rng), false);
}

Tensor infer(Model& m, const Variable<float>& x) {
  Tape<float> tape(GradMode::kDisabled);
  return m.forward(tape, x, Mode::kInference).value();
}

}  // namespace

TEST(ModelSpec, DepthToBlocks) {
  EXPECT_EQ(spec_of(32, Variant::kClassic).total_blocks(), 15u);
  EXPECT_EQ(spec_of(32, Variant::kClassic).blocks_per_stage(), 5u);
  EXPECT_EQ(spec_of(8, Variant::kClassic).total_blocks(), 3u);
  for (std::size_t bad : {0u, 2u, 7u, 31u, 33u}) {
    EXPECT_THROW(spec_of(bad, Variant::kClassic).validate(), ConfigError) << bad;
  }
  try {
    spec_of(33, Variant::kClassic).validate();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("6n+2"), std::string::npos);
  }
}

TEST(ModelSpec, ShapeChangesOnlyAtStageEntries) {
  const auto specs = spec_of(32, Variant::kAccumulated).block_specs();
  ASSERT_EQ(specs.size(), 15u);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    EXPECT_EQ(specs[i].changes_shape(), i == 5 || i == 10) << i;
    EXPECT_EQ(specs[i].out_channels, std::size_t{16} << (i / 5));
  }
}

TEST(ModelSpec, ParseVariant) {
  EXPECT_EQ(parse_variant("classic"), Variant::kClassic);
  EXPECT_EQ(parse_variant("accumulated"), Variant::kAccumulated);
  EXPECT_THROW(parse_variant("resnet"), ConfigError);
}

TEST(Model, ParameterCountMatchesClosedForm) {
  for (std::size_t depth : {8u, 20u, 32u}) {
    for (Variant v : {Variant::kClassic, Variant::kAccumulated}) {
      EXPECT_EQ(Model(spec_of(depth, v), 0).parameter_count(), oracle::parameter_count(depth, v)) << depth;
    }
  }
  EXPECT_EQ(oracle::parameter_count(20, Variant::kClassic), 272282u);
}

TEST(Model, AccumulatedAddsOnlyAccumulatorNorms) {
  const Model classic(spec_of(32, Variant::kClassic), 0);
  const Model accumulated(spec_of(32, Variant::kAccumulated), 0);
  std::size_t expected_extra = 0;
  for (const auto& b : spec_of(32, Variant::kAccumulated).block_specs()) expected_extra += 2 * b.out_channels;
  EXPECT_EQ(accumulated.parameter_count() - classic.parameter_count(), expected_extra);
  std::size_t acc_norms = 0;
  for (const auto& p : accumulated.named_parameters()) acc_norms += p.name.find(".acc_bn.gamma") != std::string::npos;
  EXPECT_EQ(acc_norms, 15u);
}

TEST(Model, OutputShapeAndDeterminism) {
  Model m(spec_of(8, Variant::kAccumulated), 3);
  const auto x = random_images(2, 41);
  const Tensor a = infer(m, x);
  EXPECT_EQ(a.shape(), (Shape{2, 10}));
  EXPECT_EQ(a, infer(m, x));
  EXPECT_EQ(Model(spec_of(8, Variant::kAccumulated), 3).named_parameters()[0].var.value(),
            m.named_parameters()[0].var.value());
  Tape<float> tape;
  EXPECT_THROW(m.forward(tape, Variable<float>::leaf(Tensor(Shape{2, 3, 16, 16})), Mode::kTraining), ShapeError);
}

TEST(Model, ReinitializesOncePerStage) {
  for (std::size_t depth : {8u, 14u, 32u}) {
    Model m(spec_of(depth, Variant::kAccumulated), 1);
    Tape<float> tape(GradMode::kDisabled);
    ForwardTrace trace;
    m.forward(tape, random_images(2, 42), Mode::kTraining, &trace);
    EXPECT_EQ(trace.reinitializations, 3u);
    const std::size_t n = (depth - 2) / 6;
    for (std::size_t i = 0; i < trace.blocks.size(); ++i) EXPECT_EQ(trace.blocks[i].reinitialized, i % n == 0);
  }
}

TEST(Model, FrozenAccumulatorNormsReduceToClassic) {
  Model classic(spec_of(8, Variant::kClassic), 5);
  Model accumulated(spec_of(8, Variant::kAccumulated), 5);
  for (auto& block : accumulated.blocks()) {
    auto& bn = block.accumulator_norm();
    bn.gamma().mutable_value().fill(1.0f);
    bn.beta().mutable_value().fill(0.0f);
    bn.running_mean().fill(0.0f);
    bn.running_var().fill(1.0f - bn.epsilon());
    ASSERT_EQ(bn.running_var()[0] + bn.epsilon(), 1.0f);
  }
  const auto x = random_images(3, 43);
  EXPECT_EQ(infer(classic, x), infer(accumulated, x));
}

TEST(Model, CloneIsDeep) {
  Model m(spec_of(8, Variant::kClassic), 6);
  m.set_input_stats({{0.1f, 0.2f, 0.3f}, {0.4f, 0.5f, 0.6f}});
  Model c = m.clone();
  const auto x = random_images(2, 44);
  EXPECT_EQ(infer(m, x), infer(c, x));
  c.head().bias().mutable_value().fill(3.0f);
  EXPECT_NE(infer(m, x), infer(c, x));
  EXPECT_EQ(c.input_stats(), m.input_stats());
}

TEST(Weights, RoundTripIsBitIdentical) {
  scratch::TempDir dir("weights");
  Model m(spec_of(8, Variant::kAccumulated), 7);
  m.set_input_stats({{0.49f, 0.48f, 0.44f}, {0.25f, 0.24f, 0.26f}});
  for (auto* bn : m.batch_norms()) bn->running_mean().fill(0.125f);
  save_weights(m, dir / "w.bin");
  const Model loaded = load_weights(dir / "w.bin");
  EXPECT_EQ(loaded.spec().depth, 8u);
  EXPECT_EQ(loaded.spec().variant, Variant::kAccumulated);
  const auto a = m.named_parameters();
  const auto b = loaded.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].var.value(), b[i].var.value()) << a[i].name;
  for (const auto* bn : loaded.batch_norms()) EXPECT_EQ(bn->running_mean()[0], 0.125f);
  EXPECT_EQ(loaded.input_stats(), m.input_stats());
  save_weights(loaded, dir / "w2.bin");
  EXPECT_EQ(scratch::read_bytes(dir / "w.bin"), scratch::read_bytes(dir / "w2.bin"));
}

TEST(Weights, StructuredErrors) {
  scratch::TempDir dir("weights_err");
  save_weights(Model(spec_of(8, Variant::kClassic), 8), dir / "w.bin");
  const auto bytes = scratch::read_bytes(dir / "w.bin");

  EXPECT_THROW(load_weights(dir / "w.bin", spec_of(14, Variant::kClassic)), DataError);
  EXPECT_THROW(load_weights(dir / "w.bin", spec_of(8, Variant::kAccumulated)), DataError);
  EXPECT_NO_THROW(load_weights(dir / "w.bin", spec_of(8, Variant::kClassic)));
  EXPECT_THROW(load_weights(dir / "missing.bin"), DataError);

  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  scratch::write_bytes(dir / "t.bin", truncated);
  EXPECT_THROW(load_weights(dir / "t.bin"), DataError);

  auto trailing = bytes;
  trailing.push_back(0);
  scratch::write_bytes(dir / "x.bin", trailing);
  EXPECT_THROW(load_weights(dir / "x.bin"), DataError);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  scratch::write_bytes(dir / "m.bin", bad_magic);
  EXPECT_THROW(load_weights(dir / "m.bin"), DataError);

  auto bad_depth = bytes;
  bad_depth[8] = 9;  // depth field follows magic and version
  scratch::write_bytes(dir / "d.bin", bad_depth);
  EXPECT_THROW(load_weights(dir / "d.bin"), DataError);
}
