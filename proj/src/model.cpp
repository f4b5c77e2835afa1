#include "acrn/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "acrn/errors.hpp"

namespace acrn {

namespace {

constexpr std::uint64_t kStemPath = 0;
constexpr std::uint64_t kHeadPath = 0xffff;
constexpr char kMagic[4] = {'A', 'C', 'R', 'N'};

Conv2dLayer<float> make_stem(const ModelSpec& spec, std::uint64_t seed) {
  auto rng = make_rng(seed, {kStemPath, 1});
  return Conv2dLayer<float>(kImageChannels, spec.stage_channels[0], 3, 1, 1, rng);
}

DenseLayer<float> make_head(const ModelSpec& spec, std::uint64_t seed) {
  auto rng = make_rng(seed, {kHeadPath, 1});
  return DenseLayer<float>(spec.stage_channels[2], spec.num_classes, rng);
}

const ModelSpec& validated(const ModelSpec& spec) {
  spec.validate();
  return spec;
}

// Little-endian byte sink / source for the weight format.
class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) u32(static_cast<std::uint32_t>(d));
    for (float f : t.data()) u32(std::bit_cast<std::uint32_t>(f));
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  std::uint32_t u32(const char* what) {
    if (bytes_.size() - pos_ < 4) throw DataError(std::string("weight file truncated while reading ") + what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  void expect(const char* p, std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n || std::memcmp(bytes_.data() + pos_, p, n) != 0) {
      throw DataError(std::string("weight file: bad ") + what);
    }
    pos_ += n;
  }
  // Reads a tensor that must have exactly `shape`.
  void tensor_into(Tensor& dst, const std::string& name) {
    const std::uint32_t rank = u32("tensor rank");
    if (rank != dst.rank()) {
      throw DataError("weight file: tensor '" + name + "' has rank " + std::to_string(rank) + ", expected " +
                      std::to_string(dst.rank()));
    }
    Shape shape(rank);
    for (auto& d : shape) d = u32("tensor dims");
    if (shape != dst.shape()) {
      throw DataError("weight file: tensor '" + name + "' has shape " + to_string(shape) + ", expected " +
                      to_string(dst.shape()));
    }
    if (bytes_.size() - pos_ < 4 * dst.size()) {
      throw DataError("weight file truncated inside tensor '" + name + "'");
    }
    for (auto& f : dst.data()) f = std::bit_cast<float>(u32("tensor payload"));
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

struct StateEntry {
  std::string name;
  Tensor* tensor;
};

// Mutable view of every persisted tensor in file order, minus the input stats.
std::vector<StateEntry> state_entries(Model& model) {
  std::vector<StateEntry> out;
  for (auto& p : model.named_parameters()) out.push_back({p.name, &p.var.mutable_value()});
  std::size_t i = 0;
  for (auto* bn : model.batch_norms()) {
    out.push_back({"bn" + std::to_string(i) + ".running_mean", &bn->running_mean()});
    out.push_back({"bn" + std::to_string(i) + ".running_var", &bn->running_var()});
    ++i;
  }
  return out;
}

Tensor stats_tensor(const std::array<float, 3>& v) { return Tensor(Shape{3}, std::vector<float>(v.begin(), v.end())); }

}  // namespace

std::string to_string(Variant variant) { return variant == Variant::kClassic ? "classic" : "accumulated"; }

Variant parse_variant(std::string_view text) {
  if (text == "classic") return Variant::kClassic;
  if (text == "accumulated") return Variant::kAccumulated;
  throw ConfigError("unknown architecture '" + std::string(text) + "' (expected classic or accumulated)");
}

void ModelSpec::validate() const {
  if (depth < 8 || (depth - 2) % 6 != 0) {
    throw ConfigError("depth " + std::to_string(depth) + " is not of the form 6n+2 with n >= 1 (e.g. 8, 14, 20, 32)");
  }
  if (num_classes == 0) throw ConfigError("num_classes must be positive");
  if (stage_channels[1] != 2 * stage_channels[0] || stage_channels[2] != 2 * stage_channels[1]) {
    throw ConfigError("stage channels must double from stage to stage");
  }
}

std::vector<BlockSpec> ModelSpec::block_specs() const {
  validate();
  const BlockKind kind = variant == Variant::kClassic ? BlockKind::kClassic : BlockKind::kAccumulated;
  std::vector<BlockSpec> specs;
  std::size_t channels = stage_channels[0];
  for (std::size_t stage = 0; stage < 3; ++stage) {
    for (std::size_t b = 0; b < blocks_per_stage(); ++b) {
      const bool entry = stage > 0 && b == 0;
      const std::size_t out = stage_channels[stage];
      specs.push_back(BlockSpec{channels, out, entry ? std::size_t{2} : std::size_t{1}, kind});
      channels = out;
    }
  }
  return specs;
}

Model::Model(const ModelSpec& spec, std::uint64_t seed)
    : spec_(validated(spec)),
      stem_conv_(make_stem(spec, seed)),
      stem_bn_(spec.stage_channels[0]),
      head_(make_head(spec, seed)) {
  const auto specs = spec_.block_specs();
  blocks_.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) blocks_.emplace_back(specs[i], seed, i + 1);
}

Model Model::clone() const {
  Model copy(spec_, 0);
  auto src = named_parameters();
  auto dst = copy.named_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].var.mutable_value() = src[i].var.value();
  auto src_bn = batch_norms();
  auto dst_bn = copy.batch_norms();
  for (std::size_t i = 0; i < src_bn.size(); ++i) {
    dst_bn[i]->running_mean() = src_bn[i]->running_mean();
    dst_bn[i]->running_var() = src_bn[i]->running_var();
  }
  copy.input_stats_ = input_stats_;
  return copy;
}

Variable<float> Model::forward(Tape<float>& tape, const Variable<float>& x, Mode mode, ForwardTrace* trace) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != kImageChannels || s[2] != kImageSide || s[3] != kImageSide) {
    throw ShapeError("model input must be [N,3,32,32], got " + to_string(s));
  }
  auto h = stem_conv_.forward(tape, x);
  h = stem_bn_.forward(tape, h, mode);
  h = ops::relu(tape, h);
  if (trace != nullptr) trace->stem_output = h;

  ResidualAccumulator<float> acc;
  for (auto& block : blocks_) {
    BlockTrace bt;
    bt.input = h;
    if (block.spec().kind == BlockKind::kClassic) {
      h = classic_block_forward(tape, h, block, mode);
    } else {
      auto step = accumulated_block_forward(tape, h, std::move(acc), block, mode);
      acc = std::move(step.acc);
      bt.term = step.term;
      bt.accumulator = acc.value();
      bt.reinitialized = step.reinitialized;
      h = step.y;
    }
    bt.output = h;
    if (trace != nullptr) trace->blocks.push_back(std::move(bt));
  }
  if (trace != nullptr) trace->reinitializations = acc.reinitializations();

  auto pooled = ops::global_avg_pool(tape, h);
  return head_.forward(tape, pooled);
}

std::vector<Parameter<float>> Model::named_parameters() const {
  std::vector<Parameter<float>> out;
  auto append = [&out](std::vector<Parameter<float>> more) {
    for (auto& p : more) out.push_back(std::move(p));
  };
  append(stem_conv_.named_parameters("stem.conv"));
  append(stem_bn_.named_parameters("stem.bn"));
  for (std::size_t i = 0; i < blocks_.size(); ++i) append(blocks_[i].named_parameters("block" + std::to_string(i + 1)));
  append(head_.named_parameters("head"));
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : named_parameters()) total += p.var.value().size();
  return total;
}

std::vector<BatchNormLayer<float>*> Model::batch_norms() {
  std::vector<BatchNormLayer<float>*> out{&stem_bn_};
  for (auto& block : blocks_) {
    for (auto* bn : block.batch_norms()) out.push_back(bn);
  }
  return out;
}

std::vector<const BatchNormLayer<float>*> Model::batch_norms() const {
  auto mutable_list = const_cast<Model&>(*this).batch_norms();
  return {mutable_list.begin(), mutable_list.end()};
}

void save_weights(const Model& model, const std::filesystem::path& path) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kWeightFormatVersion);
  w.u32(static_cast<std::uint32_t>(model.spec().depth));
  w.u32(model.spec().variant == Variant::kClassic ? 0u : 1u);
  w.u32(static_cast<std::uint32_t>(model.spec().num_classes));
  for (const auto& entry : state_entries(const_cast<Model&>(model))) w.tensor(*entry.tensor);
  w.tensor(stats_tensor(model.input_stats().mean));
  w.tensor(stats_tensor(model.input_stats().stddev));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write weights to " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw DataError("failed writing weights to " + path.string());
}

Model load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open weights file " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{}));

  r.expect(kMagic, sizeof(kMagic), "magic (not an ACRN weight file)");
  const std::uint32_t version = r.u32("version");
  if (version != kWeightFormatVersion) {
    throw DataError("weight file version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kWeightFormatVersion) + ")");
  }
  ModelSpec spec;
  spec.depth = r.u32("depth");
  const std::uint32_t variant = r.u32("variant");
  spec.num_classes = r.u32("class count");
  if (variant > 1) throw DataError("weight file: unknown variant code " + std::to_string(variant));
  spec.variant = variant == 0 ? Variant::kClassic : Variant::kAccumulated;
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("weight file header: ") + e.what());
  }

  Model model(spec, 0);
  for (auto& entry : state_entries(model)) r.tensor_into(*entry.tensor, entry.name);
  Tensor mean(Shape{3}), stddev(Shape{3});
  r.tensor_into(mean, "input_mean");
  r.tensor_into(stddev, "input_std");
  if (!r.at_end()) throw DataError("weight file has trailing bytes after the last tensor");
  ChannelStats stats;
  for (std::size_t c = 0; c < 3; ++c) {
    stats.mean[c] = mean[c];
    stats.stddev[c] = stddev[c];
  }
  model.set_input_stats(stats);
  return model;
}

Model load_weights(const std::filesystem::path& path, const ModelSpec& expected) {
  Model model = load_weights(path);
  if (model.spec().depth != expected.depth || model.spec().variant != expected.variant ||
      model.spec().num_classes != expected.num_classes) {
    throw DataError("weights in " + path.string() + " are for depth " + std::to_string(model.spec().depth) + " " +
                    to_string(model.spec().variant) + ", expected depth " + std::to_string(expected.depth) + " " +
                    to_string(expected.variant));
  }
  return model;
}

}  // namespace acrn
