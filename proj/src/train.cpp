#include "acrn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "acrn/errors.hpp"
#include "acrn/random.hpp"

namespace acrn {

namespace {
constexpr std::uint64_t kAugmentStream = 0xa06;
}

std::vector<std::size_t> TrainConfig::default_milestones(std::size_t epochs) {
  std::vector<std::size_t> out;
  for (double fraction : {0.5, 0.8}) {
    const auto m = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(epochs)));
    if (m >= 1 && (out.empty() || m > out.back())) out.push_back(m);
  }
  return out;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (eval_batch_size == 0) throw ConfigError("evaluation batch size must be positive");
  if (!(base_lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (!(lr_decay > 0.0)) throw ConfigError("learning-rate decay factor must be positive");
  for (std::size_t i = 0; i < lr_milestones.size(); ++i) {
    const auto m = lr_milestones[i];
    if (m < 1 || m > epochs) {
      throw ConfigError("milestone " + std::to_string(m) + " outside [1, " + std::to_string(epochs) + "]");
    }
    if (i > 0 && m <= lr_milestones[i - 1]) throw ConfigError("milestones must be strictly increasing");
  }
}

double TrainConfig::learning_rate(std::size_t epoch) const {
  double lr = base_lr;
  for (auto m : lr_milestones) {
    if (epoch >= m) lr *= lr_decay;
  }
  return lr;
}

void sgd_update(Tensor& weight, const Tensor& grad, Tensor& velocity, double lr, double momentum,
                double weight_decay) {
  require_same_shape(weight.shape(), grad.shape(), "sgd_update (grad)");
  require_same_shape(weight.shape(), velocity.shape(), "sgd_update (velocity)");
  const auto lr_f = static_cast<float>(lr);
  const auto mom_f = static_cast<float>(momentum);
  const auto wd_f = static_cast<float>(weight_decay);
  float* w = weight.raw();
  const float* g = grad.raw();
  float* v = velocity.raw();
  for (std::size_t i = 0; i < weight.size(); ++i) {
    v[i] = mom_f * v[i] + (g[i] + wd_f * w[i]);
    w[i] -= lr_f * v[i];
  }
}

SgdOptimizer::SgdOptimizer(std::vector<Parameter<float>> params) : params_(std::move(params)) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.var.shape());
}

void SgdOptimizer::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

void SgdOptimizer::step(double lr, double momentum, double weight_decay) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& var = params_[i].var;
    const Tensor grad = var.has_grad() ? var.grad() : Tensor(var.shape());
    sgd_update(var.mutable_value(), grad, velocity_[i], lr, momentum, params_[i].decay ? weight_decay : 0.0);
  }
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t k = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if (logits(row, j) > logits(row, best)) best = j;
  }
  return best;
}

EvalResult evaluate(const LogitsFn& logits_fn, const Dataset& dataset, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("evaluation batch size must be positive");
  EvalResult result;
  result.total = dataset.size();
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    const std::size_t end = std::min(dataset.size(), start + batch_size);
    std::vector<std::size_t> idx(end - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const Dataset batch = dataset.select(idx);
    const Tensor logits = logits_fn(batch.images);

    Tape<float> tape(GradMode::kDisabled);
    const auto loss = softmax_cross_entropy(tape, Variable<float>::leaf(logits, false), batch.labels);
    loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (static_cast<int>(argmax_row(logits, i)) == batch.labels[i]) ++result.correct;
    }
  }
  result.loss = loss_sum / static_cast<double>(result.total);
  result.accuracy = 100.0 * static_cast<double>(result.correct) / static_cast<double>(result.total);
  result.top1_error = 100.0 - result.accuracy;
  return result;
}

EvalResult evaluate(Model& model, const Dataset& dataset, std::size_t batch_size) {
  return evaluate(
      [&model](const Tensor& images) {
        Tape<float> tape(GradMode::kDisabled);
        const auto x = Variable<float>::leaf(normalize(images, model.input_stats()), false);
        return model.forward(tape, x, Mode::kInference).value();
      },
      dataset, batch_size);
}

std::vector<MetricsRecord> train(Model& model, const Dataset& train_set, const Dataset& val_set,
                                 const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  std::vector<MetricsRecord> metrics;
  if (config.epochs == 0) return metrics;

  SgdOptimizer optimizer(model.named_parameters());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const double lr = config.learning_rate(epoch);
    const BatchPlan plan{config.batch_size, config.seed, epoch, false};
    auto augment_rng = make_rng(config.seed, {kAugmentStream, epoch});

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (const auto& indices : plan.batches(train_set.size())) {
      Batch batch = make_batch(train_set, indices, model.input_stats(), config.augment ? &augment_rng : nullptr);
      Tape<float> tape;
      const auto x = Variable<float>::leaf(std::move(batch.images), false);
      const auto logits = model.forward(tape, x, Mode::kTraining);
      const auto loss = softmax_cross_entropy(tape, logits, batch.labels);
      optimizer.zero_grad();
      tape.backward(loss);
      optimizer.step(lr, config.momentum, config.weight_decay);

      loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(indices.size());
      for (std::size_t i = 0; i < indices.size(); ++i) {
        if (static_cast<int>(argmax_row(logits.value(), i)) == batch.labels[i]) ++correct;
      }
    }

    const EvalResult val = evaluate(model, val_set, config.eval_batch_size);
    MetricsRecord record;
    record.epoch = epoch + 1;
    record.train_loss = loss_sum / static_cast<double>(train_set.size());
    record.train_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(train_set.size());
    record.val_loss = val.loss;
    record.val_accuracy = val.accuracy;
    record.val_top1_error = val.top1_error;
    if (config.record_wall_time) {
      record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    metrics.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  return metrics;
}

Summary summarize(std::span<const MetricsRecord> metrics) {
  if (metrics.empty()) throw ConfigError("cannot summarize an empty metrics list");
  Summary s;
  s.min_top1 = metrics.front().val_top1_error;
  double total = 0.0;
  for (const auto& m : metrics) {
    s.min_top1 = std::min(s.min_top1, m.val_top1_error);
    total += m.val_top1_error;
  }
  s.avg_top1 = total / static_cast<double>(metrics.size());
  return s;
}

void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> metrics) {
  out << kMetricsCsvHeader << '\n';
  out << std::fixed << std::setprecision(6);
  for (const auto& m : metrics) {
    out << m.epoch << ',' << m.train_loss << ',' << m.train_accuracy << ',' << m.val_loss << ',' << m.val_accuracy
        << ',' << m.val_top1_error << ',' << m.wall_seconds << '\n';
  }
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRecord> metrics) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write metrics to " + path.string());
  write_metrics_csv(out, metrics);
  if (!out) throw DataError("failed writing metrics to " + path.string());
}

}  // namespace acrn
