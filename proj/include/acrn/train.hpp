#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <span>
#include <vector>

#include "acrn/data.hpp"
#include "acrn/model.hpp"

namespace acrn {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 128;
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  // 1-based epoch counts after which the rate is multiplied by lr_decay.
  std::vector<std::size_t> lr_milestones{25, 40};
  double lr_decay = 0.1;
  std::uint64_t seed = 0;
  bool augment = true;
  bool record_wall_time = true;
  std::size_t eval_batch_size = 250;

  // Milestones at 50% and 80% of the run, i.e. 25/40 for 50 epochs.
  static std::vector<std::size_t> default_milestones(std::size_t epochs);

  void validate() const;
  // Rate for the 0-based epoch index.
  double learning_rate(std::size_t epoch) const;
};

struct MetricsRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;  // percent
  double val_loss = 0.0;
  double val_accuracy = 0.0;    // percent
  double val_top1_error = 0.0;  // 100 - val_accuracy
  double wall_seconds = 0.0;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;    // percent
  double top1_error = 0.0;  // percent
  std::size_t correct = 0;
  std::size_t total = 0;
};

struct Summary {
  double min_top1 = 0.0;
  double avg_top1 = 0.0;
};

// v <- momentum * v + (g + weight_decay * w); w <- w - lr * v.
void sgd_update(Tensor& weight, const Tensor& grad, Tensor& velocity, double lr, double momentum,
                double weight_decay);

// SGD with momentum over a parameter registry; parameters flagged
// decay == false (batch-norm gamma/beta) skip weight decay.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(std::vector<Parameter<float>> params);

  // Zeroes every gradient buffer; call before each backward pass.
  void zero_grad();
  // Parameters that received no gradient are treated as having grad 0.
  void step(double lr, double momentum, double weight_decay);

  const std::vector<Tensor>& velocities() const { return velocity_; }

 private:
  std::vector<Parameter<float>> params_;
  std::vector<Tensor> velocity_;
};

// Index of the largest logit; ties go to the lowest index.
std::size_t argmax_row(const Tensor& logits, std::size_t row);

// Scores a logits provider, fed raw [B,3,32,32] images, against `dataset`.
using LogitsFn = std::function<Tensor(const Tensor& images)>;
EvalResult evaluate(const LogitsFn& logits_fn, const Dataset& dataset, std::size_t batch_size = 250);

// Inference-mode evaluation using the model's input statistics.
EvalResult evaluate(Model& model, const Dataset& dataset, std::size_t batch_size = 250);

using EpochCallback = std::function<void(const MetricsRecord&)>;

// Trains in place; one record per epoch, validation on `val_set` in inference
// mode. Images are standardized with model.input_stats(), which the caller
// sets (normally from the training split). Deterministic under config.seed
// with one thread.
std::vector<MetricsRecord> train(Model& model, const Dataset& train_set, const Dataset& val_set,
                                 const TrainConfig& config, const EpochCallback& on_epoch = {});

// Minimum and mean of val_top1_error. Throws ConfigError on empty input.
Summary summarize(std::span<const MetricsRecord> metrics);

inline constexpr const char* kMetricsCsvHeader = "epoch,train_loss,train_acc,val_loss,val_acc,val_top1_err,wall_seconds";

void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> metrics);
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRecord> metrics);

}  // namespace acrn
