#include "acrn/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>

#include "acrn/data.hpp"
#include "acrn/errors.hpp"
#include "acrn/gradcheck_suite.hpp"
#include "acrn/model.hpp"
#include "acrn/parallel.hpp"
#include "acrn/train.hpp"

namespace acrn {

namespace {

struct DataOptions {
  std::string data_dir;
  bool synthetic = false;
  std::size_t synthetic_train_per_class = 100;
  std::size_t synthetic_test_per_class = 20;
  float synthetic_noise = 0.1f;
  std::uint64_t data_seed = 0;
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
};

struct TrainOptions {
  std::string arch = "classic";
  std::size_t depth = 32;
  TrainConfig config;
  std::vector<std::size_t> milestones;
  bool no_augment = false;
  bool no_wall_time = false;
  int threads = 1;
  std::string out = "metrics.csv";
  std::string weights_out = "weights.acrn";
  DataOptions data;
};

struct EvalOptions {
  std::string weights;
  std::string arch;
  std::size_t depth = 0;
  std::size_t batch_size = 250;
  int threads = 1;
  DataOptions data;
};

struct GradcheckOptions {
  double tol = 1e-4;
  double h = 1e-3;
  std::string only;
  std::uint64_t seed = 1;
  bool list = false;
};

struct InspectOptions {
  DataOptions data;
};

void add_data_options(CLI::App* cmd, DataOptions& d) {
  cmd->add_option("--data-dir", d.data_dir, "Directory with the CIFAR-10 binary files (falls back to $ACRN_DATA_DIR)")
      ->envname("ACRN_DATA_DIR");
  cmd->add_flag("--synthetic", d.synthetic, "Use generated Gaussian-blob data instead of CIFAR-10 (default: off)");
  cmd->add_option("--synthetic-per-class", d.synthetic_train_per_class, "Synthetic training records per class");
  cmd->add_option("--synthetic-test-per-class", d.synthetic_test_per_class, "Synthetic test records per class");
  cmd->add_option("--synthetic-noise", d.synthetic_noise, "Pixel noise std of synthetic images");
  cmd->add_option("--data-seed", d.data_seed, "Seed of the synthetic generator");
  cmd->add_option("--train-limit", d.train_limit, "Use only the first N training records (0 = all)");
  cmd->add_option("--test-limit", d.test_limit, "Use only the first N test records (0 = all)");
}

std::pair<Dataset, Dataset> load_data(const DataOptions& d) {
  std::pair<Dataset, Dataset> sets;
  if (d.synthetic) {
    sets = synthetic_split(kCifarClasses, d.synthetic_train_per_class, d.synthetic_test_per_class, d.data_seed,
                           d.synthetic_noise);
  } else {
    if (d.data_dir.empty()) throw ConfigError("no data source: pass --data-dir, set ACRN_DATA_DIR or use --synthetic");
    sets = load_cifar10(d.data_dir);
  }
  if (d.train_limit > 0) sets.first = sets.first.head(d.train_limit);
  if (d.test_limit > 0) sets.second = sets.second.head(d.test_limit);
  return sets;
}

std::string fixed6(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

int cmd_train(const TrainOptions& opt, std::ostream& out) {
  set_num_threads(opt.threads);
  ModelSpec spec;
  spec.depth = opt.depth;
  spec.variant = parse_variant(opt.arch);
  spec.validate();

  TrainConfig config = opt.config;
  config.lr_milestones = opt.milestones.empty() ? TrainConfig::default_milestones(config.epochs) : opt.milestones;
  config.augment = !opt.no_augment;
  config.record_wall_time = !opt.no_wall_time;
  config.validate();

  auto [train_set, test_set] = load_data(opt.data);
  Model model(spec, config.seed);
  model.set_input_stats(compute_channel_stats(train_set));

  out << "training " << to_string(spec.variant) << " depth " << spec.depth << " (" << model.spec().total_blocks()
      << " blocks, " << model.parameter_count() << " parameters) on " << train_set.size() << " train / "
      << test_set.size() << " test images\n";

  const auto metrics = train(model, train_set, test_set, config, [&](const MetricsRecord& m) {
    out << "epoch " << m.epoch << '/' << config.epochs << " train_loss=" << fixed6(m.train_loss)
        << " train_acc=" << fixed6(m.train_accuracy) << " val_loss=" << fixed6(m.val_loss)
        << " val_acc=" << fixed6(m.val_accuracy) << " val_top1_err=" << fixed6(m.val_top1_error) << '\n'
        << std::flush;
  });

  write_metrics_csv(std::filesystem::path(opt.out), metrics);
  save_weights(model, opt.weights_out);
  if (metrics.empty()) {
    out << "min_top1=nan avg_top1=nan\n";
  } else {
    const Summary s = summarize(metrics);
    out << "min_top1=" << fixed6(s.min_top1) << " avg_top1=" << fixed6(s.avg_top1) << '\n';
  }
  return kExitOk;
}

int cmd_eval(const EvalOptions& opt, std::ostream& out) {
  set_num_threads(opt.threads);
  if (!opt.arch.empty()) parse_variant(opt.arch);
  Model model = load_weights(opt.weights);
  if (!opt.arch.empty() && parse_variant(opt.arch) != model.spec().variant) {
    throw DataError("weights are for the " + to_string(model.spec().variant) + " architecture, not " + opt.arch);
  }
  if (opt.depth != 0 && opt.depth != model.spec().depth) {
    throw DataError("weights are for depth " + std::to_string(model.spec().depth) + ", not " +
                    std::to_string(opt.depth));
  }
  auto [train_set, test_set] = load_data(opt.data);
  const EvalResult r = evaluate(model, test_set, opt.batch_size);
  out << "loss=" << fixed6(r.loss) << " top1_err=" << fixed6(r.top1_error) << " (" << r.correct << '/' << r.total
      << " correct)\n";
  return kExitOk;
}

int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out) {
  const auto names = gradcheck_names();
  if (opt.list) {
    for (const auto& n : names) out << n << '\n';
    return kExitOk;
  }
  bool all_passed = true;
  std::size_t ran = 0;
  for (const auto& name : names) {
    if (!opt.only.empty() && name != opt.only) continue;
    const GradCheckReport r = run_gradcheck(name, opt.seed, opt.h, opt.tol);
    ++ran;
    all_passed = all_passed && r.passed;
    std::size_t kinks = 0;
    for (const auto& in : r.inputs) kinks += in.kinks_skipped;
    char line[192];
    std::snprintf(line, sizeof(line), "%-30s max_rel_err=%.3e tol=%.1e kinks_skipped=%zu %s", name.c_str(),
                  r.max_rel_error(), r.tol, kinks, r.passed ? "PASS" : "FAIL");
    out << line << '\n';
    if (!r.passed) {
      for (const auto& in : r.inputs) {
        if (in.max_rel_error < r.tol && in.kinks_skipped == 0) continue;
        std::snprintf(line, sizeof(line), "    %-26s err=%.3e at [%zu] analytic=%.9g numerical=%.9g skipped=%zu/%zu",
                      in.name.c_str(), in.max_rel_error, in.worst_index, in.analytic, in.numerical, in.kinks_skipped,
                      in.checked + in.kinks_skipped);
        out << line << '\n';
      }
    }
  }
  if (ran == 0) throw ConfigError("unknown gradient check '" + opt.only + "'");
  out << (all_passed ? "all gradient checks passed\n" : "gradient checks FAILED\n");
  return all_passed ? kExitOk : kExitRuntime;
}

void describe(const Dataset& d, const char* label, std::ostream& out) {
  std::vector<std::size_t> histogram(kCifarClasses, 0);
  for (int l : d.labels) ++histogram[static_cast<std::size_t>(l)];
  const auto [lo, hi] = std::minmax_element(d.images.data().begin(), d.images.data().end());
  const ChannelStats stats = compute_channel_stats(d);
  out << label << ": " << d.size() << " records, pixel range [" << fixed6(*lo) << ", " << fixed6(*hi) << "]\n";
  out << "  labels:";
  for (std::size_t k = 0; k < histogram.size(); ++k) out << ' ' << k << ':' << histogram[k];
  out << "\n  channel mean: " << fixed6(stats.mean[0]) << ' ' << fixed6(stats.mean[1]) << ' ' << fixed6(stats.mean[2])
      << "\n  channel std:  " << fixed6(stats.stddev[0]) << ' ' << fixed6(stats.stddev[1]) << ' '
      << fixed6(stats.stddev[2]) << '\n';
}

int cmd_inspect(const InspectOptions& opt, std::ostream& out) {
  const auto [train_set, test_set] = load_data(opt.data);
  describe(train_set, "train", out);
  describe(test_set, "test", out);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Classic and accumulated residual networks on CIFAR-10", "acrn"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  TrainOptions train_opt;
  train_opt.config.eval_batch_size = 250;
  auto* train_cmd = app.add_subcommand("train", "Train a network and write per-epoch metrics and final weights");
  train_cmd->add_option("--arch", train_opt.arch, "Block type")->check(CLI::IsMember({"classic", "accumulated"}));
  train_cmd->add_option("--depth", train_opt.depth, "Network depth, of the form 6n+2");
  train_cmd->add_option("--epochs", train_opt.config.epochs, "Training epochs");
  train_cmd->add_option("--batch-size", train_opt.config.batch_size, "Mini-batch size");
  train_cmd->add_option("--lr", train_opt.config.base_lr, "Initial learning rate");
  train_cmd->add_option("--momentum", train_opt.config.momentum, "SGD momentum");
  train_cmd->add_option("--weight-decay", train_opt.config.weight_decay, "L2 weight decay (not applied to BN)");
  train_cmd->add_option("--milestones", train_opt.milestones, "Epochs after which the rate is multiplied by 0.1")
      ->delimiter(',')
      ->default_str("50%,80% of --epochs");
  train_cmd->add_option("--seed", train_opt.config.seed, "Seed for initialization, shuffling and augmentation");
  train_cmd->add_flag("--no-augment", train_opt.no_augment, "Disable pad-crop-flip augmentation (default: off)");
  train_cmd->add_flag("--no-wall-time", train_opt.no_wall_time,
                      "Write 0 in the wall_seconds column so reruns are byte-identical (default: off)");
  train_cmd->add_option("--threads", train_opt.threads, "Kernel worker threads")->check(CLI::PositiveNumber);
  train_cmd->add_option("--out", train_opt.out, "Metrics CSV path");
  train_cmd->add_option("--weights-out", train_opt.weights_out, "Final weights path");
  add_data_options(train_cmd, train_opt.data);

  EvalOptions eval_opt;
  auto* eval_cmd = app.add_subcommand("eval", "Report loss and top-1 error of saved weights on the test split");
  eval_cmd->add_option("--weights", eval_opt.weights, "Weights file written by train")->required();
  eval_cmd->add_option("--arch", eval_opt.arch, "Expected block type (checked against the file)")
      ->default_str("from file");
  eval_cmd->add_option("--depth", eval_opt.depth, "Expected depth (checked against the file)")
      ->default_str("from file");
  eval_cmd->add_option("--batch-size", eval_opt.batch_size, "Evaluation batch size");
  eval_cmd->add_option("--threads", eval_opt.threads, "Kernel worker threads")->check(CLI::PositiveNumber);
  add_data_options(eval_cmd, eval_opt.data);

  GradcheckOptions gc_opt;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients in 64-bit");
  gc_cmd->add_option("--tol", gc_opt.tol, "Maximum allowed relative error");
  gc_cmd->add_option("--step", gc_opt.h, "Central-difference step");
  gc_cmd->add_option("--only", gc_opt.only, "Run a single named check")->default_str("all");
  gc_cmd->add_option("--seed", gc_opt.seed, "Seed for the random inputs");
  gc_cmd->add_flag("--list", gc_opt.list, "List check names and exit (default: off)");

  InspectOptions inspect_opt;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print record counts, label histograms and channel statistics");
  add_data_options(inspect_cmd, inspect_opt.data);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_cmd) return cmd_train(train_opt, out);
    if (*eval_cmd) return cmd_eval(eval_opt, out);
    if (*gc_cmd) return cmd_gradcheck(gc_opt, out);
    if (*inspect_cmd) return cmd_inspect(inspect_opt, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace acrn
