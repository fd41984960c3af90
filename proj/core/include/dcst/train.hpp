#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dcst/data.hpp"
#include "dcst/instances.hpp"
#include "dcst/metrics.hpp"
#include "dcst/model.hpp"

namespace dcst {

struct AdamWHyper {
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// One decoupled-decay Adam update of a single buffer. `step` is the 1-based
/// step count used for bias correction.
void adamw_update(std::span<float> param, std::span<const float> grad, std::span<float> m,
                  std::span<float> v, std::int64_t step, double lr, const AdamWHyper& hp);

/// AdamW over a fixed parameter list with one learning rate per group.
class AdamW {
 public:
  AdamW(const std::vector<ParamEntry>& params, AdamWHyper hyper);

  /// Applies one update from the accumulated gradients.
  void step(double lr_main, double lr_dcb);
  std::int64_t steps() const { return step_; }
  const AdamWHyper& hyper() const { return hyper_; }

  /// Moments under "adam/m/<name>" and "adam/v/<name>", step count as metadata.
  void export_state(Checkpoint& ckpt) const;
  void import_state(const Checkpoint& ckpt);

 private:
  std::vector<ParamEntry> params_;
  std::vector<std::vector<float>> m_, v_;
  AdamWHyper hyper_;
  std::int64_t step_ = 0;
};

/// base_lr * min(1, iter / warmup); no decay afterwards.
double lr_at(std::int64_t iter, double base_lr, std::int64_t warmup_iters);

struct TrainConfig {
  ModelConfig model = ModelConfig::toy();
  SyntheticConfig data;
  AugmentConfig augment;
  /// Directory written by generate_dataset; empty means generate in memory.
  std::string data_dir;
  std::int64_t dataset_size = 200;
  double val_fraction = 0.2;

  double lr_main = 0.6e-5;
  double lr_dcb = 0.6e-6;
  std::int64_t warmup_iters = 1500;
  std::int64_t batch_size = 2;
  /// Micro-batches whose gradients are summed before each update.
  std::int64_t accumulation = 1;
  std::int64_t iterations = 2000;
  std::uint64_t seed = 1;
  AdamWHyper adamw;

  std::int64_t log_interval = 50;
  /// 0 disables periodic checkpoints.
  std::int64_t checkpoint_interval = 500;
  std::string out_dir = "run";
  std::vector<double> threshold_grid;

  void validate() const;
  /// Reads train.*, eval.*, data.*, model.*, dcb.* and fpn.* keys; rejects
  /// unknown keys.
  static TrainConfig from_config(const KeyValueConfig& kv);
  void to_config(KeyValueConfig& kv) const;
  static const std::set<std::string>& keys();
};

/// {0.30, 0.32, ..., 0.50}.
std::vector<double> default_threshold_grid();

struct TrainData {
  std::vector<SceneSample> train, val;
};
/// Loads or generates the dataset and applies the seed-stable split.
TrainData prepare_data(const TrainConfig& cfg);

/// Stacks samples into images [N, 3, H, W] and instance masks [N, 1, H, W].
/// All samples must share one size.
std::pair<Tensor, Tensor> make_batch(const std::vector<SceneSample>& samples);

struct StepLog {
  std::int64_t iteration = 0;
  double loss = 0.0;
  double lr_main = 0.0;
  double lr_dcb = 0.0;
};

/// Owns the model, the optimizer and the loss history. Every iteration draws
/// its batch from an RNG derived from (seed, iteration), so a resumed run
/// sees the same batches as an uninterrupted one.
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<SceneSample> train_set);

  /// One optimizer update; returns the mean loss over its micro-batches.
  /// Throws NumericError on a non-finite loss or gradient.
  double step();
  /// Steps until `cfg.iterations`, saving checkpoints on the configured
  /// interval and at the end.
  void run(const std::function<void(const StepLog&)>& on_log = {});

  void save(const std::filesystem::path& path) const;
  /// Restores model, optimizer, iteration counter and loss history.
  static Trainer resume(const std::filesystem::path& path, std::vector<SceneSample> train_set);

  DcstModel& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  std::int64_t iteration() const { return iteration_; }
  const std::vector<double>& losses() const { return losses_; }
  std::filesystem::path checkpoint_path() const;

 private:
  TrainConfig cfg_;
  std::vector<SceneSample> train_set_;
  DcstModel model_;
  AdamW optimizer_;
  std::int64_t iteration_ = 0;
  std::vector<double> losses_;
};

/// Score maps [1, 1, H, W] for each sample, eval mode.
std::vector<Tensor> predict_scores(DcstModel& model, const std::vector<SceneSample>& samples);
EvaluationReport evaluate_scores(const std::vector<Tensor>& scores,
                                 const std::vector<SceneSample>& samples,
                                 const ExtractOptions& options);
EvaluationReport evaluate(DcstModel& model, const std::vector<SceneSample>& samples,
                          const ExtractOptions& options);

struct SweepRow {
  double threshold = 0.0;
  EvaluationReport report;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  /// First grid point reaching the best value.
  double best_f1_threshold = 0.0;
  double best_mae_threshold = 0.0;

  const SweepRow& best_f1() const;
  const SweepRow& best_mae() const;
  /// threshold,precision,recall,f1,mae,mse,nae
  void write_csv(std::ostream& out) const;
};

/// Every grid point must lie in (0, 1).
SweepResult threshold_sweep(const std::vector<Tensor>& scores,
                            const std::vector<SceneSample>& samples,
                            const std::vector<double>& grid, const ExtractOptions& base = {});
SweepResult threshold_sweep(DcstModel& model, const std::vector<SceneSample>& samples,
                            const std::vector<double>& grid, const ExtractOptions& base = {});

}  // namespace dcst
