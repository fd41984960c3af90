#include "dcst/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "dcst/error.hpp"
#include "dcst/ops.hpp"

namespace dcst {

// ------------------------------------------------------------------ AdamW

void adamw_update(std::span<float> param, std::span<const float> grad, std::span<float> m,
                  std::span<float> v, std::int64_t step, double lr, const AdamWHyper& hp) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw ShapeError("adamw_update: buffer sizes differ");
  }
  if (step < 1) throw ShapeError("adamw_update: step counts from 1");
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
  const double decay = 1.0 - lr * hp.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
    const double vi = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double p = param[i] * decay;
    param[i] = static_cast<float>(p - lr * (mi / c1) / (std::sqrt(vi / c2) + hp.eps));
  }
}

AdamW::AdamW(const std::vector<ParamEntry>& params, AdamWHyper hyper)
    : params_(params), hyper_(hyper) {
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0f);
    v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0f);
  }
}

void AdamW::step(double lr_main, double lr_dcb) {
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& t = params_[i].tensor;
    const double lr = params_[i].group == ParamGroup::dcb ? lr_dcb : lr_main;
    adamw_update(t.mutable_data(), t.grad(), m_[i], v_[i], step_, lr, hyper_);
  }
}

void AdamW::export_state(Checkpoint& ckpt) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& shape = params_[i].tensor.shape();
    ckpt.tensors["adam/m/" + params_[i].name] = Tensor::from(shape, m_[i]);
    ckpt.tensors["adam/v/" + params_[i].name] = Tensor::from(shape, v_[i]);
  }
  ckpt.metadata["state.adam_step"] = std::to_string(step_);
}

void AdamW::import_state(const Checkpoint& ckpt) {
  auto fetch = [&](const std::string& key, std::vector<float>& dst) {
    auto it = ckpt.tensors.find(key);
    if (it == ckpt.tensors.end()) throw ConfigError("checkpoint lacks optimizer entry " + key);
    auto src = it->second.data();
    if (src.size() != dst.size()) throw ConfigError("optimizer entry " + key + " has the wrong size");
    std::copy(src.begin(), src.end(), dst.begin());
  };
  for (std::size_t i = 0; i < params_.size(); ++i) {
    fetch("adam/m/" + params_[i].name, m_[i]);
    fetch("adam/v/" + params_[i].name, v_[i]);
  }
  auto it = ckpt.metadata.find("state.adam_step");
  if (it == ckpt.metadata.end()) throw ConfigError("checkpoint lacks the optimizer step count");
  step_ = std::stoll(it->second);
}

double lr_at(std::int64_t iter, double base_lr, std::int64_t warmup_iters) {
  if (iter < 0) throw ConfigError("lr_at: iteration must be non-negative");
  if (warmup_iters <= 0 || iter >= warmup_iters) return base_lr;
  return base_lr * static_cast<double>(iter) / static_cast<double>(warmup_iters);
}

// ----------------------------------------------------------------- config

std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(0.30 + 0.02 * i);
  return grid;
}

void TrainConfig::validate() const {
  model.validate();
  data.validate();
  if (!(lr_main >= 0.0) || !(lr_dcb >= 0.0)) throw ConfigError("learning rates must be >= 0");
  if (warmup_iters < 0) throw ConfigError("train.warmup_iters must be >= 0");
  if (batch_size < 1 || accumulation < 1) {
    throw ConfigError("train.batch_size and train.accumulation must be positive");
  }
  if (iterations < 0) throw ConfigError("train.iterations must be >= 0");
  if (dataset_size < 2) throw ConfigError("data.count must be at least 2");
  if (val_fraction <= 0.0 || val_fraction >= 1.0) {
    throw ConfigError("data.val_fraction must lie in (0, 1)");
  }
  if (augment.min_scale <= 0.0 || augment.max_scale < augment.min_scale) {
    throw ConfigError("augment scale range must satisfy 0 < min <= max");
  }
  if (augment.crop_h < 1 || augment.crop_w < 1) throw ConfigError("augment crop must be positive");
  if (log_interval < 1 || checkpoint_interval < 0) {
    throw ConfigError("train.log_interval must be positive, checkpoint_interval >= 0");
  }
  for (double t : threshold_grid)
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("eval.thresholds must lie in (0, 1)");
}

const std::set<std::string>& TrainConfig::keys() {
  static const std::set<std::string> k = [] {
    std::set<std::string> s = {
        "train.lr_main",      "train.lr_dcb",        "train.warmup_iters",
        "train.batch_size",   "train.accumulation",  "train.iterations",
        "train.seed",         "train.beta1",         "train.beta2",
        "train.eps",          "train.weight_decay",  "train.log_interval",
        "train.checkpoint_interval", "train.out_dir", "data.dir",
        "data.count",         "data.val_fraction",   "augment.flip_probability",
        "augment.min_scale",  "augment.max_scale",   "augment.crop_h",
        "augment.crop_w",     "eval.thresholds"};
    s.insert(ModelConfig::keys().begin(), ModelConfig::keys().end());
    s.insert(SyntheticConfig::keys().begin(), SyntheticConfig::keys().end());
    return s;
  }();
  return k;
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv) {
  kv.check_known(keys());
  TrainConfig c;
  c.model = ModelConfig::from_config(kv);
  c.data = SyntheticConfig::from_config(kv);
  c.data_dir = kv.get_string("data.dir", c.data_dir);
  c.dataset_size = kv.get_int("data.count", c.dataset_size);
  c.val_fraction = kv.get_double("data.val_fraction", c.val_fraction);
  c.augment.flip_probability = kv.get_double("augment.flip_probability", c.augment.flip_probability);
  c.augment.min_scale = kv.get_double("augment.min_scale", c.augment.min_scale);
  c.augment.max_scale = kv.get_double("augment.max_scale", c.augment.max_scale);
  c.augment.crop_h = kv.get_int("augment.crop_h", c.augment.crop_h);
  c.augment.crop_w = kv.get_int("augment.crop_w", c.augment.crop_w);
  c.lr_main = kv.get_double("train.lr_main", c.lr_main);
  // The DCB rate follows the main rate (one tenth) unless given explicitly.
  c.lr_dcb = kv.get_double("train.lr_dcb", c.lr_main / 10.0);
  c.warmup_iters = kv.get_int("train.warmup_iters", c.warmup_iters);
  c.batch_size = kv.get_int("train.batch_size", c.batch_size);
  c.accumulation = kv.get_int("train.accumulation", c.accumulation);
  c.iterations = kv.get_int("train.iterations", c.iterations);
  c.seed = static_cast<std::uint64_t>(kv.get_int("train.seed", static_cast<std::int64_t>(c.seed)));
  c.adamw.beta1 = kv.get_double("train.beta1", c.adamw.beta1);
  c.adamw.beta2 = kv.get_double("train.beta2", c.adamw.beta2);
  c.adamw.eps = kv.get_double("train.eps", c.adamw.eps);
  c.adamw.weight_decay = kv.get_double("train.weight_decay", c.adamw.weight_decay);
  c.log_interval = kv.get_int("train.log_interval", c.log_interval);
  c.checkpoint_interval = kv.get_int("train.checkpoint_interval", c.checkpoint_interval);
  c.out_dir = kv.get_string("train.out_dir", c.out_dir);
  c.threshold_grid = kv.get_double_list("eval.thresholds", c.threshold_grid);
  c.validate();
  return c;
}

void TrainConfig::to_config(KeyValueConfig& kv) const {
  model.to_config(kv);
  data.to_config(kv);
  if (!data_dir.empty()) kv.set("data.dir", data_dir);
  kv.set("data.count", dataset_size);
  kv.set("data.val_fraction", val_fraction);
  kv.set("augment.flip_probability", augment.flip_probability);
  kv.set("augment.min_scale", augment.min_scale);
  kv.set("augment.max_scale", augment.max_scale);
  kv.set("augment.crop_h", augment.crop_h);
  kv.set("augment.crop_w", augment.crop_w);
  kv.set("train.lr_main", lr_main);
  kv.set("train.lr_dcb", lr_dcb);
  kv.set("train.warmup_iters", warmup_iters);
  kv.set("train.batch_size", batch_size);
  kv.set("train.accumulation", accumulation);
  kv.set("train.iterations", iterations);
  kv.set("train.seed", static_cast<std::int64_t>(seed));
  kv.set("train.beta1", adamw.beta1);
  kv.set("train.beta2", adamw.beta2);
  kv.set("train.eps", adamw.eps);
  kv.set("train.weight_decay", adamw.weight_decay);
  kv.set("train.log_interval", log_interval);
  kv.set("train.checkpoint_interval", checkpoint_interval);
  kv.set("train.out_dir", out_dir);
  kv.set("eval.thresholds", threshold_grid);
}

// ------------------------------------------------------------------- data

TrainData prepare_data(const TrainConfig& cfg) {
  std::vector<SceneSample> all;
  if (cfg.data_dir.empty()) {
    for (std::int64_t i = 0; i < cfg.dataset_size; ++i)
      all.push_back(generate_scene(cfg.data, static_cast<std::uint64_t>(i)));
  } else {
    all = load_dataset(cfg.data_dir);
  }
  if (all.size() < 2) throw DataError("need at least two samples to split");
  // Split on the data seed so runs with different training seeds share it.
  auto [tr, va] = split_indices(all.size(), cfg.val_fraction, cfg.data.seed);
  TrainData out;
  for (auto i : tr) out.train.push_back(all[i]);
  for (auto i : va) out.val.push_back(all[i]);
  return out;
}

std::pair<Tensor, Tensor> make_batch(const std::vector<SceneSample>& samples) {
  if (samples.empty()) throw ShapeError("make_batch: no samples");
  const auto h = samples[0].height(), w = samples[0].width();
  const auto n = static_cast<std::int64_t>(samples.size());
  std::vector<float> images, masks;
  images.reserve(static_cast<std::size_t>(n * 3 * h * w));
  masks.reserve(static_cast<std::size_t>(n * h * w));
  for (const auto& s : samples) {
    if (s.height() != h || s.width() != w) throw ShapeError("make_batch: samples differ in size");
    auto img = s.image.data();
    images.insert(images.end(), img.begin(), img.end());
    auto m = render_instance_mask(s);
    masks.insert(masks.end(), m.data().begin(), m.data().end());
  }
  return {Tensor::from({n, 3, h, w}, std::move(images)), Tensor::from({n, 1, h, w}, std::move(masks))};
}

// ---------------------------------------------------------------- trainer

Trainer::Trainer(TrainConfig cfg, std::vector<SceneSample> train_set)
    : cfg_((cfg.validate(), std::move(cfg))),
      train_set_(std::move(train_set)),
      model_(cfg_.model, cfg_.seed),
      optimizer_(model_.parameters().params(), cfg_.adamw) {
  if (train_set_.empty()) throw DataError("training set is empty");
}

double Trainer::step() {
  auto& params = model_.parameters();
  params.zero_grad();
  Rng rng = Rng::derive(cfg_.seed, 0x7a11000000ull + static_cast<std::uint64_t>(iteration_));
  const auto last = static_cast<std::int64_t>(train_set_.size()) - 1;
  double total = 0.0;
  for (std::int64_t micro = 0; micro < cfg_.accumulation; ++micro) {
    std::vector<SceneSample> batch;
    for (std::int64_t b = 0; b < cfg_.batch_size; ++b)
      batch.push_back(augment(train_set_[static_cast<std::size_t>(rng.uniform_int(0, last))],
                              cfg_.augment, rng));
    auto [images, masks] = make_batch(batch);
    auto loss = mse_loss(model_.forward(images, Mode::train), masks);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NumericError("non-finite loss at iteration " + std::to_string(iteration_));
    }
    total += value;
    scale(loss, 1.0f / static_cast<float>(cfg_.accumulation)).backward();
  }
  for (const auto& p : params.params())
    for (float g : p.tensor.grad())
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient for " + p.name + " at iteration " +
                           std::to_string(iteration_));
      }
  ++iteration_;
  optimizer_.step(lr_at(iteration_, cfg_.lr_main, cfg_.warmup_iters),
                  lr_at(iteration_, cfg_.lr_dcb, cfg_.warmup_iters));
  const double mean_loss = total / static_cast<double>(cfg_.accumulation);
  losses_.push_back(mean_loss);
  return mean_loss;
}

std::filesystem::path Trainer::checkpoint_path() const {
  return std::filesystem::path(cfg_.out_dir) / "model.ckpt";
}

void Trainer::run(const std::function<void(const StepLog&)>& on_log) {
  std::filesystem::create_directories(cfg_.out_dir);
  while (iteration_ < cfg_.iterations) {
    step();
    const bool last = iteration_ == cfg_.iterations;
    if (on_log && (iteration_ % cfg_.log_interval == 0 || last)) {
      const auto window = std::min<std::size_t>(losses_.size(), static_cast<std::size_t>(cfg_.log_interval));
      StepLog log;
      log.iteration = iteration_;
      log.loss = std::accumulate(losses_.end() - static_cast<std::ptrdiff_t>(window), losses_.end(), 0.0) /
                 static_cast<double>(window);
      log.lr_main = lr_at(iteration_, cfg_.lr_main, cfg_.warmup_iters);
      log.lr_dcb = lr_at(iteration_, cfg_.lr_dcb, cfg_.warmup_iters);
      on_log(log);
    }
    if (last || (cfg_.checkpoint_interval > 0 && iteration_ % cfg_.checkpoint_interval == 0)) {
      save(checkpoint_path());
    }
  }
  std::ofstream curve(std::filesystem::path(cfg_.out_dir) / "loss.csv");
  curve << "iteration,loss\n" << std::setprecision(8);
  for (std::size_t i = 0; i < losses_.size(); ++i) curve << i + 1 << ',' << losses_[i] << '\n';
}

void Trainer::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  model_.export_state(ckpt);
  optimizer_.export_state(ckpt);
  KeyValueConfig kv;
  cfg_.to_config(kv);
  for (const auto& [k, v] : kv.entries()) ckpt.metadata[k] = v;
  ckpt.metadata["state.iteration"] = std::to_string(iteration_);
  std::ostringstream hist;
  hist << std::setprecision(17);
  for (double l : losses_) hist << l << ' ';
  ckpt.metadata["state.losses"] = hist.str();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_checkpoint(path, ckpt);
}

Trainer Trainer::resume(const std::filesystem::path& path, std::vector<SceneSample> train_set) {
  const auto ckpt = load_checkpoint(path);
  KeyValueConfig kv;
  for (const auto& [k, v] : ckpt.metadata)
    if (TrainConfig::keys().count(k)) kv.set(k, v);
  Trainer t(TrainConfig::from_config(kv), std::move(train_set));
  t.model_.import_state(ckpt);
  t.optimizer_.import_state(ckpt);
  auto it = ckpt.metadata.find("state.iteration");
  if (it == ckpt.metadata.end()) throw ConfigError(path.string() + ": not a training checkpoint");
  t.iteration_ = std::stoll(it->second);
  std::istringstream hist(ckpt.metadata.count("state.losses") ? ckpt.metadata.at("state.losses") : "");
  for (double l; hist >> l;) t.losses_.push_back(l);
  return t;
}

// ------------------------------------------------------------- evaluation

std::vector<Tensor> predict_scores(DcstModel& model, const std::vector<SceneSample>& samples) {
  NoGradGuard no_grad;
  std::vector<Tensor> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    auto img = s.image.data();
    auto x = Tensor::from({1, 3, s.height(), s.width()}, std::vector<float>(img.begin(), img.end()));
    out.push_back(model.forward(x, Mode::eval));
  }
  return out;
}

EvaluationReport evaluate_scores(const std::vector<Tensor>& scores,
                                 const std::vector<SceneSample>& samples,
                                 const ExtractOptions& options) {
  if (scores.size() != samples.size()) throw ShapeError("evaluate: one score map per sample");
  EvaluationReport rep;
  rep.threshold = options.threshold;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto inst = localize(scores[i], options);
    std::vector<Point> pts;
    pts.reserve(inst.size());
    for (const auto& k : inst) pts.push_back({k.x, k.y});
    rep.add(match_points(pts, samples[i].heads), samples[i].heads.size(), inst.size());
  }
  return rep;
}

EvaluationReport evaluate(DcstModel& model, const std::vector<SceneSample>& samples,
                          const ExtractOptions& options) {
  return evaluate_scores(predict_scores(model, samples), samples, options);
}

const SweepRow& SweepResult::best_f1() const {
  for (const auto& r : rows)
    if (r.threshold == best_f1_threshold) return r;
  throw ConfigError("empty sweep");
}

const SweepRow& SweepResult::best_mae() const {
  for (const auto& r : rows)
    if (r.threshold == best_mae_threshold) return r;
  throw ConfigError("empty sweep");
}

void SweepResult::write_csv(std::ostream& out) const {
  out << "threshold,precision,recall,f1,mae,mse,nae\n";
  char buf[160];
  for (const auto& r : rows) {
    const auto loc = r.report.localization();
    const auto cnt = r.report.counting();
    std::snprintf(buf, sizeof buf, "%.2f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.threshold, loc.precision,
                  loc.recall, loc.f1, cnt.mae, cnt.mse, cnt.nae);
    out << buf;
  }
}

SweepResult threshold_sweep(const std::vector<Tensor>& scores,
                            const std::vector<SceneSample>& samples,
                            const std::vector<double>& grid, const ExtractOptions& base) {
  if (grid.empty()) throw ConfigError("threshold grid is empty");
  for (double t : grid)
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("thresholds must lie in (0, 1)");
  SweepResult res;
  double best_f1 = -1.0, best_mae = 0.0;
  for (double t : grid) {
    ExtractOptions opts = base;
    opts.threshold = t;
    SweepRow row{t, evaluate_scores(scores, samples, opts)};
    const double f1 = row.report.localization().f1;
    const double mae = row.report.counting().mae;
    if (res.rows.empty() || f1 > best_f1) {
      best_f1 = f1;
      res.best_f1_threshold = t;
    }
    if (res.rows.empty() || mae < best_mae) {
      best_mae = mae;
      res.best_mae_threshold = t;
    }
    res.rows.push_back(std::move(row));
  }
  return res;
}

SweepResult threshold_sweep(DcstModel& model, const std::vector<SceneSample>& samples,
                            const std::vector<double>& grid, const ExtractOptions& base) {
  return threshold_sweep(predict_scores(model, samples), samples, grid, base);
}

}  // namespace dcst
