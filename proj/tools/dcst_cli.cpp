// dcst: train, evaluate and run the crowd localization model.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numeric failure during training.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dcst/data.hpp"
#include "dcst/error.hpp"
#include "dcst/image_io.hpp"
#include "dcst/train.hpp"

namespace {

using namespace dcst;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// `key=value` overrides given on the command line.
KeyValueConfig with_overrides(KeyValueConfig kv, const std::vector<std::string>& sets) {
  std::string text;
  for (const auto& s : sets) text += s + "\n";
  kv.merge(KeyValueConfig::parse_string(text));
  return kv;
}

ExtractOptions extract_options(double threshold, std::int64_t min_area, int connectivity) {
  if (connectivity != 4 && connectivity != 8) throw ConfigError("--connectivity must be 4 or 8");
  ExtractOptions o;
  o.threshold = threshold;
  o.min_area = min_area;
  o.connectivity = connectivity == 4 ? Connectivity::four : Connectivity::eight;
  return o;
}

void print_sweep(const SweepResult& sweep, std::ostream& out) {
  out << "best F1  " << sweep.best_f1().report.localization().f1 << " at threshold "
      << sweep.best_f1_threshold << "\n"
      << "best MAE " << sweep.best_mae().report.counting().mae << " at threshold "
      << sweep.best_mae_threshold << "\n";
}

int run_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& resume) {
  auto kv = with_overrides(KeyValueConfig::load(config_path), sets);
  const auto cfg = TrainConfig::from_config(kv);
  const auto data = prepare_data(cfg);
  std::printf("train %zu, val %zu samples\n", data.train.size(), data.val.size());

  Trainer trainer = resume.empty() ? Trainer(cfg, data.train) : Trainer::resume(resume, data.train);
  if (!resume.empty()) std::printf("resumed at iteration %lld\n", static_cast<long long>(trainer.iteration()));
  trainer.run([](const StepLog& log) {
    std::printf("iter %6lld  loss %.6f  lr %.3g / %.3g\n", static_cast<long long>(log.iteration),
                log.loss, log.lr_main, log.lr_dcb);
    std::fflush(stdout);
  });

  const auto grid = cfg.threshold_grid.empty() ? default_threshold_grid() : cfg.threshold_grid;
  const auto sweep = threshold_sweep(trainer.model(), data.val, grid);
  std::ofstream csv(std::filesystem::path(cfg.out_dir) / "sweep.csv");
  sweep.write_csv(csv);
  print_sweep(sweep, std::cout);
  sweep.best_f1().report.write_table(std::cout);
  std::printf("checkpoint %s\n", trainer.checkpoint_path().string().c_str());
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& dir, const ExtractOptions& opts,
             bool key_values) {
  auto model = DcstModel::from_checkpoint(load_checkpoint(ckpt));
  const auto samples = load_dataset(dir);
  const auto report = evaluate(model, samples, opts);
  if (key_values) report.write_key_values(std::cout);
  else report.write_table(std::cout);
  return 0;
}

// Dimmed luminance, foreground in white, centroids in black.
Tensor overlay(const Tensor& image, const Tensor& scores, const std::vector<Instance>& found,
               double threshold) {
  const auto h = image.dim(1), w = image.dim(2);
  auto img = image.data();
  auto sc = scores.data();
  std::vector<float> out(static_cast<std::size_t>(h * w));
  for (std::int64_t i = 0; i < h * w; ++i) {
    const float luma = 0.299f * img[i] + 0.587f * img[h * w + i] + 0.114f * img[2 * h * w + i];
    out[i] = sc[i] > threshold ? 1.0f : 0.6f * luma;
  }
  for (const auto& k : found) {
    const auto y = std::clamp<std::int64_t>(std::lround(k.y), 0, h - 1);
    const auto x = std::clamp<std::int64_t>(std::lround(k.x), 0, w - 1);
    out[y * w + x] = 0.0f;
  }
  return Tensor::from({1, h, w}, std::move(out));
}

int run_localize(const std::string& ckpt, const std::string& image_path, const std::string& out,
                 const ExtractOptions& opts, bool save_scores) {
  auto model = DcstModel::from_checkpoint(load_checkpoint(ckpt));
  const auto image = read_pnm(image_path);
  if (image.dim(0) != 3) throw DataError(image_path + ": expected a colour (P6) image");
  SceneSample s;
  s.image = image;
  const auto scores = predict_scores(model, {s}).front();
  const auto found = localize(scores, opts);
  {
    std::ofstream txt(out + ".txt");
    if (!txt) throw DataError("cannot write " + out + ".txt");
    write_predictions(txt, found, opts.threshold);
  }
  write_pgm(out + ".pgm", overlay(image, scores, found, opts.threshold));
  if (save_scores) write_pgm(out + "_scores.pgm", scores);
  std::printf("%zu instances -> %s.txt, %s.pgm\n", found.size(), out.c_str(), out.c_str());
  return 0;
}

int run_sweep(const std::string& ckpt, const std::string& dir, std::vector<double> grid,
              const std::string& csv_path, const ExtractOptions& base) {
  if (grid.empty()) grid = default_threshold_grid();
  auto model = DcstModel::from_checkpoint(load_checkpoint(ckpt));
  const auto samples = load_dataset(dir);
  const auto sweep = threshold_sweep(model, samples, grid, base);
  if (csv_path.empty()) {
    sweep.write_csv(std::cout);
  } else {
    std::ofstream csv(csv_path);
    if (!csv) throw DataError("cannot write " + csv_path);
    sweep.write_csv(csv);
  }
  print_sweep(sweep, csv_path.empty() ? std::cerr : std::cout);
  return 0;
}

int run_gen_data(const std::string& config_path, const std::vector<std::string>& sets,
                 const std::string& out, std::int64_t count) {
  KeyValueConfig kv = config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(config_path);
  kv = with_overrides(std::move(kv), sets);
  kv.check_known(TrainConfig::keys());
  const auto cfg = SyntheticConfig::from_config(kv);
  if (count <= 0) count = kv.get_int("data.count", 200);
  generate_dataset(cfg, count, out);
  std::printf("wrote %lld scenes to %s\n", static_cast<long long>(count), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DCST crowd localization: training, evaluation and inference"};
  app.require_subcommand(1);

  std::string config, ckpt, data, image, out, resume, csv;
  std::vector<std::string> sets;
  std::vector<double> grid;
  double threshold = 0.5;
  std::int64_t min_area = 1, count = 0;
  int connectivity = 8;
  bool key_values = false, save_scores = false;

  auto add_extract = [&](CLI::App* cmd) {
    cmd->add_option("--min-area", min_area, "Drop components smaller than this")->check(CLI::PositiveNumber);
    cmd->add_option("--connectivity", connectivity, "4 or 8")->check(CLI::IsMember({4, 8}));
  };

  auto* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("--config", config, "key = value config file")->required()->check(CLI::ExistingFile);
  train->add_option("--set", sets, "Override a config entry (key=value)");
  train->add_option("--resume", resume, "Continue from a training checkpoint")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset directory");
  eval->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "Dataset directory with manifest.txt")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--threshold", threshold, "Binarization threshold")->check(CLI::Range(0.0, 1.0));
  eval->add_flag("--kv", key_values, "Print key=value lines instead of a table");
  add_extract(eval);

  auto* loc = app.add_subcommand("localize", "Predict head positions in one image");
  loc->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  loc->add_option("--image", image, "Binary PPM image")->required()->check(CLI::ExistingFile);
  loc->add_option("--out", out, "Output prefix for .txt and .pgm")->required();
  loc->add_option("--threshold", threshold, "Binarization threshold")->check(CLI::Range(0.0, 1.0));
  loc->add_flag("--scores", save_scores, "Also write the raw score map");
  add_extract(loc);

  auto* sweep = app.add_subcommand("sweep", "Evaluate a grid of thresholds");
  sweep->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  sweep->add_option("--data", data, "Dataset directory with manifest.txt")->required()->check(CLI::ExistingDirectory);
  sweep->add_option("--grid", grid, "Thresholds (default 0.30, 0.32, ..., 0.50)")->delimiter(',');
  sweep->add_option("--csv", csv, "Write the table here instead of stdout");
  add_extract(sweep);

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset");
  gen->add_option("--config", config, "key = value config file (data.* keys)")->check(CLI::ExistingFile);
  gen->add_option("--set", sets, "Override a config entry (key=value)");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--count", count, "Number of scenes (default data.count or 200)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return run_train(config, sets, resume);
    if (*eval) return run_eval(ckpt, data, extract_options(threshold, min_area, connectivity), key_values);
    if (*loc) {
      return run_localize(ckpt, image, out, extract_options(threshold, min_area, connectivity),
                          save_scores);
    }
    if (*sweep) return run_sweep(ckpt, data, grid, csv, extract_options(0.5, min_area, connectivity));
    if (*gen) return run_gen_data(config, sets, out, count);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
