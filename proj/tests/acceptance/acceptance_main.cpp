// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any hard
// criterion fails. Criterion 7 is reported but never fails the run.
//
//   dcst_acceptance [--work DIR] [--ablation-iters N] [--skip-training]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "dcst/dcb.hpp"
#include "dcst/instances.hpp"
#include "dcst/metrics.hpp"
#include "dcst/swin.hpp"
#include "dcst/train.hpp"
#include "grad_harness.hpp"
#include "op_cases.hpp"
#include "oracles.hpp"
#include "pipeline_check.hpp"

namespace {

using namespace dcst;
using Clock = std::chrono::steady_clock;

// Tolerances and budgets, fixed here so a run cannot be tuned after the fact.
constexpr double kF1Tolerance = 0.1;            // percentage points
constexpr double kOpGradTolerance = 1e-3;
constexpr double kPipelineGradTolerance = 1e-2;
constexpr std::uint64_t kPipelineSeeds[] = {1, 2, 3};
constexpr int kComponentTrials = 200;
constexpr int kMatchingTrials = 500;
constexpr int kShapeTrials = 100;
constexpr std::int64_t kTrainIterations = 2000;
constexpr double kMinValF1 = 0.85;
constexpr std::int64_t kLossBlock = 50;
constexpr double kMaxKendallTau = -0.5;
constexpr int kAblationSeeds = 3;

int hard_failures = 0;

struct Line {
  explicit Line(int criterion) : id(criterion) {}

  int id;
  Clock::time_point start = Clock::now();
  std::ostringstream detail;

  void finish(bool ok, bool soft = false) {
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    if (!ok && !soft) ++hard_failures;
    std::printf("criterion %d: %s%s  [%.1fs] %s\n", id, ok ? "PASS" : "FAIL", soft ? " (soft)" : "",
                secs, detail.str().c_str());
    std::fflush(stdout);
  }
};

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.data(), y = b.data();
  return std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0;
}

void metric_reproduction() {
  Line line{1};
  const double a = localization_metrics_from_pr(0.822, 0.734).f1 * 100.0;
  const double b = localization_metrics_from_pr(0.841, 0.790).f1 * 100.0;
  line.detail << "F1 " << a << " (want 77.5), " << b << " (want 81.4)";
  line.finish(std::abs(a - 77.5) <= kF1Tolerance && std::abs(b - 81.4) <= kF1Tolerance);
}

void gradient_suite() {
  Line line{2};
  double worst_op = 0.0;
  std::string worst_name;
  for (auto& c : testing::op_gradient_cases()) {
    const double e = testing::check_gradients(c.fn, c.inputs).worst();
    if (e > worst_op) worst_op = e, worst_name = c.name;
  }
  double worst_pipe = 0.0;
  for (auto seed : kPipelineSeeds)
    for (const auto& r : testing::pipeline_gradient_check(seed).reports)
      worst_pipe = std::max(worst_pipe, r.error);
  line.detail << "ops worst " << worst_op << " (" << worst_name << "), pipeline worst "
              << worst_pipe;
  line.finish(worst_op < kOpGradTolerance && worst_pipe < kPipelineGradTolerance);
}

void receptive_field() {
  Line line{3};
  bool ok = true;
  const std::int64_t want[] = {9, 11, 15};
  const std::int64_t second[] = {2, 3, 5};
  for (int i = 0; i < 3; ++i) {
    auto [h, w] = testing::dcb_footprint(2, second[i]);
    line.detail << "{2," << second[i] << "} " << h << "x" << w << "  ";
    ok = ok && h == want[i] && w == want[i];
  }
  line.finish(ok);
}

void structural_bijections() {
  Line line{4};
  Rng rng(404);
  int bad = 0;
  for (int t = 0; t < kShapeTrials; ++t) {
    const auto n = rng.uniform_int(1, 3), h = rng.uniform_int(1, 20), w = rng.uniform_int(1, 20);
    const auto c = rng.uniform_int(1, 8), m = rng.uniform_int(1, 8);
    auto g = TokenGrid::wrap(uniform_tensor({n, h * w, c}, rng, -1, 1), h, w);
    auto back = window_reverse(window_partition(g, m), m, h, w);
    if (back.height != h || back.width != w || !bit_equal(back.tokens, g.tokens)) ++bad;
    const auto dy = rng.uniform_int(-h, h), dx = rng.uniform_int(-w, w);
    if (!bit_equal(cyclic_shift(cyclic_shift(g, dy, dx), -dy, -dx).tokens, g.tokens)) ++bad;
    auto round = map_to_tokens(tokens_to_map(g));
    if (round.height != h || round.width != w || !bit_equal(round.tokens, g.tokens)) ++bad;
  }

  // DCB after every stage of the toy encoder: same grids as without it.
  auto cfg = ModelConfig::toy();
  DcbConfig all = cfg.dcb;
  all.stages = {1, 2, 3, 4};
  DcbConfig none = cfg.dcb;
  none.stages.clear();
  Rng r1(5), r2(5);
  SwinEncoder with(cfg.encoder, all, r1), without(cfg.encoder, none, r2);
  auto img = uniform_tensor({2, 3, 64, 64}, rng, 0, 1);
  int dcb_bad = 0;
  for (Mode mode : {Mode::train, Mode::eval}) {
    auto a = with.forward(img, mode);
    auto b = without.forward(img, mode);
    for (int s = 0; s < 4; ++s) {
      if (a[s].height != b[s].height || a[s].width != b[s].width ||
          a[s].tokens.shape() != b[s].tokens.shape())
        ++dcb_bad;
      auto out = map_to_tokens(with.dcbs[s]->forward(tokens_to_map(b[s]), mode));
      if (out.token_count() != b[s].token_count() || out.channels != b[s].channels) ++dcb_bad;
    }
  }
  line.detail << kShapeTrials << " random shapes, " << bad << " roundtrip mismatches; "
              << dcb_bad << " DCB shape mismatches over 4 stages x 2 modes";
  line.finish(bad == 0 && dcb_bad == 0);
}

void oracle_equivalences() {
  Line line{5};
  Rng rng(505);
  int cc_bad = 0;
  for (int t = 0; t < kComponentTrials; ++t) {
    auto b = testing::random_map(rng, rng.uniform_int(1, 64), rng.uniform_int(1, 64), rng.uniform(0.1, 0.7));
    const bool eight = t % 2 == 0;
    if (connected_components(b, eight ? Connectivity::eight : Connectivity::four).labels !=
        testing::flood_labels(b, eight))
      ++cc_bad;
  }
  int match_bad = 0;
  for (int t = 0; t < kMatchingTrials; ++t) {
    std::vector<Point> preds(static_cast<std::size_t>(rng.uniform_int(0, 6)));
    std::vector<HeadAnnotation> gts(static_cast<std::size_t>(rng.uniform_int(0, 6)));
    for (auto& p : preds) p = {rng.uniform(0, 20), rng.uniform(0, 20)};
    for (auto& g : gts) g = {rng.uniform(0, 20), rng.uniform(0, 20), rng.uniform(1, 12), rng.uniform(1, 12)};
    const auto r = match_points(preds, gts);
    double dist = 0.0;
    bool feasible = r.tp.size() + r.fp.size() == preds.size() && r.tp.size() + r.fn.size() == gts.size();
    for (auto [i, j] : r.tp) {
      const double d = std::hypot(preds[i].x - gts[j].x, preds[i].y - gts[j].y);
      feasible = feasible && d <= gts[j].sigma();
      dist += d;
    }
    const auto best = testing::exhaustive_assignment(preds, gts);
    if (!feasible || static_cast<int>(r.tp.size()) != best.count || std::abs(dist - best.distance) > 1e-9)
      ++match_bad;
  }
  line.detail << "components " << kComponentTrials - cc_bad << "/" << kComponentTrials
              << ", matching " << kMatchingTrials - match_bad << "/" << kMatchingTrials;
  line.finish(cc_bad == 0 && match_bad == 0);
}

TrainConfig toy_training(std::uint64_t seed, std::int64_t iterations, const std::filesystem::path& dir) {
  TrainConfig c;
  c.lr_main = 1e-3;
  c.lr_dcb = 1e-4;
  c.warmup_iters = 100;
  c.iterations = iterations;
  c.seed = seed;
  c.checkpoint_interval = 0;
  c.out_dir = dir.string();
  return c;
}

// Kendall's tau between block index and block mean.
double kendall_tau(const std::vector<double>& v) {
  std::int64_t conc = 0, disc = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i + 1; j < v.size(); ++j) {
      if (v[j] > v[i]) ++conc;
      else if (v[j] < v[i]) ++disc;
    }
  const auto pairs = static_cast<double>(v.size() * (v.size() - 1) / 2);
  return pairs > 0 ? (conc - disc) / pairs : 0.0;
}

std::vector<double> block_means(const std::vector<double>& losses, std::int64_t block) {
  std::vector<double> out;
  for (std::size_t i = 0; i + block <= losses.size(); i += block)
    out.push_back(std::accumulate(losses.begin() + i, losses.begin() + i + block, 0.0) / block);
  return out;
}

bool same_report(const EvaluationReport& a, const EvaluationReport& b) {
  return a.tp == b.tp && a.fp == b.fp && a.fn == b.fn && a.gt_counts == b.gt_counts &&
         a.pred_counts == b.pred_counts;
}

void sweep_mechanics(DcstModel& model, const std::vector<SceneSample>& val) {
  Line line{8};
  const auto grid = default_threshold_grid();
  const auto sweep = threshold_sweep(model, val, grid);
  bool ok = sweep.rows.size() == 11;
  double best_f1 = -1.0, best_mae = 1e300, f1_at = 0.0, mae_at = 0.0;
  for (std::size_t i = 0; i < grid.size() && ok; ++i) {
    ExtractOptions o;
    o.threshold = grid[i];
    const auto direct = evaluate(model, val, o);
    ok = ok && sweep.rows[i].threshold == grid[i] && same_report(direct, sweep.rows[i].report);
    const double f1 = direct.localization().f1, mae = direct.counting().mae;
    if (f1 > best_f1) best_f1 = f1, f1_at = grid[i];
    if (mae < best_mae) best_mae = mae, mae_at = grid[i];
  }
  ok = ok && sweep.best_f1_threshold == f1_at && sweep.best_mae_threshold == mae_at;
  line.detail << sweep.rows.size() << " rows; argmax F1 " << sweep.best_f1_threshold << " vs "
              << f1_at << ", argmin MAE " << sweep.best_mae_threshold << " vs " << mae_at;
  line.finish(ok);
}

struct TrainedToy {
  Trainer trainer;
  std::vector<SceneSample> val;
};

TrainedToy end_to_end(const std::filesystem::path& work) {
  Line line{6};
  const auto cfg = toy_training(1, kTrainIterations, work / "toy");
  auto data = prepare_data(cfg);
  Trainer trainer(cfg, data.train);
  trainer.run();
  const auto sweep = threshold_sweep(trainer.model(), data.val, default_threshold_grid());
  const double f1 = sweep.best_f1().report.localization().f1;
  const auto means = block_means(trainer.losses(), kLossBlock);
  const double tau = kendall_tau(means);
  const bool trend = means.size() >= 2 && means.back() < means.front() && tau <= kMaxKendallTau;
  line.detail << "val F1 " << f1 << " at threshold " << sweep.best_f1_threshold << " (need >= "
              << kMinValF1 << "); " << means.size() << " block means " << means.front() << " -> "
              << means.back() << ", Kendall tau " << tau;
  line.finish(f1 >= kMinValF1 && trend);
  return {std::move(trainer), std::move(data.val)};
}

void ablation(const std::filesystem::path& work, std::int64_t iterations) {
  Line line{7};
  double sum_dcst = 0.0, sum_st = 0.0;
  for (int s = 1; s <= kAblationSeeds; ++s) {
    double f1[2];
    for (int variant = 0; variant < 2; ++variant) {
      auto cfg = toy_training(static_cast<std::uint64_t>(s), iterations,
                              work / ("ablation_" + std::to_string(s) + "_" + std::to_string(variant)));
      if (variant == 1) cfg.model.dcb.stages.clear();
      const auto data = prepare_data(cfg);
      Trainer trainer(cfg, data.train);
      trainer.run();
      f1[variant] = threshold_sweep(trainer.model(), data.val, default_threshold_grid())
                        .best_f1()
                        .report.localization()
                        .f1;
    }
    sum_dcst += f1[0];
    sum_st += f1[1];
    line.detail << "seed " << s << ": " << f1[0] << " vs " << f1[1] << " (" << std::showpos
                << f1[0] - f1[1] << std::noshowpos << ");  ";
  }
  const double a = sum_dcst / kAblationSeeds, b = sum_st / kAblationSeeds;
  line.detail << "mean DCST " << a << ", ST " << b << ", " << iterations << " iterations each";
  line.finish(a >= b, true);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks for the DCST library"};
  std::string work = (std::filesystem::temp_directory_path() / "dcst_acceptance").string();
  std::int64_t ablation_iters = 600;
  bool skip_training = false;
  app.add_option("--work", work, "Scratch directory for training runs");
  app.add_option("--ablation-iters", ablation_iters, "Iterations per ablation run")->check(CLI::PositiveNumber);
  app.add_flag("--skip-training", skip_training, "Run only criteria 1-5");
  CLI11_PARSE(app, argc, argv);

  try {
    metric_reproduction();
    gradient_suite();
    receptive_field();
    structural_bijections();
    oracle_equivalences();
    if (!skip_training) {
      std::filesystem::create_directories(work);
      auto toy = end_to_end(work);
      ablation(work, ablation_iters);
      sweep_mechanics(toy.trainer.model(), toy.val);
    }
  } catch (const std::exception& e) {
    std::printf("aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%d hard failure(s)\n", hard_failures);
  return hard_failures == 0 ? 0 : 1;
}
