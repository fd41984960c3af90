#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

namespace dcst {

struct Point {
  double x = 0.0, y = 0.0;
};

/// Circumradius of a w x h box: sqrt(w^2 + h^2) / 2. Throws on w, h <= 0.
double sigma_from_box(double w, double h);

/// Head centre plus box size in pixels.
struct HeadAnnotation {
  double x = 0.0, y = 0.0;
  double w = 1.0, h = 1.0;
  double sigma() const { return sigma_from_box(w, h); }
};

struct MatchResult {
  std::vector<std::pair<int, int>> tp;  // (pred index, gt index)
  std::vector<int> fp;                  // unmatched preds
  std::vector<int> fn;                  // unmatched gts
};

/// One-to-one matching where a pred may match a gt within the gt's sigma
/// (inclusive). Maximizes the number of matches, then minimizes the total
/// distance of the matched pairs.
MatchResult match_points(const std::vector<Point>& preds, const std::vector<HeadAnnotation>& gts);

/// Minimum-cost perfect assignment for a square cost matrix (row-major,
/// n x n). Returns the column assigned to each row.
std::vector<int> hungarian(const std::vector<double>& cost, int n);

struct LocalizationMetrics {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

/// Zero denominators give 0.
LocalizationMetrics localization_metrics(std::int64_t tp, std::int64_t fp, std::int64_t fn);
LocalizationMetrics localization_metrics(const MatchResult& m);
/// Harmonic mean of a given precision/recall pair.
LocalizationMetrics localization_metrics_from_pr(double precision, double recall);

struct CountingMetrics {
  double mae = 0.0;
  double mse = 0.0;  // root of the mean squared error
  double nae = 0.0;  // over images with a nonzero ground-truth count
};

CountingMetrics counting_metrics(const std::vector<double>& gt, const std::vector<double>& pred);

/// Dataset-level accumulation: matches are pooled over all images before
/// computing precision and recall.
struct EvaluationReport {
  double threshold = 0.5;
  std::int64_t tp = 0, fp = 0, fn = 0;
  std::vector<double> gt_counts, pred_counts;

  void add(const MatchResult& m, std::size_t gt_count, std::size_t pred_count);
  std::int64_t images() const { return static_cast<std::int64_t>(gt_counts.size()); }
  LocalizationMetrics localization() const { return localization_metrics(tp, fp, fn); }
  CountingMetrics counting() const;

  void write_table(std::ostream& out) const;
  /// key=value lines for scripts.
  void write_key_values(std::ostream& out) const;
};

}  // namespace dcst
