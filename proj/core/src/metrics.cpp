#include "dcst/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

#include "dcst/error.hpp"

namespace dcst {

double sigma_from_box(double w, double h) {
  if (!(w > 0.0) || !(h > 0.0)) {
    throw DataError("head box must have positive size, got " + std::to_string(w) + "x" +
                    std::to_string(h));
  }
  return std::sqrt(w * w + h * h) / 2.0;
}

std::vector<int> hungarian(const std::vector<double>& cost, int n) {
  // Shortest augmenting path with potentials, O(n^3). 1-based internally.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) minv[j] = cur, way[j] = j0;
        if (minv[j] < delta) delta = minv[j], j1 = j;
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) assignment[p[j] - 1] = j - 1;
  return assignment;
}

MatchResult match_points(const std::vector<Point>& preds, const std::vector<HeadAnnotation>& gts) {
  MatchResult r;
  const int np = static_cast<int>(preds.size()), ng = static_cast<int>(gts.size());
  std::vector<double> dist(static_cast<std::size_t>(np) * ng);
  std::vector<char> feasible(dist.size(), 0);
  std::vector<char> pred_any(np, 0), gt_any(ng, 0);
  double max_dist = 0.0;
  for (int i = 0; i < np; ++i)
    for (int j = 0; j < ng; ++j) {
      const double d = std::hypot(preds[i].x - gts[j].x, preds[i].y - gts[j].y);
      dist[i * ng + j] = d;
      if (d <= gts[j].sigma()) {
        feasible[i * ng + j] = 1;
        pred_any[i] = gt_any[j] = 1;
        max_dist = std::max(max_dist, d);
      }
    }
  // Only points with at least one feasible partner enter the assignment.
  std::vector<int> rows, cols;
  for (int i = 0; i < np; ++i) (pred_any[i] ? rows : r.fp).push_back(i);
  for (int j = 0; j < ng; ++j) (gt_any[j] ? cols : r.fn).push_back(j);

  if (!rows.empty()) {
    const int n = static_cast<int>(std::max(rows.size(), cols.size()));
    // Each match earns -bonus; bonus exceeds any achievable distance total,
    // so a larger matching always wins over a shorter one.
    const double bonus = (max_dist + 1.0) * static_cast<double>(n + 1);
    std::vector<double> cost(static_cast<std::size_t>(n) * n, 0.0);
    for (std::size_t a = 0; a < rows.size(); ++a)
      for (std::size_t b = 0; b < cols.size(); ++b) {
        const auto k = rows[a] * ng + cols[b];
        if (feasible[k]) cost[a * n + b] = dist[k] - bonus;
      }
    const auto assign = hungarian(cost, n);
    std::vector<char> col_used(cols.size(), 0);
    for (std::size_t a = 0; a < rows.size(); ++a) {
      const int b = assign[a];
      if (b >= 0 && b < static_cast<int>(cols.size()) && feasible[rows[a] * ng + cols[b]]) {
        r.tp.emplace_back(rows[a], cols[b]);
        col_used[b] = 1;
      } else {
        r.fp.push_back(rows[a]);
      }
    }
    for (std::size_t b = 0; b < cols.size(); ++b)
      if (!col_used[b]) r.fn.push_back(cols[b]);
  }
  std::sort(r.tp.begin(), r.tp.end());
  std::sort(r.fp.begin(), r.fp.end());
  std::sort(r.fn.begin(), r.fn.end());
  return r;
}

LocalizationMetrics localization_metrics_from_pr(double precision, double recall) {
  LocalizationMetrics m{precision, recall, 0.0};
  if (precision + recall > 0.0) m.f1 = 2.0 * precision * recall / (precision + recall);
  return m;
}

LocalizationMetrics localization_metrics(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  const double p = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
  const double r = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
  return localization_metrics_from_pr(p, r);
}

LocalizationMetrics localization_metrics(const MatchResult& m) {
  return localization_metrics(static_cast<std::int64_t>(m.tp.size()),
                              static_cast<std::int64_t>(m.fp.size()),
                              static_cast<std::int64_t>(m.fn.size()));
}

CountingMetrics counting_metrics(const std::vector<double>& gt, const std::vector<double>& pred) {
  if (gt.empty()) throw DataError("counting metrics need at least one image");
  if (gt.size() != pred.size()) {
    throw DataError("counting metrics: " + std::to_string(gt.size()) + " ground-truth counts vs " +
                    std::to_string(pred.size()) + " predictions");
  }
  double abs_sum = 0.0, sq_sum = 0.0, rel_sum = 0.0;
  std::size_t positive = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double e = std::abs(gt[i] - pred[i]);
    abs_sum += e;
    sq_sum += e * e;
    if (gt[i] > 0.0) {
      rel_sum += e / gt[i];
      ++positive;
    }
  }
  const double n = static_cast<double>(gt.size());
  CountingMetrics c;
  c.mae = abs_sum / n;
  c.mse = std::sqrt(sq_sum / n);
  c.nae = positive ? rel_sum / static_cast<double>(positive) : 0.0;
  return c;
}

void EvaluationReport::add(const MatchResult& m, std::size_t gt_count, std::size_t pred_count) {
  tp += static_cast<std::int64_t>(m.tp.size());
  fp += static_cast<std::int64_t>(m.fp.size());
  fn += static_cast<std::int64_t>(m.fn.size());
  gt_counts.push_back(static_cast<double>(gt_count));
  pred_counts.push_back(static_cast<double>(pred_count));
}

CountingMetrics EvaluationReport::counting() const {
  return gt_counts.empty() ? CountingMetrics{} : counting_metrics(gt_counts, pred_counts);
}

void EvaluationReport::write_table(std::ostream& out) const {
  const auto loc = localization();
  const auto cnt = counting();
  const auto flags = out.flags();
  out << std::fixed << std::setprecision(4);
  out << std::left << std::setw(12) << "threshold" << std::right << std::setw(12) << threshold
      << '\n';
  out << std::left << std::setw(12) << "images" << std::right << std::setw(12) << images() << '\n';
  out << std::left << std::setw(12) << "TP/FP/FN" << std::right << std::setw(12)
      << (std::to_string(tp) + "/" + std::to_string(fp) + "/" + std::to_string(fn)) << '\n';
  out << std::left << std::setw(12) << "precision" << std::right << std::setw(12)
      << loc.precision << '\n';
  out << std::left << std::setw(12) << "recall" << std::right << std::setw(12) << loc.recall
      << '\n';
  out << std::left << std::setw(12) << "F1" << std::right << std::setw(12) << loc.f1 << '\n';
  out << std::left << std::setw(12) << "MAE" << std::right << std::setw(12) << cnt.mae << '\n';
  out << std::left << std::setw(12) << "MSE" << std::right << std::setw(12) << cnt.mse << '\n';
  out << std::left << std::setw(12) << "NAE" << std::right << std::setw(12) << cnt.nae << '\n';
  out.flags(flags);
}

void EvaluationReport::write_key_values(std::ostream& out) const {
  const auto loc = localization();
  const auto cnt = counting();
  const auto flags = out.flags();
  out << std::setprecision(10);
  out << "threshold=" << threshold << '\n'
      << "images=" << images() << '\n'
      << "tp=" << tp << '\n'
      << "fp=" << fp << '\n'
      << "fn=" << fn << '\n'
      << "precision=" << loc.precision << '\n'
      << "recall=" << loc.recall << '\n'
      << "f1=" << loc.f1 << '\n'
      << "mae=" << cnt.mae << '\n'
      << "mse=" << cnt.mse << '\n'
      << "nae=" << cnt.nae << '\n';
  out.flags(flags);
}

}  // namespace dcst
