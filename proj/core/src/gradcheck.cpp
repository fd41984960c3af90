#include "dcst/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dcst {

std::vector<double> finite_diff_grad(const ScalarFn& f, const Tensor& x,
                                     const std::vector<std::int64_t>& coords, double h) {
  if (!(h > 0.0)) throw ShapeError("finite_diff_grad: step must be positive");
  NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(coords.size());
  // Perturb a private copy so x itself is never modified.
  Tensor probe = x.detach();
  auto values = probe.mutable_data();
  for (auto i : coords) {
    if (i < 0 || i >= probe.numel()) throw ShapeError("finite_diff_grad: coordinate out of range");
    const float original = values[i];
    const auto plus = static_cast<float>(original + h);
    const auto minus = static_cast<float>(original - h);
    values[i] = plus;
    const double fp = f(probe);
    values[i] = minus;
    const double fm = f(probe);
    values[i] = original;
    out.push_back((fp - fm) / (double(plus) - double(minus)));
  }
  return out;
}

std::vector<double> finite_diff_grad(const ScalarFn& f, const Tensor& x, double h) {
  std::vector<std::int64_t> coords(static_cast<std::size_t>(x.numel()));
  std::iota(coords.begin(), coords.end(), 0);
  return finite_diff_grad(f, x, coords, h);
}

double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                      double floor) {
  if (analytic.size() != numeric.size()) throw ShapeError("relative_error: size mismatch");
  double diff = 0.0, scale = floor;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

}  // namespace dcst
