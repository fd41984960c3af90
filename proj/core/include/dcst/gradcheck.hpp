#pragma once

#include <functional>
#include <vector>

#include "dcst/tensor.hpp"

namespace dcst {

using ScalarFn = std::function<double(const Tensor&)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / (2h) for each
/// coordinate of x, evaluated in double. The divisor uses the step actually
/// representable in float, not the nominal h.
std::vector<double> finite_diff_grad(const ScalarFn& f, const Tensor& x, double h = 1e-3);

/// Same, restricted to a subset of flat coordinates.
std::vector<double> finite_diff_grad(const ScalarFn& f, const Tensor& x,
                                     const std::vector<std::int64_t>& coords, double h = 1e-3);

/// max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|, floor). Relative to the
/// largest gradient entry, so near-zero coordinates do not dominate.
double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                      double floor = 1e-8);

}  // namespace dcst
