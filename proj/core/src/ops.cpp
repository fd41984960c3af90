#include "dcst/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <string>

#include "gemm.hpp"

namespace dcst {

using detail::grad_of;
using detail::make_result;
using detail::Node;

namespace {

std::vector<float> copy_values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Number of times `b` repeats inside `a` when b's shape is a suffix of a's.
std::int64_t broadcast_outer(const Tensor& a, const Tensor& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  bool ok = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
  if (!ok) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(sb) + " onto " +
                     to_string(sa));
  }
  return a.numel() / b.numel();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
  }
}

}  // namespace

ConvSpec ConvSpec::square(std::int64_t in, std::int64_t out, std::int64_t kernel,
                          std::int64_t stride, std::int64_t pad, std::int64_t dilation) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_h = s.kernel_w = kernel;
  s.stride_h = s.stride_w = stride;
  s.pad_h = s.pad_w = pad;
  s.dilation_h = s.dilation_w = dilation;
  return s;
}

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1) throw ShapeError("conv: channel counts must be >= 1");
  if (kernel_h < 1 || kernel_w < 1) throw ShapeError("conv: kernel must be >= 1");
  if (stride_h < 1 || stride_w < 1) throw ShapeError("conv: stride must be >= 1");
  if (pad_h < 0 || pad_w < 0) throw ShapeError("conv: negative padding");
  if (dilation_h < 1 || dilation_w < 1) throw ShapeError("conv: dilation must be >= 1");
}

std::int64_t ConvSpec::out_h(std::int64_t in_h) const {
  const auto num = in_h + 2 * pad_h - span_h();
  if (num < 0) throw ShapeError("conv: output height would be < 1");
  return num / stride_h + 1;
}

std::int64_t ConvSpec::out_w(std::int64_t in_w) const {
  const auto num = in_w + 2 * pad_w - span_w();
  if (num < 0) throw ShapeError("conv: output width would be < 1");
  return num / stride_w + 1;
}

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  const auto outer = broadcast_outer(a, b, "add");
  const auto inner = b.numel();
  auto out = copy_values(a);
  auto bv = b.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) out[o * inner + i] += bv[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [a, b, outer, inner](Node& self) {
    const auto& g = self.grad;
    if (auto ga = grad_of(a); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (auto gb = grad_of(b); !gb.empty())
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) gb[i] += g[o * inner + i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const auto outer = broadcast_outer(a, b, "sub");
  const auto inner = b.numel();
  auto out = copy_values(a);
  auto bv = b.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) out[o * inner + i] -= bv[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [a, b, outer, inner](Node& self) {
    const auto& g = self.grad;
    if (auto ga = grad_of(a); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (auto gb = grad_of(b); !gb.empty())
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) gb[i] -= g[o * inner + i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto outer = broadcast_outer(a, b, "mul");
  const auto inner = b.numel();
  auto out = copy_values(a);
  auto bv = b.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) out[o * inner + i] *= bv[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [a, b, outer, inner](Node& self) {
    const auto& g = self.grad;
    auto av = a.data();
    auto bv = b.data();
    if (auto ga = grad_of(a); !ga.empty())
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) ga[o * inner + i] += g[o * inner + i] * bv[i];
    if (auto gb = grad_of(b); !gb.empty())
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) gb[i] += g[o * inner + i] * av[o * inner + i];
  });
}

Tensor scale(const Tensor& a, float factor) {
  auto out = copy_values(a);
  for (auto& v : out) v *= factor;
  return make_result("scale", a.shape(), std::move(out), {a}, [a, factor](Node& self) {
    auto ga = grad_of(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& a, float value) {
  auto out = copy_values(a);
  for (auto& v : out) v += value;
  return make_result("add_scalar", a.shape(), std::move(out), {a}, [a](Node& self) {
    auto ga = grad_of(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  return make_result("sum", {}, {static_cast<float>(acc)}, {a}, [a](Node& self) {
    auto ga = grad_of(a);
    const float g = self.grad[0];
    for (auto& v : ga) v += g;
  });
}

Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  const auto n = static_cast<double>(a.numel());
  return make_result("mean", {}, {static_cast<float>(acc / n)}, {a}, [a, n](Node& self) {
    auto ga = grad_of(a);
    const float g = static_cast<float>(self.grad[0] / n);
    for (auto& v : ga) v += g;
  });
}

// ------------------------------------------------------------------- products

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dims differ, " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  std::vector<float> out(static_cast<std::size_t>(m * n));
  detail::gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, n, k](Node& self) {
    if (auto ga = grad_of(a); !ga.empty())
      detail::gemm(false, true, m, k, n, self.grad.data(), b.data().data(), ga.data(), true);
    if (auto gb = grad_of(b); !gb.empty())
      detail::gemm(true, false, k, n, m, a.data().data(), self.grad.data(), gb.data(), true);
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const auto batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const auto n = transpose_b ? b.dim(1) : b.dim(2);
  const auto bk = transpose_b ? b.dim(2) : b.dim(1);
  if (b.dim(0) != batch || bk != k) {
    throw ShapeError("bmm: incompatible " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::vector<float> out(static_cast<std::size_t>(batch * m * n));
  const float* ap = a.data().data();
  const float* bp = b.data().data();
  for (std::int64_t i = 0; i < batch; ++i) {
    detail::gemm(false, transpose_b, m, n, k, ap + i * m * k, bp + i * k * n,
                 out.data() + i * m * n, false);
  }
  return make_result(
      "bmm", {batch, m, n}, std::move(out), {a, b},
      [a, b, batch, m, n, k, transpose_b](Node& self) {
        const float* g = self.grad.data();
        const float* ap = a.data().data();
        const float* bp = b.data().data();
        auto ga = grad_of(a);
        auto gb = grad_of(b);
        for (std::int64_t i = 0; i < batch; ++i) {
          const float* gi = g + i * m * n;
          const float* bi = bp + i * k * n;
          const float* ai = ap + i * m * k;
          if (!ga.empty()) {
            // dA = dC op(B)^T
            detail::gemm(false, !transpose_b, m, k, n, gi, bi, ga.data() + i * m * k, true);
          }
          if (!gb.empty()) {
            if (transpose_b) {
              // B is [n, k]: dB = dC^T A
              detail::gemm(true, false, n, k, m, gi, ai, gb.data() + i * k * n, true);
            } else {
              detail::gemm(true, false, k, n, m, ai, gi, gb.data() + i * k * n, true);
            }
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(w, 2, "linear");
  const auto out_dim = w.dim(0), in_dim = w.dim(1);
  if (x.rank() < 1 || x.shape().back() != in_dim) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " vs weight " +
                     to_string(w.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw ShapeError("linear: bias shape " + to_string(bias.shape()));
  }
  const auto rows = x.numel() / in_dim;
  std::vector<float> out(static_cast<std::size_t>(rows * out_dim));
  detail::gemm(false, true, rows, out_dim, in_dim, x.data().data(), w.data().data(), out.data(),
               false);
  if (bias.defined()) {
    auto bv = bias.data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < out_dim; ++j) out[r * out_dim + j] += bv[j];
  }
  Shape shape = x.shape();
  shape.back() = out_dim;
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result("linear", std::move(shape), std::move(out), std::move(inputs),
                     [x, w, bias, rows, out_dim, in_dim](Node& self) {
                       const float* g = self.grad.data();
                       if (auto gx = grad_of(x); !gx.empty())
                         detail::gemm(false, false, rows, in_dim, out_dim, g, w.data().data(),
                                      gx.data(), true);
                       if (auto gw = grad_of(w); !gw.empty())
                         detail::gemm(true, false, out_dim, in_dim, rows, g, x.data().data(),
                                      gw.data(), true);
                       if (bias.defined()) {
                         if (auto gb = grad_of(bias); !gb.empty())
                           for (std::int64_t r = 0; r < rows; ++r)
                             for (std::int64_t j = 0; j < out_dim; ++j)
                               gb[j] += g[r * out_dim + j];
                       }
                     });
}

// ------------------------------------------------------------- normalization

Tensor softmax(const Tensor& x, int axis) {
  const auto rank = static_cast<int>(x.rank());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("softmax: axis out of range");
  const auto len = x.dim(static_cast<std::size_t>(axis));
  std::int64_t inner = 1;
  for (int i = axis + 1; i < rank; ++i) inner *= x.dim(static_cast<std::size_t>(i));
  const auto outer = x.numel() / (len * inner);

  auto xv = x.data();
  std::vector<float> out(xv.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const auto base = o * len * inner + in;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::int64_t i = 0; i < len; ++i) mx = std::max(mx, xv[base + i * inner]);
      double total = 0.0;
      for (std::int64_t i = 0; i < len; ++i) {
        const float e = std::exp(xv[base + i * inner] - mx);
        out[base + i * inner] = e;
        total += e;
      }
      const auto inv = static_cast<float>(1.0 / total);
      for (std::int64_t i = 0; i < len; ++i) out[base + i * inner] *= inv;
    }
  }
  auto y = std::make_shared<std::vector<float>>(out);
  return make_result("softmax", x.shape(), std::move(out), {x},
                     [x, y, outer, inner, len](Node& self) {
                       auto gx = grad_of(x);
                       const auto& g = self.grad;
                       const auto& yv = *y;
                       for (std::int64_t o = 0; o < outer; ++o) {
                         for (std::int64_t in = 0; in < inner; ++in) {
                           const auto base = o * len * inner + in;
                           double dot = 0.0;
                           for (std::int64_t i = 0; i < len; ++i)
                             dot += double(g[base + i * inner]) * yv[base + i * inner];
                           for (std::int64_t i = 0; i < len; ++i) {
                             const auto idx = base + i * inner;
                             gx[idx] += yv[idx] * (g[idx] - static_cast<float>(dot));
                           }
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const auto d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(d) + " entries");
  }
  const auto rows = x.numel() / d;
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<float> out(xv.size());
  auto xhat = std::make_shared<std::vector<float>>(xv.size());
  auto inv_std = std::make_shared<std::vector<float>>(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::int64_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(d);
    const auto is = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*inv_std)[r] = is;
    for (std::int64_t i = 0; i < d; ++i) {
      const float h = static_cast<float>(row[i] - mu) * is;
      (*xhat)[r * d + i] = h;
      out[r * d + i] = h * gv[i] + bv[i];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, rows, d](Node& self) {
        const auto& g = self.grad;
        auto gx = grad_of(x);
        auto gg = grad_of(gamma);
        auto gb = grad_of(beta);
        auto gv = gamma.data();
        for (std::int64_t r = 0; r < rows; ++r) {
          double sum_g = 0.0, sum_gh = 0.0;
          for (std::int64_t i = 0; i < d; ++i) {
            const auto idx = r * d + i;
            const float gi = g[idx] * gv[i];
            sum_g += gi;
            sum_gh += double(gi) * (*xhat)[idx];
            if (!gg.empty()) gg[i] += g[idx] * (*xhat)[idx];
            if (!gb.empty()) gb[i] += g[idx];
          }
          if (gx.empty()) continue;
          const auto mg = static_cast<float>(sum_g / d);
          const auto mgh = static_cast<float>(sum_gh / d);
          for (std::int64_t i = 0; i < d; ++i) {
            const auto idx = r * d + i;
            gx[idx] += (*inv_std)[r] * (g[idx] * gv[i] - mg - (*xhat)[idx] * mgh);
          }
        }
      });
}

BatchNormStats BatchNormStats::make(std::int64_t channels) {
  BatchNormStats s;
  s.running_mean = Tensor::zeros({channels});
  s.running_var = Tensor::full({channels}, 1.0f);
  return s;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                  Mode mode) {
  require_rank(x, 4, "batch_norm");
  const auto n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (n < 1) throw ShapeError("batch_norm: empty batch");
  if (gamma.numel() != c || beta.numel() != c || stats.running_mean.numel() != c ||
      stats.running_var.numel() != c) {
    throw ShapeError("batch_norm: per-channel parameters must have " + std::to_string(c) +
                     " entries");
  }
  const auto count = n * plane;
  auto xv = x.data();
  std::vector<float> mu(static_cast<std::size_t>(c)), is(static_cast<std::size_t>(c));
  if (mode == Mode::train) {
    auto rm = stats.running_mean.mutable_data();
    auto rv = stats.running_var.mutable_data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double m = 0.0;
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t p = 0; p < plane; ++p) m += xv[(b * c + ch) * plane + p];
      m /= static_cast<double>(count);
      double v = 0.0;
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t p = 0; p < plane; ++p) {
          const double dlt = xv[(b * c + ch) * plane + p] - m;
          v += dlt * dlt;
        }
      const double pop_var = v / static_cast<double>(count);
      const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : pop_var;
      mu[ch] = static_cast<float>(m);
      is[ch] = static_cast<float>(1.0 / std::sqrt(pop_var + stats.eps));
      rm[ch] = (1.0f - stats.momentum) * rm[ch] + stats.momentum * static_cast<float>(m);
      rv[ch] = (1.0f - stats.momentum) * rv[ch] + stats.momentum * static_cast<float>(unbiased);
    }
  } else {
    auto rm = stats.running_mean.data();
    auto rv = stats.running_var.data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mu[ch] = rm[ch];
      is[ch] = 1.0f / std::sqrt(rv[ch] + stats.eps);
    }
  }

  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<float> out(xv.size());
  auto xhat = std::make_shared<std::vector<float>>(xv.size());
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t p = 0; p < plane; ++p) {
        const auto idx = (b * c + ch) * plane + p;
        const float h = (xv[idx] - mu[ch]) * is[ch];
        (*xhat)[idx] = h;
        out[idx] = h * gv[ch] + bv[ch];
      }

  const bool batch_stats = mode == Mode::train;
  return make_result(
      "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, is, n, c, plane, count, batch_stats](Node& self) {
        const auto& g = self.grad;
        auto gx = grad_of(x);
        auto gg = grad_of(gamma);
        auto gb = grad_of(beta);
        auto gv = gamma.data();
        for (std::int64_t ch = 0; ch < c; ++ch) {
          double sum_g = 0.0, sum_gh = 0.0;
          for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t p = 0; p < plane; ++p) {
              const auto idx = (b * c + ch) * plane + p;
              sum_g += g[idx];
              sum_gh += double(g[idx]) * (*xhat)[idx];
            }
          if (!gg.empty()) gg[ch] += static_cast<float>(sum_gh);
          if (!gb.empty()) gb[ch] += static_cast<float>(sum_g);
          if (gx.empty()) continue;
          const float k = gv[ch] * is[ch];
          if (batch_stats) {
            const auto mg = static_cast<float>(sum_g / count);
            const auto mgh = static_cast<float>(sum_gh / count);
            for (std::int64_t b = 0; b < n; ++b)
              for (std::int64_t p = 0; p < plane; ++p) {
                const auto idx = (b * c + ch) * plane + p;
                gx[idx] += k * (g[idx] - mg - (*xhat)[idx] * mgh);
              }
          } else {
            for (std::int64_t b = 0; b < n; ++b)
              for (std::int64_t p = 0; p < plane; ++p) {
                const auto idx = (b * c + ch) * plane + p;
                gx[idx] += k * g[idx];
              }
          }
        }
      });
}

// ---------------------------------------------------------------- activations

Tensor activation(Activation kind, const Tensor& x) {
  auto xv = x.data();
  std::vector<float> out(xv.size());
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
      return make_result("relu", x.shape(), std::move(out), {x}, [x](Node& self) {
        auto gx = grad_of(x);
        auto xv = x.data();
        for (std::size_t i = 0; i < gx.size(); ++i)
          if (xv[i] > 0.0f) gx[i] += self.grad[i];
      });
    case Activation::gelu: {
      constexpr double kInvSqrt2 = 0.70710678118654752440;
      for (std::size_t i = 0; i < xv.size(); ++i) {
        const double v = xv[i];
        out[i] = static_cast<float>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
      }
      return make_result("gelu", x.shape(), std::move(out), {x}, [x](Node& self) {
        constexpr double kInvSqrt2 = 0.70710678118654752440;
        constexpr double kInvSqrt2Pi = 0.39894228040143267794;
        auto gx = grad_of(x);
        auto xv = x.data();
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const double v = xv[i];
          const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
          gx[i] += static_cast<float>(self.grad[i] * (cdf + v * pdf));
        }
      });
    }
    case Activation::sigmoid: {
      // Clamped so the result stays strictly inside (0, 1) in float.
      const float lo = std::numeric_limits<float>::min();
      const float hi = std::nextafter(1.0f, 0.0f);
      for (std::size_t i = 0; i < xv.size(); ++i) {
        const double v = xv[i];
        const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        out[i] = std::clamp(static_cast<float>(s), lo, hi);
      }
      auto y = std::make_shared<std::vector<float>>(out);
      return make_result("sigmoid", x.shape(), std::move(out), {x}, [x, y](Node& self) {
        auto gx = grad_of(x);
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const float s = (*y)[i];
          gx[i] += self.grad[i] * s * (1.0f - s);
        }
      });
    }
  }
  throw ShapeError("activation: unknown kind");
}

// -------------------------------------------------------------- convolutions

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, const ConvSpec& spec) {
  spec.validate();
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  const auto n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  if (cin != spec.in_channels) throw ShapeError("conv2d: input channels do not match spec");
  const Shape wshape{spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w};
  if (w.shape() != wshape) {
    throw ShapeError("conv2d: weight " + to_string(w.shape()) + ", expected " + to_string(wshape));
  }
  if (bias.defined() && bias.numel() != spec.out_channels) {
    throw ShapeError("conv2d: bias must have out_channels entries");
  }
  const auto oh = spec.out_h(h), ow = spec.out_w(wd);
  const detail::PatchGeometry geo{cin,          h,          wd,           spec.kernel_h,
                                  spec.kernel_w, spec.stride_h, spec.stride_w, spec.pad_h,
                                  spec.pad_w,   spec.dilation_h, spec.dilation_w, oh,
                                  ow};
  const auto ckk = cin * spec.kernel_h * spec.kernel_w;
  const auto cout = spec.out_channels;
  const auto plane = oh * ow;

  std::vector<float> out(static_cast<std::size_t>(n * cout * plane));
  std::vector<float> cols(static_cast<std::size_t>(ckk * plane));
  for (std::int64_t b = 0; b < n; ++b) {
    detail::im2col(geo, x.data().data() + b * cin * h * wd, cols.data());
    float* ob = out.data() + b * cout * plane;
    detail::gemm(false, false, cout, plane, ckk, w.data().data(), cols.data(), ob, false);
    if (bias.defined()) {
      auto bv = bias.data();
      for (std::int64_t c = 0; c < cout; ++c)
        for (std::int64_t p = 0; p < plane; ++p) ob[c * plane + p] += bv[c];
    }
  }
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      "conv2d", {n, cout, oh, ow}, std::move(out), std::move(inputs),
      [x, w, bias, geo, n, cin, h, wd, ckk, cout, plane](Node& self) {
        auto gx = grad_of(x);
        auto gw = grad_of(w);
        std::span<float> gb;
        if (bias.defined()) gb = grad_of(bias);
        std::vector<float> cols(static_cast<std::size_t>(ckk * plane));
        for (std::int64_t b = 0; b < n; ++b) {
          const float* gout = self.grad.data() + b * cout * plane;
          if (!gw.empty()) {
            detail::im2col(geo, x.data().data() + b * cin * h * wd, cols.data());
            detail::gemm(false, true, cout, ckk, plane, gout, cols.data(), gw.data(), true);
          }
          if (!gx.empty()) {
            detail::gemm(true, false, ckk, plane, cout, w.data().data(), gout, cols.data(),
                         false);
            detail::col2im(geo, cols.data(), gx.data() + b * cin * h * wd);
          }
          if (!gb.empty())
            for (std::int64_t c = 0; c < cout; ++c)
              for (std::int64_t p = 0; p < plane; ++p) gb[c] += gout[c * plane + p];
        }
      });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                        std::int64_t stride) {
  if (stride < 2 || stride % 2 != 0) {
    throw ShapeError("conv_transpose2d: stride must be even and >= 2, got " +
                     std::to_string(stride));
  }
  require_rank(x, 4, "conv_transpose2d");
  require_rank(w, 4, "conv_transpose2d");
  const auto k = 2 * stride, pad = stride / 2;
  const auto n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  if (w.dim(0) != cin || w.dim(2) != k || w.dim(3) != k) {
    throw ShapeError("conv_transpose2d: weight " + to_string(w.shape()) +
                     " incompatible with stride " + std::to_string(stride));
  }
  const auto cout = w.dim(1);
  if (bias.defined() && bias.numel() != cout) {
    throw ShapeError("conv_transpose2d: bias must have out_channels entries");
  }
  const auto oh = stride * h, ow = stride * wd;
  // The "image" side of the patch geometry is the upsampled output.
  const detail::PatchGeometry geo{cout, oh, ow, k, k, stride, stride, pad, pad, 1, 1, h, wd};
  const auto ckk = cout * k * k;
  const auto in_plane = h * wd, out_plane = oh * ow;

  std::vector<float> out(static_cast<std::size_t>(n * cout * out_plane), 0.0f);
  std::vector<float> cols(static_cast<std::size_t>(ckk * in_plane));
  for (std::int64_t b = 0; b < n; ++b) {
    detail::gemm(true, false, ckk, in_plane, cin, w.data().data(),
                 x.data().data() + b * cin * in_plane, cols.data(), false);
    float* ob = out.data() + b * cout * out_plane;
    detail::col2im(geo, cols.data(), ob);
    if (bias.defined()) {
      auto bv = bias.data();
      for (std::int64_t c = 0; c < cout; ++c)
        for (std::int64_t p = 0; p < out_plane; ++p) ob[c * out_plane + p] += bv[c];
    }
  }
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      "conv_transpose2d", {n, cout, oh, ow}, std::move(out), std::move(inputs),
      [x, w, bias, geo, n, cin, cout, ckk, in_plane, out_plane](Node& self) {
        auto gx = grad_of(x);
        auto gw = grad_of(w);
        std::span<float> gb;
        if (bias.defined()) gb = grad_of(bias);
        std::vector<float> cols(static_cast<std::size_t>(ckk * in_plane));
        for (std::int64_t b = 0; b < n; ++b) {
          const float* gout = self.grad.data() + b * cout * out_plane;
          detail::im2col(geo, gout, cols.data());
          if (!gx.empty())
            detail::gemm(false, false, cin, in_plane, ckk, w.data().data(), cols.data(),
                         gx.data() + b * cin * in_plane, true);
          if (!gw.empty())
            detail::gemm(false, true, cin, ckk, in_plane, x.data().data() + b * cin * in_plane,
                         cols.data(), gw.data(), true);
          if (!gb.empty())
            for (std::int64_t c = 0; c < cout; ++c)
              for (std::int64_t p = 0; p < out_plane; ++p) gb[c] += gout[c * out_plane + p];
        }
      });
}

// ---------------------------------------------------------------- structural

Tensor gather(const Tensor& x, std::vector<std::int64_t> index, Shape out_shape) {
  if (static_cast<std::int64_t>(index.size()) != numel(out_shape)) {
    throw ShapeError("gather: index count does not match output shape " + to_string(out_shape));
  }
  auto xv = x.data();
  const auto limit = x.numel();
  std::vector<float> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto src = index[i];
    if (src >= limit) throw ShapeError("gather: index out of range");
    out[i] = src < 0 ? 0.0f : xv[src];
  }
  auto idx = std::make_shared<const std::vector<std::int64_t>>(std::move(index));
  return make_result("gather", std::move(out_shape), std::move(out), {x}, [x, idx](Node& self) {
    auto gx = grad_of(x);
    const auto& ix = *idx;
    for (std::size_t i = 0; i < ix.size(); ++i)
      if (ix[i] >= 0) gx[ix[i]] += self.grad[i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  return make_result("reshape", std::move(shape), copy_values(x), {x}, [x](Node& self) {
    auto gx = grad_of(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const auto rank = x.rank();
  if (axes.size() != rank) throw ShapeError("permute: axis count mismatch");
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("permute: invalid axis list");
    seen[a] = true;
  }
  const auto& in_shape = x.shape();
  std::vector<std::int64_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[axes[i]];

  std::vector<std::int64_t> index(static_cast<std::size_t>(x.numel()));
  std::vector<std::int64_t> counter(rank, 0);
  for (std::size_t flat = 0; flat < index.size(); ++flat) {
    std::int64_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += counter[i] * in_strides[axes[i]];
    index[flat] = src;
    for (std::size_t i = rank; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  return gather(x, std::move(index), std::move(out_shape));
}

Tensor upsample_nearest(const Tensor& x, std::int64_t factor) {
  require_rank(x, 4, "upsample_nearest");
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto oh = h * factor, ow = w * factor;
  std::vector<std::int64_t> index(static_cast<std::size_t>(n * c * oh * ow));
  std::size_t i = 0;
  for (std::int64_t p = 0; p < n * c; ++p)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t xx = 0; xx < ow; ++xx)
        index[i++] = (p * h + y / factor) * w + xx / factor;
  return gather(x, std::move(index), {n, c, oh, ow});
}

Tensor pad_bottom_right(const Tensor& x, std::int64_t pad_h, std::int64_t pad_w) {
  require_rank(x, 4, "pad_bottom_right");
  if (pad_h < 0 || pad_w < 0) throw ShapeError("pad_bottom_right: negative padding");
  if (pad_h == 0 && pad_w == 0) return x;
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto oh = h + pad_h, ow = w + pad_w;
  std::vector<std::int64_t> index(static_cast<std::size_t>(n * c * oh * ow));
  std::size_t i = 0;
  for (std::int64_t p = 0; p < n * c; ++p)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t xx = 0; xx < ow; ++xx)
        index[i++] = (y < h && xx < w) ? (p * h + y) * w + xx : -1;
  return gather(x, std::move(index), {n, c, oh, ow});
}

Tensor crop_top_left(const Tensor& x, std::int64_t h, std::int64_t w) {
  require_rank(x, 4, "crop_top_left");
  const auto n = x.dim(0), c = x.dim(1), ih = x.dim(2), iw = x.dim(3);
  if (h < 1 || w < 1 || h > ih || w > iw) throw ShapeError("crop_top_left: invalid crop size");
  if (h == ih && w == iw) return x;
  std::vector<std::int64_t> index(static_cast<std::size_t>(n * c * h * w));
  std::size_t i = 0;
  for (std::int64_t p = 0; p < n * c; ++p)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t xx = 0; xx < w; ++xx) index[i++] = (p * ih + y) * iw + xx;
  return gather(x, std::move(index), {n, c, h, w});
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  require_same_shape(prediction, target, "mse_loss");
  auto pv = prediction.data();
  auto tv = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = double(pv[i]) - tv[i];
    acc += d * d;
  }
  const auto count = static_cast<double>(pv.size());
  return make_result("mse_loss", {}, {static_cast<float>(acc / count)}, {prediction, target},
                     [prediction, target, count](Node& self) {
                       const auto g = static_cast<float>(2.0 * self.grad[0] / count);
                       auto pv = prediction.data();
                       auto tv = target.data();
                       auto gp = grad_of(prediction);
                       auto gt = grad_of(target);
                       for (std::size_t i = 0; i < pv.size(); ++i) {
                         const float d = g * (pv[i] - tv[i]);
                         if (!gp.empty()) gp[i] += d;
                         if (!gt.empty()) gt[i] -= d;
                       }
                     });
}

}  // namespace dcst
