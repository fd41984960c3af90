#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dcst/gradcheck.hpp"
#include "dcst/ops.hpp"
#include "dcst/rng.hpp"
#include "dcst/serialize.hpp"
#include "grad_harness.hpp"
#include "op_cases.hpp"

namespace dcst {
namespace {

using testing::check_gradients;

// Direct-loop convolution, independent of the im2col/GEMM path.
std::vector<float> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b,
                              const ConvSpec& s, std::int64_t& oh, std::int64_t& ow) {
  const auto n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  // Enumerate output positions whose dilated window fits in the padded input.
  oh = 0;
  while ((oh * s.stride_h) + (s.kernel_h - 1) * s.dilation_h <= h - 1 + 2 * s.pad_h) ++oh;
  ow = 0;
  while ((ow * s.stride_w) + (s.kernel_w - 1) * s.dilation_w <= wd - 1 + 2 * s.pad_w) ++ow;
  std::vector<float> out(static_cast<std::size_t>(n * s.out_channels * oh * ow));
  for (std::int64_t bi = 0; bi < n; ++bi)
    for (std::int64_t co = 0; co < s.out_channels; ++co)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          double acc = b.defined() ? b[co] : 0.0;
          for (std::int64_t ci = 0; ci < cin; ++ci)
            for (std::int64_t i = 0; i < s.kernel_h; ++i)
              for (std::int64_t j = 0; j < s.kernel_w; ++j) {
                const auto y = oy * s.stride_h - s.pad_h + i * s.dilation_h;
                const auto xx = ox * s.stride_w - s.pad_w + j * s.dilation_w;
                if (y < 0 || y >= h || xx < 0 || xx >= wd) continue;
                acc += double(x[((bi * cin + ci) * h + y) * wd + xx]) *
                       w[((co * cin + ci) * s.kernel_h + i) * s.kernel_w + j];
              }
          out[((bi * s.out_channels + co) * oh + oy) * ow + ox] = static_cast<float>(acc);
        }
  return out;
}

TEST(Matmul, IdentityAndOrthogonalRows) {
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto m = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto r = matmul(eye, m);
  EXPECT_EQ(std::vector<float>(r.data().begin(), r.data().end()),
            (std::vector<float>{1, 2, 3, 4}));
  auto z = matmul(Tensor::from({1, 2}, {1, 0}), Tensor::from({2, 1}, {0, 1}));
  EXPECT_EQ(z.shape(), (Shape{1, 1}));
  EXPECT_EQ(z.item(), 0.0f);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(1);
  auto a = uniform_tensor({3, 4}, rng);
  auto b = uniform_tensor({4, 2}, rng);
  auto c = matmul(a, b);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += double(a[i * 4 + k]) * b[k * 2 + j];
      EXPECT_NEAR(c[i * 2 + j], acc, 1e-6);
    }
}

TEST(Matmul, DimMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(2);
  auto x = uniform_tensor({1, 1, 5, 5}, rng);
  auto y = conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0f), Tensor::zeros({1}),
                  ConvSpec::square(1, 1, 1));
  ASSERT_EQ(y.shape(), x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv2d, CountingKernelCenterIsNine) {
  auto x = Tensor::full({1, 1, 5, 5}, 1.0f);
  auto y = conv2d(x, Tensor::full({1, 1, 3, 3}, 1.0f), Tensor::zeros({1}),
                  ConvSpec::square(1, 1, 3, 1, 1));
  EXPECT_FLOAT_EQ(y[2 * 5 + 2], 9.0f);
  EXPECT_FLOAT_EQ(y[0], 4.0f);  // corner sees a 2x2 patch
}

TEST(Conv2d, MatchesDirectLoopOracle) {
  Rng rng(3);
  for (std::int64_t k : {1, 3})
    for (std::int64_t s : {1, 2})
      for (std::int64_t p : {0, 1, 2})
        for (std::int64_t d : {1, 2, 3}) {
          auto spec = ConvSpec::square(2, 3, k, s, p, d);
          auto x = uniform_tensor({2, 2, 9, 8}, rng);
          auto w = uniform_tensor({3, 2, k, k}, rng);
          auto b = uniform_tensor({3}, rng);
          std::int64_t oh = 0, ow = 0;
          auto expected = naive_conv(x, w, b, spec, oh, ow);
          auto y = conv2d(x, w, b, spec);
          ASSERT_EQ(y.shape(), (Shape{2, 3, oh, ow})) << "k=" << k << " s=" << s << " p=" << p
                                                      << " d=" << d;
          EXPECT_EQ(spec.out_h(9), (9 + 2 * p - d * (k - 1) - 1) / s + 1);
          for (std::int64_t i = 0; i < y.numel(); ++i) ASSERT_NEAR(y[i], expected[i], 1e-5);
        }
}

TEST(Conv2d, InvalidSpecThrows) {
  auto x = Tensor::zeros({1, 1, 4, 4});
  auto w = Tensor::zeros({1, 1, 3, 3});
  EXPECT_THROW(conv2d(x, w, {}, ConvSpec::square(1, 1, 3, 1, -1)), ShapeError);
  EXPECT_THROW(conv2d(x, w, {}, ConvSpec::square(1, 1, 3, 1, 0, 0)), ShapeError);
  EXPECT_THROW(conv2d(x, w, {}, ConvSpec::square(2, 1, 3, 1, 0)), ShapeError);
  // d=3 on a 4x4 input without padding leaves no valid output position.
  EXPECT_THROW(conv2d(x, w, {}, ConvSpec::square(1, 1, 3, 1, 0, 3)), ShapeError);
}

TEST(Conv2d, DilatedFootprintSpansFiveByFive) {
  Rng rng(4);
  auto w = uniform_tensor({1, 1, 3, 3}, rng, 0.5f, 1.0f);
  auto spec = ConvSpec::square(1, 1, 3, 1, 2, 2);
  auto x = uniform_tensor({1, 1, 11, 11}, rng);
  const std::int64_t out_index = 5 * 11 + 5;
  auto f = [&](const Tensor& probe) { return double(conv2d(probe, w, {}, spec)[out_index]); };
  auto fd = finite_diff_grad(f, x);
  int nonzero = 0;
  std::int64_t y0 = 99, y1 = -1, x0 = 99, x1 = -1;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    if (std::abs(fd[i]) < 1e-6) continue;
    ++nonzero;
    y0 = std::min(y0, i / 11);
    y1 = std::max(y1, i / 11);
    x0 = std::min(x0, i % 11);
    x1 = std::max(x1, i % 11);
  }
  EXPECT_EQ(nonzero, 9);
  EXPECT_EQ(y1 - y0 + 1, spec.span_h());
  EXPECT_EQ(x1 - x0 + 1, 5);
}

TEST(ConvTranspose2d, DoublesResolution) {
  auto y = conv_transpose2d(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({3, 2, 4, 4}), {}, 2);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 8, 8}));
}

TEST(ConvTranspose2d, ZeroInputGivesBias) {
  Rng rng(5);
  auto w = uniform_tensor({2, 3, 4, 4}, rng);
  auto b = Tensor::from({3}, {0.5f, -1.0f, 2.0f});
  auto y = conv_transpose2d(Tensor::zeros({1, 2, 3, 3}), w, b, 2);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t p = 0; p < 36; ++p) EXPECT_EQ(y[c * 36 + p], b[c]);
}

TEST(ConvTranspose2d, IsAdjointOfStridedConv) {
  Rng rng(6);
  for (std::int64_t stride : {2, 4}) {
    const auto k = 2 * stride;
    auto w = uniform_tensor({2, 3, k, k}, rng);  // [Cin_t, Cout_t, k, k]
    auto x = uniform_tensor({1, 2, 3, 5}, rng);
    auto y = uniform_tensor({1, 3, 3 * stride, 5 * stride}, rng);
    // conv maps [3 ch, sH x sW] -> [2 ch, H x W] using the same weight tensor
    // viewed as [Cout=2, Cin=3, k, k].
    auto spec = ConvSpec::square(3, 2, k, stride, stride / 2);
    auto conv_y = conv2d(y, w, {}, spec);
    auto deconv_x = conv_transpose2d(x, w, {}, stride);
    double lhs = 0.0, rhs = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) lhs += double(conv_y[i]) * x[i];
    for (std::int64_t i = 0; i < y.numel(); ++i) rhs += double(y[i]) * deconv_x[i];
    EXPECT_NEAR(lhs, rhs, 1e-5 * std::max(1.0, std::abs(lhs)));
  }
}

TEST(ConvTranspose2d, IncompatibleKernelThrows) {
  EXPECT_THROW(conv_transpose2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), {}, 2),
               ShapeError);
  EXPECT_THROW(conv_transpose2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 2, 2}), {}, 1),
               ShapeError);
}

TEST(Softmax, SymmetricAndStable) {
  auto a = softmax(Tensor::from({2}, {0, 0}), 0);
  EXPECT_FLOAT_EQ(a[0], 0.5f);
  EXPECT_FLOAT_EQ(a[1], 0.5f);
  auto b = softmax(Tensor::from({2}, {1000, 1000}), 0);
  EXPECT_FLOAT_EQ(b[0], 0.5f);
  EXPECT_FLOAT_EQ(b[1], 0.5f);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = uniform_tensor({3, 7, 5}, rng, -5.0f, 5.0f);
    for (int axis : {0, 1, 2}) {
      auto y = softmax(x, axis);
      auto shifted = softmax(add_scalar(x, 3.25f), axis);
      for (std::int64_t i = 0; i < y.numel(); ++i) {
        EXPECT_GT(y[i], 0.0f);
        EXPECT_NEAR(y[i], shifted[i], 1e-6);
      }
    }
    auto y = softmax(x, -1);
    for (std::int64_t r = 0; r < 21; ++r) {
      double s = 0.0;
      for (int i = 0; i < 5; ++i) s += y[r * 5 + i];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(LayerNorm, KnownValues) {
  auto y = layer_norm(Tensor::from({3}, {1, 2, 3}), Tensor::full({3}, 1), Tensor::zeros({3}));
  EXPECT_NEAR(y[0], -1.2247, 1e-4);
  EXPECT_NEAR(y[1], 0.0, 1e-6);
  EXPECT_NEAR(y[2], 1.2247, 1e-4);
  auto c = layer_norm(Tensor::full({4}, 3.0f), Tensor::full({4}, 1), Tensor::full({4}, 5));
  for (int i = 0; i < 4; ++i) EXPECT_FLOAT_EQ(c[i], 5.0f);
}

TEST(LayerNorm, ZeroMeanUnitVariance) {
  Rng rng(9);
  auto x = uniform_tensor({6, 32}, rng);
  auto y = layer_norm(x, Tensor::full({32}, 1), Tensor::zeros({32}), 0.0f);
  for (int r = 0; r < 6; ++r) {
    double m = 0.0, v = 0.0;
    for (int i = 0; i < 32; ++i) m += y[r * 32 + i];
    m /= 32;
    for (int i = 0; i < 32; ++i) v += (y[r * 32 + i] - m) * (y[r * 32 + i] - m);
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(v / 32, 1.0, 1e-5);
  }
}

TEST(BatchNorm, EvalWithUnitStatsIsIdentity) {
  Rng rng(10);
  auto x = uniform_tensor({2, 3, 4, 4}, rng);
  auto stats = BatchNormStats::make(3);
  auto y = batch_norm(x, Tensor::full({3}, 1), Tensor::zeros({3}), stats, Mode::eval);
  for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y[i], x[i], 1e-5);
}

TEST(BatchNorm, TrainModeCentersChannelsAndUpdatesStats) {
  Rng rng(11);
  auto x = uniform_tensor({2, 3, 4, 4}, rng, 1.0f, 3.0f);
  auto stats = BatchNormStats::make(3);
  auto y = batch_norm(x, Tensor::full({3}, 1), Tensor::zeros({3}), stats, Mode::train);
  for (int c = 0; c < 3; ++c) {
    double m = 0.0;
    for (int b = 0; b < 2; ++b)
      for (int p = 0; p < 16; ++p) m += y[(b * 3 + c) * 16 + p];
    EXPECT_NEAR(m / 32, 0.0, 1e-5);
    EXPECT_GT(stats.running_mean[c], 0.1f);  // moved toward the batch mean (~2)
  }
}

TEST(BatchNorm, EvalCallsDoNotUpdateStats) {
  Rng rng(12);
  auto x = uniform_tensor({1, 2, 3, 3}, rng);
  auto stats = BatchNormStats::make(2);
  stats.running_mean.mutable_data()[0] = 0.3f;
  auto g = Tensor::full({2}, 1.5f);
  auto b = Tensor::full({2}, 0.1f);
  auto y1 = batch_norm(x, g, b, stats, Mode::eval);
  auto y2 = batch_norm(x, g, b, stats, Mode::eval);
  for (std::int64_t i = 0; i < y1.numel(); ++i) EXPECT_EQ(y1[i], y2[i]);
  EXPECT_EQ(stats.running_mean[0], 0.3f);
}

TEST(BatchNorm, EmptyBatchIsRejected) {
  // A zero-sized batch cannot even be constructed.
  EXPECT_THROW(Tensor::zeros({0, 2, 3, 3}), ShapeError);
  auto stats = BatchNormStats::make(3);
  EXPECT_THROW(batch_norm(Tensor::zeros({1, 2, 3, 3}), Tensor::zeros({2}), Tensor::zeros({2}),
                          stats, Mode::train),
               ShapeError);
}

TEST(Activation, KnownValues) {
  EXPECT_FLOAT_EQ(sigmoid(Tensor::scalar(0)).item(), 0.5f);
  auto r = relu(Tensor::from({2}, {-1, 2}));
  EXPECT_EQ(r[0], 0.0f);
  EXPECT_EQ(r[1], 2.0f);
  EXPECT_EQ(gelu(Tensor::scalar(0)).item(), 0.0f);
  EXPECT_NEAR(gelu(Tensor::scalar(6)).item(), 6.0f, 1e-3);
}

TEST(Activation, SigmoidStaysStrictlyInsideUnitInterval) {
  auto y = sigmoid(Tensor::from({4}, {-200, -30, 30, 200}));
  for (int i = 0; i < 4; ++i) {
    EXPECT_GT(y[i], 0.0f);
    EXPECT_LT(y[i], 1.0f);
  }
}

TEST(Backward, SumOfSquares) {
  auto x = Tensor::from({3}, {1, -2, 0.5f}, true);
  sum(mul(x, x)).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 2.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], -4.0f);
  EXPECT_FLOAT_EQ(x.grad()[2], 1.0f);
}

TEST(Backward, LeafUsedTwiceAccumulates) {
  auto x = Tensor::from({2}, {1, 2}, true);
  auto branch1 = scale(x, 3.0f);
  auto branch2 = mul(x, x);
  sum(add(branch1, branch2)).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 3.0f + 2.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], 3.0f + 4.0f);
}

TEST(Backward, NonScalarThrows) {
  auto x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(scale(x, 2.0f).backward(), ShapeError);
}

TEST(Backward, ConvMatchesFiniteDifferences) {
  Rng rng(13);
  auto x = uniform_tensor({1, 2, 6, 6}, rng, -1, 1, true);
  auto w = uniform_tensor({3, 2, 3, 3}, rng, -1, 1, true);
  auto b = uniform_tensor({3}, rng, -1, 1, true);
  auto spec = ConvSpec::square(2, 3, 3, 1, 2, 2);
  auto rep = check_gradients([&](const auto& in) { return conv2d(in[0], in[1], in[2], spec); },
                             {x, w, b});
  EXPECT_LT(rep.worst(), 1e-3);
}

TEST(Backward, DeterministicAcrossRuns) {
  Rng rng(14);
  auto x = uniform_tensor({1, 2, 6, 6}, rng, -1, 1, true);
  auto w = uniform_tensor({2, 2, 3, 3}, rng, -1, 1, true);
  auto run = [&] {
    x.zero_grad();
    w.zero_grad();
    auto y = gelu(conv2d(x, w, {}, ConvSpec::square(2, 2, 3, 1, 1)));
    sum(mul(softmax(y, -1), y)).backward();
    std::vector<float> g(x.grad().begin(), x.grad().end());
    g.insert(g.end(), w.grad().begin(), w.grad().end());
    return g;
  };
  EXPECT_EQ(run(), run());
}

TEST(FiniteDiff, KnownDerivatives) {
  auto f_sq = [](const Tensor& t) {
    double s = 0.0;
    for (float v : t.data()) s += double(v) * v;
    return s;
  };
  auto g = finite_diff_grad(f_sq, Tensor::from({2}, {1, 2}));
  EXPECT_NEAR(g[0], 2.0, 1e-3);
  EXPECT_NEAR(g[1], 4.0, 1e-3);
  auto gs = finite_diff_grad([](const Tensor& t) { return double(sigmoid(t).item()); },
                             Tensor::scalar(0));
  EXPECT_NEAR(gs[0], 0.25, 1e-4);
  EXPECT_THROW(finite_diff_grad(f_sq, Tensor::scalar(1), -1.0), ShapeError);
}

TEST(FiniteDiff, AgreesWithBackwardOnRandomMlp) {
  Rng rng(15);
  auto x = uniform_tensor({4, 6}, rng, -1, 1, true);
  auto w1 = uniform_tensor({8, 6}, rng, -1, 1, true);
  auto b1 = uniform_tensor({8}, rng, -1, 1, true);
  auto w2 = uniform_tensor({3, 8}, rng, -1, 1, true);
  auto rep = check_gradients(
      [](const auto& in) { return linear(gelu(linear(in[0], in[1], in[2])), in[3], {}); },
      {x, w1, b1, w2});
  EXPECT_LT(rep.worst(), 1e-3);
}

// Every differentiable op against finite differences on inputs in [-1, 1].
TEST(GradientProperty, EveryOpMatchesFiniteDifferences) {
  for (auto& c : testing::op_gradient_cases()) {
    auto rep = check_gradients(c.fn, c.inputs);
    EXPECT_LT(rep.worst(), 1e-3) << c.name;
  }
}

TEST(CheckedMode, NonFiniteValuesAreReported) {
  CheckedModeGuard checked;
  auto x = Tensor::from({2}, {1.0f, 0.0f});
  auto big = Tensor::from({2}, {3e38f, 3e38f});
  EXPECT_THROW(scale(big, 10.0f), NumericError);
  EXPECT_NO_THROW(scale(x, 10.0f));
}

TEST(Serialization, RoundTripAndHeader) {
  Rng rng(17);
  auto t = uniform_tensor({2, 3, 4}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  const auto bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4 + 4 + 3 * 4 + 24 * 4u);
  EXPECT_EQ(bytes.substr(0, 4), "DCST");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 3u);  // rank, little-endian
  auto back = read_tensor(ss);
  EXPECT_EQ(back.shape(), t.shape());
  for (std::int64_t i = 0; i < t.numel(); ++i) EXPECT_EQ(back[i], t[i]);

  std::stringstream bad("XXXX");
  EXPECT_THROW(read_tensor(bad), DataError);
}

}  // namespace
}  // namespace dcst
