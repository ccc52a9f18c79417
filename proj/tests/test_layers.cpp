#include <gtest/gtest.h>

#include <numeric>

#include "gradcheck.hpp"
#include "progrow/nn/attention.hpp"
#include "progrow/nn/conv.hpp"
#include "progrow/nn/layers.hpp"
#include "progrow/nn/norm.hpp"

using namespace progrow;
using progrow::testing::gradient_check;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double sd = 1.0) {
  Tensor<double> t(std::move(s));
  nn::fill_normal(t, rng, sd);
  return t;
}

// direct 7-loop convolution
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b, const nn::ConvGeometry& g) {
  const std::size_t n = x.dim(0), h = x.dim(2), wd = x.dim(3);
  const std::size_t oh = g.out_extent(h), ow = g.out_extent(wd);
  Tensor<double> y({n, g.out_channels, oh, ow});
  for (std::size_t bi = 0; bi < n; ++bi)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t yy = 0; yy < oh; ++yy)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double s = b ? (*b)[o] : 0.0;
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ki = 0; ki < g.kernel; ++ki)
              for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                const auto iy = static_cast<long>(yy * g.stride + ki) - static_cast<long>(g.padding);
                const auto ix = static_cast<long>(xx * g.stride + kj) - static_cast<long>(g.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
                s += w[((o * g.in_channels + c) * g.kernel + ki) * g.kernel + kj] * x[((bi * g.in_channels + c) * h + iy) * wd + ix];
              }
          y[((bi * g.out_channels + o) * oh + yy) * ow + xx] = s;
        }
  return y;
}

void expect_close(const Tensor<double>& a, const Tensor<double>& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], tol) << "index " << i;
}

}  // namespace

class ConvGeometries : public ::testing::TestWithParam<nn::ConvGeometry> {};

TEST_P(ConvGeometries, MatchesDirectLoop) {
  const auto g = GetParam();
  auto rng = stream(1, "conv");
  nn::Conv2d<double> conv(g, true);
  conv.reset(rng);
  nn::fill_normal(conv.bias(), rng, 0.5);
  auto x = random_tensor({2, g.in_channels, 7, 6}, rng);
  expect_close(conv.forward(x), naive_conv(x, conv.weight(), &conv.bias(), g), 1e-10);
}

TEST_P(ConvGeometries, Gradients) {
  const auto g = GetParam();
  auto rng = stream(2, "conv");
  nn::Conv2d<double> conv(g, true);
  conv.reset(rng);
  nn::Collector<double> c;
  conv.collect(c, "conv");
  auto rep = gradient_check([&](const Tensor<double>& x) { return conv.forward(x); },
                            [&](const Tensor<double>& gy) { return conv.backward(gy); }, c.params, random_tensor({2, g.in_channels, 7, 6}, rng),
                            rng);
  EXPECT_LT(rep.worst_relative_error, 1e-6) << rep.worst_tensor;
  EXPECT_EQ(rep.tensors_checked, 3u);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvGeometries,
                         ::testing::Values(nn::ConvGeometry{3, 4, 3, 1, 1}, nn::ConvGeometry{3, 5, 3, 2, 1},
                                           nn::ConvGeometry{2, 3, 1, 1, 0}, nn::ConvGeometry{2, 3, 1, 2, 0},
                                           nn::ConvGeometry{3, 2, 4, 2, 0}, nn::ConvGeometry{1, 2, 7, 2, 3}));

TEST(Linear, MatchesMatrixProductAndGradients) {
  auto rng = stream(3, "linear");
  nn::Linear<double> lin(5, 3);
  lin.reset(rng);
  auto x = random_tensor({4, 5}, rng);
  auto y = lin.forward(x);
  ASSERT_EQ(y.shape(), (Shape{4, 3}));
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t o = 0; o < 3; ++o) {
      double s = lin.bias()[o];
      for (std::size_t i = 0; i < 5; ++i) s += lin.weight()[o * 5 + i] * x[r * 5 + i];
      EXPECT_NEAR(y[r * 3 + o], s, 1e-12);
    }
  nn::Collector<double> c;
  lin.collect(c, "fc");
  auto rep = gradient_check([&](const Tensor<double>& in) { return lin.forward(in); },
                            [&](const Tensor<double>& g) { return lin.backward(g); }, c.params, random_tensor({2, 3, 5}, rng), rng);
  EXPECT_LT(rep.worst_relative_error, 1e-6) << rep.worst_tensor;
}

TEST(MaxPool, PicksWindowMaximumAndRoutesGradient) {
  nn::MaxPool2d<double> pool(3, 2, 1);
  Tensor<double> x({1, 1, 4, 4});
  std::iota(x.vec().begin(), x.vec().end(), 0.0);
  auto y = pool.forward(x);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(y.vec(), (std::vector<double>{5, 7, 13, 15}));
  Tensor<double> g(y.shape(), 1.0);
  auto gx = pool.backward(g);
  EXPECT_DOUBLE_EQ(gx[5], 1.0);
  EXPECT_DOUBLE_EQ(gx[15], 1.0);
  EXPECT_DOUBLE_EQ(std::accumulate(gx.vec().begin(), gx.vec().end(), 0.0), 4.0);
}

TEST(BatchNorm, TrainModeNormalizesPerChannel) {
  auto rng = stream(4, "bn");
  nn::BatchNorm2d<double> bn(3);
  bn.reset();
  auto x = random_tensor({4, 3, 5, 5}, rng, 3.0);
  for (auto& v : x.vec()) v += 2.0;
  auto y = bn.forward(x, true);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, sq = 0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < 25; ++i) {
        const double v = y[(b * 3 + c) * 25 + i];
        m += v;
        sq += v * v;
      }
    EXPECT_NEAR(m / 100, 0.0, 1e-10);
    EXPECT_NEAR(sq / 100, 1.0, 1e-3);
  }
}

TEST(BatchNorm, EvalModeUsesRunningStatistics) {
  nn::BatchNorm2d<double> bn(1, 1.0);  // momentum 1: running stats = last batch
  bn.reset();
  Tensor<double> x({2, 1, 1, 2}, 0.0);
  x.vec() = {1, 3, 5, 7};
  bn.forward(x, true);
  Tensor<double> probe({1, 1, 1, 1}, 4.0);
  EXPECT_NEAR(bn.forward(probe, false)[0], 0.0, 1e-9);
  // unbiased variance of {1,3,5,7} is 20/3
  Tensor<double> probe2({1, 1, 1, 1}, 4.0 + std::sqrt(20.0 / 3.0 + 1e-5));
  EXPECT_NEAR(bn.forward(probe2, false)[0], 1.0, 1e-9);
}

TEST(BatchNorm, Gradients) {
  auto rng = stream(5, "bn");
  nn::BatchNorm2d<double> bn(3);
  bn.reset();
  nn::Collector<double> c;
  bn.collect(c, "bn");
  progrow::testing::jitter_parameters(c.params, rng);
  auto rep = gradient_check([&](const Tensor<double>& x) { return bn.forward(x, true); },
                            [&](const Tensor<double>& g) { return bn.backward(g); }, c.params, random_tensor({3, 3, 2, 2}, rng), rng);
  EXPECT_LT(rep.worst_relative_error, 1e-6) << rep.worst_tensor;
}

TEST(LayerNorm, NormalizesRowsAndGradients) {
  auto rng = stream(6, "ln");
  nn::LayerNorm<double> ln(6);
  ln.reset();
  auto x = random_tensor({2, 3, 6}, rng, 2.0);
  auto y = ln.forward(x);
  for (std::size_t r = 0; r < 6; ++r) {
    double m = 0;
    for (std::size_t i = 0; i < 6; ++i) m += y[r * 6 + i];
    EXPECT_NEAR(m, 0.0, 1e-10);
  }
  nn::Collector<double> c;
  ln.collect(c, "ln");
  progrow::testing::jitter_parameters(c.params, rng);
  auto rep = gradient_check([&](const Tensor<double>& in) { return ln.forward(in); },
                            [&](const Tensor<double>& g) { return ln.backward(g); }, c.params, x, rng);
  EXPECT_LT(rep.worst_relative_error, 1e-6) << rep.worst_tensor;
}

TEST(Activations, ReluAndGeluGradients) {
  auto rng = stream(7, "act");
  nn::ReLU<double> relu;
  nn::GELU<double> gelu;
  auto x = random_tensor({3, 7}, rng);
  for (auto& v : x.vec())
    if (std::abs(v) < 1e-3) v = 0.5;
  auto r1 = gradient_check([&](const Tensor<double>& in) { return relu.forward(in); },
                           [&](const Tensor<double>& g) { return relu.backward(g); }, {}, x, rng);
  auto r2 = gradient_check([&](const Tensor<double>& in) { return gelu.forward(in); },
                           [&](const Tensor<double>& g) { return gelu.backward(g); }, {}, x, rng);
  EXPECT_LT(r1.worst_relative_error, 1e-6);
  EXPECT_LT(r2.worst_relative_error, 1e-6);
  EXPECT_NEAR(gelu.forward(Tensor<double>({1}, 1.0))[0], 0.8413447460685429, 1e-12);
}

TEST(Attention, MatchesNaiveSoftmaxAttention) {
  auto rng = stream(8, "attn");
  const std::size_t b = 2, t = 4, d = 6, heads = 2, dh = 3;
  nn::MultiHeadSelfAttention<double> attn(d, heads);
  attn.reset(rng);
  nn::Collector<double> c;
  attn.collect(c, "attn");
  for (auto& p : c.params)
    if (p.value->rank() == 1) nn::fill_normal(*p.value, rng, 0.3);
  auto x = random_tensor({b, t, d}, rng);
  auto y = attn.forward(x);

  auto find = [&](const std::string& n) -> const Tensor<double>& {
    for (auto& p : c.params)
      if (p.name == n) return *p.value;
    throw std::runtime_error("missing " + n);
  };
  const auto &wqkv = find("attn.qkv.weight"), &bqkv = find("attn.qkv.bias");
  const auto &wp = find("attn.proj.weight"), &bp = find("attn.proj.bias");
  for (std::size_t n = 0; n < b; ++n) {
    std::vector<double> qkv(t * 3 * d);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t o = 0; o < 3 * d; ++o) {
        double s = bqkv[o];
        for (std::size_t k = 0; k < d; ++k) s += wqkv[o * d + k] * x[(n * t + i) * d + k];
        qkv[i * 3 * d + o] = s;
      }
    std::vector<double> ctx(t * d, 0.0);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < t; ++i) {
        std::vector<double> sc(t);
        double mx = -1e300;
        for (std::size_t j = 0; j < t; ++j) {
          double s = 0;
          for (std::size_t k = 0; k < dh; ++k) s += qkv[i * 3 * d + h * dh + k] * qkv[j * 3 * d + d + h * dh + k];
          sc[j] = s / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, sc[j]);
        }
        double z = 0;
        for (auto& s : sc) z += (s = std::exp(s - mx));
        for (std::size_t j = 0; j < t; ++j)
          for (std::size_t k = 0; k < dh; ++k) ctx[i * d + h * dh + k] += sc[j] / z * qkv[j * 3 * d + 2 * d + h * dh + k];
      }
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t o = 0; o < d; ++o) {
        double s = bp[o];
        for (std::size_t k = 0; k < d; ++k) s += wp[o * d + k] * ctx[i * d + k];
        EXPECT_NEAR(y[(n * t + i) * d + o], s, 1e-10);
      }
  }
}

TEST(Attention, Gradients) {
  auto rng = stream(9, "attn");
  nn::MultiHeadSelfAttention<double> attn(8, 2);
  attn.reset(rng);
  nn::Collector<double> c;
  attn.collect(c, "attn");
  auto rep = gradient_check([&](const Tensor<double>& in) { return attn.forward(in); },
                            [&](const Tensor<double>& g) { return attn.backward(g); }, c.params, random_tensor({2, 5, 8}, rng), rng);
  EXPECT_LT(rep.worst_relative_error, 1e-6) << rep.worst_tensor;
}

class ModuleGradients : public ::testing::TestWithParam<std::size_t> {};

TEST_P(ModuleGradients, BelowTolerance) {
  const auto cases = progrow::testing::gradient_cases();
  const auto& gc = cases.at(GetParam());
  const auto rep = gc.run(11);
  EXPECT_LT(rep.worst_relative_error, 1e-5) << gc.name << " worst tensor " << rep.worst_tensor;
  EXPECT_GT(rep.tensors_checked, 1u);
}

INSTANTIATE_TEST_SUITE_P(AllBlocks, ModuleGradients, ::testing::Range<std::size_t>(0, progrow::testing::gradient_cases().size()));
