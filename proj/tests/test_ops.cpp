#include <gtest/gtest.h>

#include "pgcu/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace pgcu;
using oracle::random_tensor;

namespace {
constexpr double kOracleTol = 1e-12;
}

TEST(Conv2d, MatchesLoopNestAcrossStridesAndPadding) {
  Rng rng(1);
  for (std::size_t stride : {1, 2, 3}) {
    for (std::size_t pad : {0, 1, 2}) {
      const auto x = random_tensor({2, 8, 7}, rng);
      const auto w = random_tensor({3, 2, 3, 3}, rng);
      const auto b = random_tensor({3}, rng);
      const auto y = ops::conv2d(x, w, b, stride, pad);
      EXPECT_LE(max_abs_diff(y, oracle::conv2d(x, w, b, stride, pad)), kOracleTol)
          << "stride " << stride << " pad " << pad;
    }
  }
}

TEST(Conv2d, BackwardMatchesFiniteDifferences) {
  Rng rng(2);
  auto x = random_tensor({2, 6, 6}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  auto b = random_tensor({3}, rng);
  const auto up = random_tensor({3, 3, 3}, rng);
  const auto g = ops::conv2d_backward(x, w, up, 2, 1);
  auto f = [&] { return gradcheck::dot(ops::conv2d(x, w, b, 2, 1), up); };
  gradcheck::Result r;
  gradcheck::check_tensor(x, g.dx, "x", f, 1e-6, 1e-6, r);
  gradcheck::check_tensor(w, g.dw, "w", f, 1e-6, 1e-6, r);
  gradcheck::check_tensor(b, g.db, "b", f, 1e-6, 1e-6, r);
  EXPECT_LT(r.max_rel_err, 1e-6) << r.worst;
}

TEST(ConvTranspose2d, MatchesScatterReference) {
  Rng rng(3);
  for (std::size_t stride : {1, 2}) {
    const auto x = random_tensor({2, 5, 4}, rng);
    const auto w = random_tensor({2, 3, 4, 4}, rng);
    const auto b = random_tensor({3}, rng);
    const auto y = ops::conv_transpose2d(x, w, b, stride, 1);
    EXPECT_LE(max_abs_diff(y, oracle::conv_transpose2d(x, w, b, stride, 1)), kOracleTol);
  }
}

TEST(ConvTranspose2d, DoublesSizeWithKernelFourStrideTwoPadOne) {
  const Tensor<double> x({4, 32, 32});
  EXPECT_EQ(ops::conv_transpose2d(x, Tensor<double>({4, 4, 4, 4}), Tensor<double>({4}), 2, 1)
                .shape(),
            (Shape{4, 64, 64}));
}

TEST(ConvTranspose2d, BackwardMatchesFiniteDifferences) {
  Rng rng(4);
  auto x = random_tensor({2, 3, 3}, rng);
  auto w = random_tensor({2, 2, 4, 4}, rng);
  auto b = random_tensor({2}, rng);
  const auto up = random_tensor({2, 6, 6}, rng);
  const auto g = ops::conv_transpose2d_backward(x, w, up, 2, 1);
  auto f = [&] { return gradcheck::dot(ops::conv_transpose2d(x, w, b, 2, 1), up); };
  gradcheck::Result r;
  gradcheck::check_tensor(x, g.dx, "x", f, 1e-6, 1e-6, r);
  gradcheck::check_tensor(w, g.dw, "w", f, 1e-6, 1e-6, r);
  gradcheck::check_tensor(b, g.db, "b", f, 1e-6, 1e-6, r);
  EXPECT_LT(r.max_rel_err, 1e-6) << r.worst;
}

TEST(MaxPool, MatchesReferenceAndRoutesGradientToArgmax) {
  Rng rng(5);
  const auto x = random_tensor({3, 8, 6}, rng);
  const auto pooled = ops::max_pool2x2(x);
  EXPECT_LE(max_abs_diff(pooled.y, oracle::max_pool2x2(x)), kOracleTol);

  const auto dy = random_tensor(pooled.y.shape(), rng);
  const auto dx = ops::max_pool2x2_backward(x.shape(), pooled.argmax, dy);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double routed = 0;
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) {
            const double v = dx(c, 2 * i + a, 2 * j + b);
            if (x(c, 2 * i + a, 2 * j + b) == pooled.y(c, i, j)) routed += v;
            else EXPECT_EQ(v, 0.0);
          }
        EXPECT_EQ(routed, dy(c, i, j));
      }
}

TEST(MaxPool, RejectsOddSizes) {
  EXPECT_THROW(ops::max_pool2x2(Tensor<double>({1, 3, 4})), Error);
}

TEST(PixelShuffle, ChannelToOffsetMap) {
  const std::size_t r = 3;
  Tensor<double> x({r * r, 2, 2});
  for (std::size_t k = 0; k < r * r; ++k)
    for (std::size_t p = 0; p < 4; ++p) x[k * 4 + p] = double(k);
  const auto y = ops::pixel_shuffle(x, r);
  ASSERT_EQ(y.shape(), (Shape{1, 6, 6}));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(y(0, i, j), double((i % r) * r + j % r));
}

TEST(PixelShuffle, MatchesReferenceAndUnshuffleInverts) {
  Rng rng(6);
  const auto x = random_tensor({8, 3, 5}, rng);
  const auto y = ops::pixel_shuffle(x, 2);
  EXPECT_LE(max_abs_diff(y, oracle::pixel_shuffle(x, 2)), kOracleTol);
  EXPECT_EQ(ops::pixel_unshuffle(y, 2), x);
}

TEST(NearestUpsample, MatchesReferenceAndBackwardSumsBlocks) {
  Rng rng(7);
  const auto x = random_tensor({2, 3, 4}, rng);
  EXPECT_EQ(ops::nearest_upsample(x, 3), oracle::nearest(x, 3));
  const Tensor<double> ones({2, 9, 12}, 1.0);
  const auto g = ops::nearest_upsample_backward(ones, 3);
  for (double v : g.data()) EXPECT_EQ(v, 9.0);
}

TEST(Concat, SplitInvertsConcat) {
  Rng rng(8);
  const auto a = random_tensor({2, 3, 3}, rng), b = random_tensor({1, 3, 3}, rng);
  const auto c = ops::concat_channels(a, b);
  EXPECT_EQ(c, oracle::concat(a, b));
  const auto [a2, b2] = ops::split_channels(c, 2);
  EXPECT_EQ(a2, a);
  EXPECT_EQ(b2, b);
}

TEST(LinearLayerNorm, MatchesReference) {
  Rng rng(9);
  const std::size_t rows = 6, d = 8;
  const auto x = random_tensor({rows, d}, rng);
  const auto w = random_tensor({1, d, d}, rng);
  const auto b = random_tensor({1, d}, rng);
  const auto gain = random_tensor({1, d}, rng, 0.5, 1.5);
  const auto offset = random_tensor({1, d}, rng);
  Tensor<double> z({rows, d}), y({rows, d}), xhat({rows, d}), inv_std({rows});
  ops::linear_rows(x.raw(), rows, d, w.raw(), b.raw(), d, z.raw());
  ops::layer_norm_rows(z.raw(), rows, d, gain.raw(), offset.raw(), 1e-5, y.raw(), xhat.raw(),
                       inv_std.raw());
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> row(x.raw() + r * d, x.raw() + (r + 1) * d);
    const auto ref = oracle::project(row, w, b, gain, offset, 0);
    for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(y(r, k), ref[k], kOracleTol);
  }
}

TEST(LinearLayerNorm, BackwardMatchesFiniteDifferences) {
  Rng rng(10);
  const std::size_t rows = 3, d = 5;
  auto x = random_tensor({rows, d}, rng);
  auto w = random_tensor({d, d}, rng);
  auto b = random_tensor({d}, rng);
  auto gain = random_tensor({d}, rng, 0.5, 1.5);
  auto offset = random_tensor({d}, rng);
  const auto up = random_tensor({rows, d}, rng);
  auto forward = [&](Tensor<double>* z_out, Tensor<double>* xhat, Tensor<double>* inv) {
    Tensor<double> z({rows, d}), y({rows, d}), xh({rows, d}), is({rows});
    ops::linear_rows(x.raw(), rows, d, w.raw(), b.raw(), d, z.raw());
    ops::layer_norm_rows(z.raw(), rows, d, gain.raw(), offset.raw(), 1e-5, y.raw(), xh.raw(),
                         is.raw());
    if (z_out) *z_out = z;
    if (xhat) *xhat = xh;
    if (inv) *inv = is;
    return y;
  };
  Tensor<double> z, xhat, inv;
  forward(&z, &xhat, &inv);
  Tensor<double> dz({rows, d}), dx({rows, d}), dw({d, d}), db({d}), dgain({d}), doffset({d});
  ops::layer_norm_rows_backward(xhat.raw(), inv.raw(), rows, d, gain.raw(), up.raw(), dz.raw(),
                                dgain.raw(), doffset.raw());
  ops::linear_rows_backward(x.raw(), rows, d, w.raw(), d, dz.raw(), dx.raw(), dw.raw(), db.raw());
  auto f = [&] { return gradcheck::dot(forward(nullptr, nullptr, nullptr), up); };
  gradcheck::Result r;
  gradcheck::check_tensor(x, dx, "x", f, 1e-6, 1e-6, r);
  gradcheck::check_tensor(w, dw, "w", f, 1e-6, 1e-6, r);
  gradcheck::check_tensor(b, db, "b", f, 1e-6, 1e-6, r);
  gradcheck::check_tensor(gain, dgain, "gain", f, 1e-6, 1e-6, r);
  gradcheck::check_tensor(offset, doffset, "offset", f, 1e-6, 1e-6, r);
  EXPECT_LT(r.max_rel_err, 1e-5) << r.worst;
}

TEST(Activations, SigmoidAndReluBackward) {
  const Tensor<double> x({4}, {-2, -0.5, 0.5, 3});
  const auto s = ops::sigmoid(x);
  const auto ds = ops::sigmoid_backward(s, Tensor<double>({4}, 1.0));
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_NEAR(s[k], 1 / (1 + std::exp(-x[k])), 1e-15);
    EXPECT_NEAR(ds[k], s[k] * (1 - s[k]), 1e-15);
  }
  const auto r = ops::relu(x);
  const auto dr = ops::relu_backward(r, Tensor<double>({4}, 2.0));
  EXPECT_EQ(dr, Tensor<double>({4}, {0, 0, 2, 2}));
}
