#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "pgcu/metrics.hpp"
#include "support/expect_error.hpp"
#include "support/metric_oracles.hpp"
#include "support/oracles.hpp"

using namespace pgcu;
using oracle::random_tensor;
using testing_support::error_code;

namespace {

constexpr double kMetricTol = 1e-10;
// The 1e-12 guard in the angle denominator puts identical spectra about
// sqrt(2e-12 / |x|^2) away from zero after acos.
constexpr double kSamZeroTol = 1e-5;

Tensor<double> filled(Shape shape, double v) { return Tensor<double>(std::move(shape), v); }

}  // namespace

TEST(Psnr, CapAndArithmetic) {
  Rng rng(1);
  const auto x = random_tensor({2, 8, 8}, rng, 0, 1);
  EXPECT_EQ(psnr(x, x), kPsnrCap);
  // Every pixel off by 0.1: MSE 0.01.
  auto y = x;
  for (auto& v : y.data()) v += 0.1;
  EXPECT_NEAR(psnr(x, y), 20.0, 1e-10);
}

TEST(Psnr, MatchesOracleAndIsSymmetric) {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = random_tensor({2, 8, 8}, rng, 0, 1);
    const auto y = random_tensor({2, 8, 8}, rng, 0, 1);
    EXPECT_NEAR(psnr(x, y), oracle::psnr(x, y), kMetricTol);
    EXPECT_EQ(psnr(x, y), psnr(y, x));
  }
}

TEST(Psnr, RejectsShapeMismatch) {
  EXPECT_EQ(error_code([] { psnr(filled({2, 4, 4}, 0), filled({2, 4, 5}, 0)); }), Errc::kShape);
}

TEST(Sam, ScaledSpectraHaveZeroAngle) {
  Rng rng(3);
  const auto x = random_tensor({3, 8, 8}, rng, 0.1, 1);
  auto y = x;
  for (auto& v : y.data()) v *= 2;
  EXPECT_NEAR(sam(x, y), 0.0, kSamZeroTol);
  EXPECT_NEAR(sam(x, x), 0.0, kSamZeroTol);
}

TEST(Sam, OrthogonalSpectraGiveRightAngle) {
  Tensor<double> x({2, 4, 4}), y({2, 4, 4});
  for (std::size_t k = 0; k < 16; ++k) {
    x[k] = 1;
    y[16 + k] = 1;
  }
  EXPECT_NEAR(sam(x, y), std::numbers::pi / 2, 1e-12);
}

TEST(Sam, ZeroSpectrumPixelsContributeNothing) {
  Tensor<double> x({2, 1, 2}, {1, 0, 0, 0}), y({2, 1, 2}, {0, 0, 1, 0});
  // Pixel 0 is orthogonal, pixel 1 is all zero.
  EXPECT_NEAR(sam(x, y), std::numbers::pi / 4, 1e-12);
}

TEST(Sam, InvariantToPositivePerPixelScaling) {
  Rng rng(4);
  const auto x = random_tensor({4, 8, 8}, rng, 0.05, 1);
  const auto y = random_tensor({4, 8, 8}, rng, 0.05, 1);
  auto scaled = y;
  for (std::size_t p = 0; p < 64; ++p) {
    const double s = rng.uniform(0.2, 3);
    for (std::size_t c = 0; c < 4; ++c) scaled[c * 64 + p] *= s;
  }
  EXPECT_NEAR(sam(x, y), sam(x, scaled), 1e-10);
}

TEST(Sam, MatchesOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = random_tensor({2, 8, 8}, rng, 0, 1);
    const auto y = random_tensor({2, 8, 8}, rng, 0, 1);
    EXPECT_NEAR(sam(x, y), oracle::sam(x, y), kMetricTol);
  }
}

TEST(Ergas, IdentityAndArithmetic) {
  Rng rng(6);
  const auto x = random_tensor({2, 8, 8}, rng, 0.1, 1);
  EXPECT_EQ(ergas(x, x, 4), 0.0);
  // One channel, mean 0.5, error of 0.5 everywhere: RMSE = mean.
  EXPECT_NEAR(ergas(filled({1, 4, 4}, 0.5), filled({1, 4, 4}, 1.0), 4), 25.0, 1e-12);
}

TEST(Ergas, MatchesOracleAndIsAsymmetric) {
  Rng rng(7);
  const auto x = random_tensor({2, 8, 8}, rng, 0, 1);
  const auto y = random_tensor({2, 8, 8}, rng, 0, 0.5);
  EXPECT_NEAR(ergas(x, y, 4), oracle::ergas(x, y, 4), kMetricTol);
  EXPECT_NE(ergas(x, y, 4), ergas(y, x, 4));
}

TEST(Ergas, ZeroMeanReferenceChannelIsDegenerate) {
  Tensor<double> ref({2, 4, 4}, 0.5);
  for (std::size_t k = 16; k < 32; ++k) ref[k] = 0;
  EXPECT_EQ(error_code([&] { ergas(ref, filled({2, 4, 4}, 0.3), 4); }),
            Errc::kDegenerateReference);
}

TEST(Ssim, WindowIsNormalisedGaussian) {
  const auto w = ssim_window();
  ASSERT_EQ(w.size(), 121u);
  double sum = 0;
  for (double v : w) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-15);
  EXPECT_NEAR(w[0] / w[60], std::exp(-50 / (2 * 1.5 * 1.5)), 1e-15);
}

TEST(Ssim, IdenticalAndConstantImagesScoreOne) {
  Rng rng(8);
  const auto x = random_tensor({2, 16, 16}, rng, 0, 1);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
  EXPECT_NEAR(ssim(filled({1, 12, 12}, 0.3), filled({1, 12, 12}, 0.3)), 1.0, 1e-12);
}

TEST(Ssim, InvertedImageScoresBelowOneAndMatchesOracle) {
  Rng rng(9);
  const auto x = random_tensor({2, 16, 16}, rng, 0, 1);
  auto inv = x;
  for (auto& v : inv.data()) v = 1 - v;
  EXPECT_LT(ssim(x, inv), 1.0);
  EXPECT_NEAR(ssim(x, inv), oracle::ssim(x, inv), kMetricTol);
  const auto y = random_tensor({2, 16, 16}, rng, 0, 1);
  EXPECT_NEAR(ssim(x, y), oracle::ssim(x, y), kMetricTol);
}

TEST(Ssim, ImageSmallerThanWindowIsRejected) {
  EXPECT_EQ(error_code([] { ssim(filled({2, 8, 8}, 0), filled({2, 8, 8}, 0)); }), Errc::kShape);
}

TEST(Scc, SelfCorrelationIsOne) {
  Rng rng(10);
  const auto x = random_tensor({2, 8, 8}, rng, 0, 1);
  EXPECT_NEAR(scc(x, x), 1.0, 1e-12);
}

TEST(Scc, ConstantImageScoresZero) {
  Rng rng(11);
  EXPECT_EQ(scc(random_tensor({2, 8, 8}, rng, 0, 1), filled({2, 8, 8}, 0.4)), 0.0);
}

TEST(Scc, MatchesOracle) {
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = random_tensor({2, 8, 8}, rng, 0, 1);
    const auto y = random_tensor({2, 8, 8}, rng, 0, 1);
    EXPECT_NEAR(scc(x, y), oracle::scc(x, y), kMetricTol);
  }
}

TEST(Report, IdenticalImagesGivePerfectScores) {
  Rng rng(13);
  const auto x = random_tensor({3, 16, 16}, rng, 0.05, 1);
  const auto r = evaluate_all(x, x, 4);
  EXPECT_NEAR(r.sam, 0.0, kSamZeroTol);
  EXPECT_EQ(r.ergas, 0.0);
  EXPECT_NEAR(r.ssim, 1.0, 1e-12);
  EXPECT_NEAR(r.scc, 1.0, 1e-12);
  EXPECT_EQ(r.psnr, 100.0);
}

TEST(Report, ImageOverloadAgreesWithTensorOverload) {
  Rng rng(14);
  const auto x = random_tensor({2, 16, 16}, rng, 0.05, 1);
  const auto y = random_tensor({2, 16, 16}, rng, 0.05, 1);
  EXPECT_EQ(evaluate_all(MSImage::from(x), MSImage::from(y), 4), evaluate_all(x, y, 4));
}

TEST(Report, JsonUsesFixedKeysAndRoundTrips) {
  const MetricsReport r{0.1, 2.5, 0.9, 0.8, 30.0};
  const nlohmann::json j = r;
  EXPECT_EQ(j.size(), 5u);
  for (const auto& key : {"sam", "ergas", "ssim", "scc", "psnr"}) EXPECT_TRUE(j.contains(key));
  EXPECT_EQ(j["ergas"], 2.5);
  EXPECT_EQ(j.get<MetricsReport>(), r);
}

TEST(Report, MeanIsFieldwise) {
  Rng rng(15);
  std::vector<MetricsReport> reports;
  for (int k = 0; k < 4; ++k) {
    const auto x = random_tensor({2, 16, 16}, rng, 0.05, 1);
    const auto y = random_tensor({2, 16, 16}, rng, 0.05, 1);
    reports.push_back(evaluate_all(x, y, 4));
  }
  const auto m = mean_report(reports);
  for (const auto& name : metric_names()) {
    double sum = 0;
    for (const auto& r : reports) sum += metric_value(r, name);
    EXPECT_NEAR(metric_value(m, name), sum / 4, 1e-12) << name;
  }
  EXPECT_EQ(mean_report({}), MetricsReport{});
}

TEST(Report, TableMarksBestPerColumn) {
  const std::vector<std::pair<std::string, MetricsReport>> rows{
      {"a", {0.10, 3.0, 0.80, 0.90, 30.0}},
      {"b", {0.05, 4.0, 0.85, 0.70, 28.0}},
  };
  const auto table = render_table(rows, "upsampler");
  EXPECT_NE(table.find("upsampler"), std::string::npos);
  EXPECT_NE(table.find("PSNR"), std::string::npos);
  EXPECT_NE(table.find("0.0500*"), std::string::npos);  // lower SAM wins
  EXPECT_NE(table.find("30.000*"), std::string::npos);  // higher PSNR wins
  EXPECT_EQ(table.find("28.000*"), std::string::npos);
  EXPECT_TRUE(higher_is_better("ssim"));
  EXPECT_FALSE(higher_is_better("ergas"));
}
