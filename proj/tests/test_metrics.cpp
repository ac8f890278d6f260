#include <gtest/gtest.h>

#include <filesystem>

#include "oracles.hpp"
#include "togan/metrics.hpp"

using namespace togan;
namespace tu = togan::testing;
using tu::diag_stats;
using tu::random_matrix;

TEST(FeatureExtractor, DeterministicShapeAndDistinct) {
  FeatureExtractor fx;
  auto imgs = tu::rand_tensor_f({5, 3, 32, 32}, 1);
  auto a = fx.extract(imgs), b = fx.extract(imgs), c = fx.extract(imgs, 2);
  EXPECT_EQ(a.shape(), Shape({5, 64}));
  EXPECT_EQ(a, b);
  for (int64_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], c[i], 1e-5);
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) {
      bool differs = false;
      for (int k = 0; k < 64; ++k) differs |= a[i * 64 + k] != a[j * 64 + k];
      EXPECT_TRUE(differs) << i << " vs " << j;
    }
  FeatureExtractor again, other("another-name");
  EXPECT_EQ(fx.params().checksum(), again.params().checksum());
  EXPECT_EQ(fx.hash(), again.hash());
  EXPECT_NE(fx.params().checksum(), other.params().checksum());
  EXPECT_THROW(fx.extract(Tensor<float>({1, 3, 8, 8})), ContractError);
}

TEST(FeatureExtractor, NeverRecordsGradientsForItsWeights) {
  FeatureExtractor fx;
  auto img = ad::leaf(tu::rand_tensor_f({1, 3, 32, 32}, 2), true);
  std::vector<ad::Var<float>> wrt = fx.params().vars();
  wrt.insert(wrt.begin(), img);
  auto g = ad::backward(ad::sum(fx.forward(img)), wrt);
  EXPECT_TRUE(g[0].all_finite());
  for (size_t i = 1; i < g.size(); ++i)
    for (float v : g[i].span()) ASSERT_EQ(v, 0.0f);
}

TEST(FitGaussian, TwoPoints) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, 3);
  x(0, 0) = 1;
  x(1, 0) = -1;
  auto s = fit_gaussian(x);
  EXPECT_NEAR(s.mean.norm(), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(s.cov(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(s.cov.cwiseAbs().sum(), 2.0);
}

TEST(FitGaussian, ConstantFeaturesHaveZeroCovariance) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(10, 4, 3.25);
  EXPECT_EQ(fit_gaussian(x).cov.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(fit_gaussian(Eigen::MatrixXd::Zero(1, 4)), ContractError);
}

TEST(FitGaussian, MatchesTwoPassOracle) {
  Eigen::MatrixXd x = random_matrix(1000, 4, 3) * 2.0;
  x.col(1).array() += 5.0;
  auto s = fit_gaussian(x);
  for (int j = 0; j < 4; ++j) {
    double m = 0;
    for (int i = 0; i < 1000; ++i) m += x(i, j);
    m /= 1000;
    EXPECT_NEAR(s.mean[j], m, 1e-8);
  }
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      double ma = 0, mb = 0, c = 0;
      for (int i = 0; i < 1000; ++i) ma += x(i, a), mb += x(i, b);
      ma /= 1000, mb /= 1000;
      for (int i = 0; i < 1000; ++i) c += (x(i, a) - ma) * (x(i, b) - mb);
      EXPECT_NEAR(s.cov(a, b), c / 999, 1e-8);
    }
}

TEST(JacobiEigen, MatchesReferenceSolver) {
  Eigen::MatrixXd b = random_matrix(12, 12, 4);
  Eigen::MatrixXd a = b + b.transpose();
  auto e = jacobi_eigen(a);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(a);
  Eigen::VectorXd got = e.values;
  std::sort(got.data(), got.data() + got.size());
  EXPECT_LT((got - ref.eigenvalues()).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((e.vectors * e.values.asDiagonal() * e.vectors.transpose() - a).norm(), 1e-9);
  EXPECT_LT((e.vectors.transpose() * e.vectors - Eigen::MatrixXd::Identity(12, 12)).norm(), 1e-10);
  EXPECT_LE(e.sweeps, 100);
}

TEST(MatrixSqrt, Examples) {
  EXPECT_LT((matrix_sqrt_psd(Eigen::MatrixXd::Identity(5, 5)) - Eigen::MatrixXd::Identity(5, 5)).norm(), 1e-12);
  Eigen::MatrixXd d = Eigen::Vector2d(4, 9).asDiagonal();
  Eigen::MatrixXd want = Eigen::Vector2d(2, 3).asDiagonal();
  EXPECT_LT((matrix_sqrt_psd(d) - want).norm(), 1e-12);
  Eigen::MatrixXd ns = Eigen::MatrixXd::Identity(3, 3);
  ns(0, 1) = 0.1;
  EXPECT_THROW(matrix_sqrt_psd(ns), ContractError);
}

TEST(MatrixSqrt, ReconstructsRandomPsd) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    for (int n : {4, 16, 64}) {
      Eigen::MatrixXd b = random_matrix(n, n + 3, 10 + seed);
      Eigen::MatrixXd a = b * b.transpose();
      Eigen::MatrixXd r = matrix_sqrt_psd(a);
      EXPECT_LT((r * r - a).norm(), 1e-6) << "n " << n;
      EXPECT_LT((r - r.transpose()).norm(), 1e-12);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r);
      EXPECT_GE(es.eigenvalues().minCoeff(), -1e-9);
    }
  }
}

TEST(MatrixSqrt, RankDeficientClampsNegativeRounding) {
  Eigen::MatrixXd b = random_matrix(20, 3, 7);
  Eigen::MatrixXd a = b * b.transpose();
  Eigen::MatrixXd r = matrix_sqrt_psd(a);
  EXPECT_TRUE(r.allFinite());
  EXPECT_LT((r * r - a).norm(), 1e-6);
}

TEST(Frechet, IdenticalIsZero) {
  Eigen::MatrixXd x = random_matrix(500, 8, 5);
  auto s = fit_gaussian(x);
  EXPECT_NEAR(frechet_distance(s, s), 0.0, 1e-8);
}

TEST(Frechet, OneDimensional) {
  EXPECT_NEAR(frechet_distance(diag_stats({0}, {1}), diag_stats({1}, {1})), 1.0, 1e-12);
}

TEST(Frechet, DiagonalClosedForm) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.01, 5.0), m(-2, 2);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> ma, mb, va, vb;
    for (int d = 0; d < 16; ++d) ma.push_back(m(rng)), mb.push_back(m(rng)), va.push_back(u(rng)), vb.push_back(u(rng));
    double want = 0;
    for (int d = 0; d < 16; ++d)
      want += (ma[d] - mb[d]) * (ma[d] - mb[d]) + std::pow(std::sqrt(va[d]) - std::sqrt(vb[d]), 2);
    EXPECT_NEAR(frechet_distance(diag_stats(ma, va), diag_stats(mb, vb)), want, 1e-8);
  }
}

TEST(Frechet, SymmetricAndPositive) {
  auto a = fit_gaussian(random_matrix(300, 10, 8));
  auto b = fit_gaussian(random_matrix(300, 10, 9) * 1.5);
  EXPECT_NEAR(frechet_distance(a, b), frechet_distance(b, a), 1e-6);
  EXPECT_GT(frechet_distance(a, b), 0.1);
  GaussianStats c = a;
  c.mean.conservativeResize(9);
  EXPECT_THROW(frechet_distance(a, c), ContractError);
}

TEST(Fid, SameImagesGiveZeroAndRepeatable) {
  FeatureExtractor fx;
  auto imgs = tu::rand_tensor_f({300, 3, 16, 16}, 10);
  ImageSampler sampler = [&](int64_t s, int64_t c) {
    Shape sh{c, 3, 16, 16};
    return Tensor<float>(sh, std::vector<float>(imgs.data() + s * 768, imgs.data() + (s + c) * 768));
  };
  auto real = image_stats(fx, sampler, 300);
  auto r1 = fid(fx, real, sampler, 300), r2 = fid(fx, real, sampler, 300);
  EXPECT_NEAR(r1.value, 0.0, 1e-6);
  EXPECT_EQ(r1.value, r2.value);
  EXPECT_EQ(r1.extractor_hash, fx.hash());
}

TEST(StatsCache, RoundTripAndKeying) {
  auto s = fit_gaussian(random_matrix(100, 6, 11));
  auto path = (std::filesystem::temp_directory_path() / "togan_stats_test.bin").string();
  save_stats(path, s, 42, 7);
  GaussianStats back;
  ASSERT_TRUE(load_stats(path, 42, 7, back));
  EXPECT_EQ(back.count, 100);
  EXPECT_LT((back.mean - s.mean).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((back.cov - s.cov).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_FALSE(load_stats(path, 43, 7, back));
  EXPECT_FALSE(load_stats(path, 42, 8, back));
  EXPECT_FALSE(load_stats(path + ".missing", 42, 7, back));
  std::filesystem::remove(path);
}
