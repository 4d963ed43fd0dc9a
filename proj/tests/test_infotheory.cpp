#include <cmath>
#include <numbers>

#include <boost/math/special_functions/digamma.hpp>
#include <gtest/gtest.h>

#include "miafano/experiment.hpp"
#include "miafano/infotheory.hpp"

using namespace miafano;
using infotheory::EntropyOptions;

namespace {

Matrix gaussian(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  Matrix m(n, d);
  for (double& v : m.data) v = g(rng);
  return m;
}

Matrix column(const Matrix& m, std::size_t c) {
  Matrix out(m.rows, 1);
  for (std::size_t r = 0; r < m.rows; ++r) out(r, 0) = m(r, c);
  return out;
}

}  // namespace

TEST(EntropyKnn, StandardGaussian) {
  const double truth = 0.5 * std::log(2 * std::numbers::pi * std::numbers::e);
  EXPECT_NEAR(infotheory::entropy_knn(gaussian(20000, 1, 1)), truth, 0.05);
}

TEST(EntropyKnn, Uniform) {
  Rng rng(2);
  std::uniform_real_distribution<double> u;
  Matrix m(20000, 1);
  for (double& v : m.data) v = u(rng);
  EXPECT_NEAR(infotheory::entropy_knn(m), 0.0, 0.05);
}

TEST(EntropyKnn, BivariateGaussian) {
  const double truth = std::log(2 * std::numbers::pi * std::numbers::e);
  EXPECT_NEAR(infotheory::entropy_knn(gaussian(20000, 2, 3)), truth, 0.05);
}

TEST(EntropyKnn, ScalingAddsLogTwo) {
  auto x = gaussian(20000, 1, 4);
  auto y = x;
  for (double& v : y.data) v *= 2.0;
  EXPECT_NEAR(infotheory::entropy_knn(y) - infotheory::entropy_knn(x), std::log(2.0), 0.02);
}

TEST(EntropyKnn, PermutationInvariant) {
  auto x = gaussian(3000, 3, 5);
  EntropyOptions opt;
  opt.jitter = 0.0;
  Matrix perm(x.rows, x.cols);
  std::vector<std::size_t> order(x.rows);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), Rng(6));
  for (std::size_t r = 0; r < x.rows; ++r) std::copy(x.row(order[r]).begin(), x.row(order[r]).end(), perm.row(r).begin());
  EXPECT_NEAR(infotheory::entropy_knn(x, opt), infotheory::entropy_knn(perm, opt), 1e-12);
}

TEST(EntropyKnn, PlainFormOffsetFromKozachenkoLeonenko) {
  auto x = gaussian(1000, 2, 7);
  for (std::size_t k : {1u, 3u, 5u}) {
    EntropyOptions kl;
    kl.k = k;
    auto plain = kl;
    plain.estimator = infotheory::KnnEstimator::plain;
    const double n = 1000;
    const double offset = std::log(n - 1) - std::log(static_cast<double>(k)) - boost::math::digamma(n) +
                          boost::math::digamma(static_cast<double>(k));
    EXPECT_NEAR(infotheory::entropy_knn(x, plain) - infotheory::entropy_knn(x, kl), offset, 1e-10);
  }
}

TEST(EntropyKnn, PlainFormMatchesFormulaByHand) {
  // Points {0, 1, 3}, k = 1, d = 1: p_k = k/(n-1) * Gamma(1.5)/sqrt(pi) / r.
  Matrix p(3, 1);
  p.data = {0.0, 1.0, 3.0};
  const std::vector<double> r{1, 1, 2};
  double h = 0;
  for (double ri : r) h -= std::log(1.0 / 2.0 * std::tgamma(1.5) / std::sqrt(std::numbers::pi) / ri);
  h /= 3.0;
  EXPECT_NEAR(infotheory::entropy_from_points(p, 1, infotheory::KnnEstimator::plain), h, 1e-12);
}

TEST(EntropyKnn, DuplicatesNeedJitter) {
  Matrix p(10, 1, 1.0);
  EntropyOptions opt;
  opt.jitter = 0.0;
  try {
    infotheory::entropy_knn(p, opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::duplicate_points);
  }
  opt.jitter = 1e-10;
  EXPECT_TRUE(std::isfinite(infotheory::entropy_knn(p, opt)));
}

TEST(EntropyKnn, JitterDeterministicInSeed) {
  auto x = gaussian(500, 2, 8);
  EntropyOptions a;
  a.jitter = 1e-3;
  a.seed = 4;
  EXPECT_EQ(infotheory::entropy_knn(x, a), infotheory::entropy_knn(x, a));
  auto b = a;
  b.seed = 5;
  EXPECT_NE(infotheory::entropy_knn(x, a), infotheory::entropy_knn(x, b));
}

TEST(MutualInformation, IndependentPairs) {
  auto xy = gaussian(20000, 2, 9);
  EXPECT_LT(std::abs(infotheory::mutual_information(column(xy, 0), column(xy, 1)).value), 0.05);
}

TEST(MutualInformation, ShuffledPairsAreIndependent) {
  const double rho = 0.9;
  auto z = gaussian(20000, 2, 10);
  Matrix x(20000, 1), y(20000, 1);
  for (std::size_t i = 0; i < 20000; ++i) {
    x(i, 0) = z(i, 0);
    y(i, 0) = rho * z(i, 0) + std::sqrt(1 - rho * rho) * z(i, 1);
  }
  std::vector<std::size_t> order(20000);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), Rng(11));
  Matrix ys(20000, 1);
  for (std::size_t i = 0; i < 20000; ++i) ys(i, 0) = y(order[i], 0);
  EXPECT_LT(std::abs(infotheory::mutual_information(x, ys).value), 0.05);
}

TEST(MutualInformation, CorrelatedGaussian) {
  const double rho = 0.9;
  auto z = gaussian(20000, 2, 12);
  Matrix x(20000, 1), y(20000, 1);
  for (std::size_t i = 0; i < 20000; ++i) {
    x(i, 0) = z(i, 0);
    y(i, 0) = rho * z(i, 0) + std::sqrt(1 - rho * rho) * z(i, 1);
  }
  const auto est = infotheory::mutual_information(x, y);
  EXPECT_NEAR(est.value, -0.5 * std::log(1 - rho * rho), 0.1);
  EXPECT_DOUBLE_EQ(est.value, est.h_x + est.h_y - est.h_xy);
  EXPECT_EQ(est.n, 20000u);
  EXPECT_EQ(est.k, 3u);

  const auto bits = infotheory::mutual_information(x, y, {}, LogBase::bits);
  EXPECT_NEAR(bits.value, est.value / std::numbers::ln2, 1e-12);
  EXPECT_EQ(bits.base, LogBase::bits);
}

TEST(MutualInformation, IdenticalVariablesLarge) {
  auto x = gaussian(5000, 1, 13);
  const auto est = infotheory::mutual_information(x, x);
  EXPECT_TRUE(std::isfinite(est.value));
  EXPECT_GT(est.value, 3.0);
}

TEST(MutualInformation, Symmetric) {
  auto x = gaussian(2000, 2, 14);
  auto y = gaussian(2000, 1, 15);
  for (std::size_t i = 0; i < 2000; ++i) y(i, 0) += x(i, 0) * x(i, 1);
  EntropyOptions opt;
  opt.seed = 3;
  EXPECT_NEAR(infotheory::mutual_information(x, y, opt).value, infotheory::mutual_information(y, x, opt).value, 1e-9);
}

TEST(MutualInformation, UnequalRows) {
  try {
    infotheory::mutual_information(gaussian(10, 1, 1), gaussian(11, 1, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
  }
}

TEST(ModelMi, ZeroWeightModel) {
  auto ds = data::synth_blobs(4, 100, 10, 1.0, 1);
  auto split = data::split_membership(ds, 0.5, 3);
  auto m = nn::mlp_init({10, 64, 4}, nn::Activation::relu, 1);
  for (auto& w : m.weights) std::fill(w.data.begin(), w.data.end(), 0.0);
  for (auto f : {infotheory::MiFeature::softmax, infotheory::MiFeature::softmax_penultimate}) {
    infotheory::ModelMiOptions opt;
    opt.feature = f;
    opt.seed = 9;
    EXPECT_LE(infotheory::model_mi(m, ds, split.member_ids, opt).value, 0.1);
  }
}

TEST(ModelMi, OverfitExceedsOneEpochAndIsDeterministic) {
  experiment::ExperimentConfig cfg;
  const auto pools = experiment::make_pools(cfg.data);
  const auto& members = pools.target_split.member_ids;
  const auto opt = experiment::mi_options(cfg.mi, 1);
  auto one = experiment::train_model(cfg.model, {1, 64, 0.0}, pools.target, members, 0).model;
  auto many = experiment::train_model(cfg.model, {300, 64, 0.0}, pools.target, members, 0).model;
  const double mi_one = infotheory::model_mi(one, pools.target, members, opt).value;
  const double mi_many = infotheory::model_mi(many, pools.target, members, opt).value;
  EXPECT_GT(mi_many, mi_one);
  EXPECT_EQ(mi_many, infotheory::model_mi(many, pools.target, members, opt).value);

  auto jobs = opt;
  jobs.entropy.jobs = 4;
  EXPECT_EQ(mi_many, infotheory::model_mi(many, pools.target, members, jobs).value);
}

TEST(ModelMi, StandardizeOptionRuns) {
  experiment::ExperimentConfig cfg;
  const auto pools = experiment::make_pools(cfg.data);
  auto m = experiment::train_model(cfg.model, {20, 16, 0.0}, pools.target, pools.target_split.member_ids, 0).model;
  auto opt = experiment::mi_options(cfg.mi, 1);
  opt.standardize = true;
  EXPECT_TRUE(std::isfinite(infotheory::model_mi(m, pools.target, pools.target_split.member_ids, opt).value));
  opt.noise_copies = 0;
  EXPECT_THROW(infotheory::model_mi(m, pools.target, pools.target_split.member_ids, opt), Error);
}

TEST(Standardized, ZeroMeanUnitVariance) {
  auto x = gaussian(100, 3, 16);
  for (std::size_t r = 0; r < x.rows; ++r) {
    x(r, 1) = 5 + 3 * x(r, 1);
    x(r, 2) = 7.0;
  }
  const auto z = infotheory::standardized(x);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0, sq = 0;
    for (std::size_t r = 0; r < z.rows; ++r) {
      mean += z(r, c);
      sq += z(r, c) * z(r, c);
    }
    EXPECT_NEAR(mean / 100, 0.0, 1e-12);
    EXPECT_NEAR(sq / 100, 1.0, 1e-12);
  }
  for (std::size_t r = 0; r < z.rows; ++r) EXPECT_EQ(z(r, 2), 0.0);
}
