#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>

#include "miafano/common.hpp"
#include "miafano/data.hpp"
#include "miafano/knn.hpp"
#include "miafano/nn.hpp"

namespace miafano::infotheory {

/// plain: H = -(1/n) sum log p_k(x_i), p_k = k/(n-1) * Gamma(d/2+1)/pi^(d/2) * r_k^-d.
/// kozachenko_leonenko: the same volume term with psi(n) - psi(k) in place of
/// log((n-1)/k), which removes the O(1) bias of the plain form.
enum class KnnEstimator { kozachenko_leonenko, plain };

inline std::string_view to_string(KnnEstimator e) { return e == KnnEstimator::plain ? "plain" : "kl"; }

inline KnnEstimator parse_estimator(std::string_view s) {
  if (s == "kl" || s == "kozachenko_leonenko") return KnnEstimator::kozachenko_leonenko;
  if (s == "plain") return KnnEstimator::plain;
  throw Error(ErrorCode::invalid_argument, "unknown estimator '" + std::string(s) + "' (expected kl or plain)");
}

struct EntropyOptions {
  std::size_t k = 3;
  double jitter = 1e-10;
  std::uint64_t seed = 0;
  KnnEstimator estimator = KnnEstimator::kozachenko_leonenko;
  std::size_t jobs = 1;
};

struct MiEstimate {
  double value = 0.0;
  LogBase base = LogBase::nats;
  std::size_t k = 0;
  std::size_t n = 0;
  double jitter = 0.0;
  KnnEstimator estimator = KnnEstimator::kozachenko_leonenko;
  double h_x = 0.0;
  double h_y = 0.0;
  double h_xy = 0.0;
};

/// Adds U(-jitter, jitter) to every coordinate; identity when jitter == 0.
inline Matrix jittered(Matrix points, double jitter, std::uint64_t seed) {
  require(jitter >= 0.0 && std::isfinite(jitter), ErrorCode::invalid_argument, "jitter must be non-negative");
  if (jitter == 0.0) return points;
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-jitter, jitter);
  for (double& v : points.data) v += u(rng);
  return points;
}

/// Entropy in nats of an already-jittered cloud.
inline double entropy_from_points(const Matrix& points, std::size_t k, KnnEstimator estimator, std::size_t jobs = 1) {
  for (double v : points.data) require(std::isfinite(v), ErrorCode::invalid_argument, "non-finite sample value");
  const auto r = knn::knn_radius(points, k, jobs);
  const auto n = static_cast<double>(points.rows);
  const auto d = static_cast<double>(points.cols);

  double sum_log_r = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    require(r[i] > 0.0, ErrorCode::duplicate_points,
            "k-th neighbor distance is zero at row " + std::to_string(i) +
                " (duplicate points; increase jitter)");
    sum_log_r += std::log(r[i]);
  }
  const double log_unit_ball = 0.5 * d * std::log(std::numbers::pi) - std::lgamma(0.5 * d + 1.0);
  const double count_term = estimator == KnnEstimator::plain
                                ? std::log(n - 1.0) - std::log(static_cast<double>(k))
                                : boost::math::digamma(n) - boost::math::digamma(static_cast<double>(k));
  return count_term + log_unit_ball + d * sum_log_r / n;
}

/// kNN differential entropy in nats.
inline double entropy_knn(const Matrix& points, const EntropyOptions& opt = {}) {
  return entropy_from_points(jittered(points, opt.jitter, opt.seed), opt.k, opt.estimator, opt.jobs);
}

/// I(X;Y) = H(X) + H(Y) - H(X,Y), each term from the kNN estimator. The joint
/// cloud is the column concatenation [x | y]. x and y receive the same jitter
/// stream so that swapping the arguments gives the same estimate.
inline MiEstimate mutual_information(const Matrix& x, const Matrix& y, const EntropyOptions& opt = {},
                                     LogBase base = LogBase::nats) {
  require(x.rows == y.rows, ErrorCode::dimension_mismatch,
          "paired samples required: x has " + std::to_string(x.rows) + " rows, y has " + std::to_string(y.rows));
  const auto xj = jittered(x, opt.jitter, opt.seed);
  const auto yj = jittered(y, opt.jitter, opt.seed);
  const auto joint = hconcat(xj, yj);

  MiEstimate est;
  est.base = base;
  est.k = opt.k;
  est.n = x.rows;
  est.jitter = opt.jitter;
  est.estimator = opt.estimator;
  est.h_x = from_nats(entropy_from_points(xj, opt.k, opt.estimator, opt.jobs), base);
  est.h_y = from_nats(entropy_from_points(yj, opt.k, opt.estimator, opt.jobs), base);
  est.h_xy = from_nats(entropy_from_points(joint, opt.k, opt.estimator, opt.jobs), base);
  est.value = est.h_x + est.h_y - est.h_xy;
  return est;
}

enum class MiFeature { softmax, softmax_penultimate };

inline std::string_view to_string(MiFeature f) { return f == MiFeature::softmax ? "softmax" : "softmax+penultimate"; }

inline MiFeature parse_mi_feature(std::string_view s) {
  if (s == "softmax") return MiFeature::softmax;
  if (s == "softmax+penultimate" || s == "softmax_penultimate") return MiFeature::softmax_penultimate;
  throw Error(ErrorCode::invalid_argument, "unknown MI feature '" + std::string(s) + "'");
}

struct ModelMiOptions {
  std::size_t noise_copies = 8;
  double sigma_rel = 0.05;
  MiFeature feature = MiFeature::softmax;
  EntropyOptions entropy;
  /// z-score every column of X and Y before estimation (an invertible
  /// per-coordinate map, so the true MI is unchanged).
  bool standardize = false;
  LogBase base = LogBase::nats;
  std::uint64_t seed = 0;
};

/// Per-column z-scores; constant columns are only centered.
inline Matrix standardized(Matrix m) {
  const auto n = static_cast<double>(m.rows);
  for (std::size_t c = 0; c < m.cols; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < m.rows; ++r) mean += m(r, c);
    mean /= n;
    double var = 0.0;
    for (std::size_t r = 0; r < m.rows; ++r) var += (m(r, c) - mean) * (m(r, c) - mean);
    const double sd = std::sqrt(var / n);
    const double scale = sd > 0.0 ? 1.0 / sd : 1.0;
    for (std::size_t r = 0; r < m.rows; ++r) m(r, c) = (m(r, c) - mean) * scale;
  }
  return m;
}

/// MI between member inputs and the outputs of weight-perturbed copies of the
/// model. Member row j (in id order) is evaluated by copy j mod noise_copies.
inline MiEstimate model_mi(const nn::MlpModel& model, const data::LabeledDataset& ds,
                           const std::vector<std::int64_t>& member_ids, const ModelMiOptions& opt) {
  require(opt.noise_copies >= 1, ErrorCode::invalid_argument, "noise_copies must be >= 1");
  std::vector<std::int64_t> ids = member_ids;
  std::sort(ids.begin(), ids.end());
  const auto rows = data::rows_of(ds, ids);

  std::vector<nn::MlpModel> copies;
  copies.reserve(opt.noise_copies);
  for (std::size_t c = 0; c < opt.noise_copies; ++c)
    copies.push_back(nn::perturb_weights(model, opt.sigma_rel, derive_seed(opt.seed, c)));

  const std::size_t y_dim = model.num_classes() +
                            (opt.feature == MiFeature::softmax_penultimate ? model.penultimate_size() : 0);
  Matrix x(rows.size(), ds.dim());
  Matrix y(rows.size(), y_dim);
  for (std::size_t j = 0; j < rows.size(); ++j) {
    auto src = ds.features.row(rows[j]);
    std::copy(src.begin(), src.end(), x.row(j).begin());
    auto out = nn::forward(copies[j % copies.size()], src);
    auto dst = y.row(j);
    std::copy(out.softmax.begin(), out.softmax.end(), dst.begin());
    if (opt.feature == MiFeature::softmax_penultimate)
      std::copy(out.penultimate.begin(), out.penultimate.end(),
                dst.begin() + static_cast<std::ptrdiff_t>(out.softmax.size()));
  }
  auto entropy = opt.entropy;
  entropy.seed = derive_seed(opt.seed, 0xFFFF'FFFFULL);
  if (opt.standardize) return mutual_information(standardized(x), standardized(y), entropy, opt.base);
  return mutual_information(x, y, entropy, opt.base);
}

}  // namespace miafano::infotheory
