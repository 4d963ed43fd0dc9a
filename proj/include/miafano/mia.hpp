#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "miafano/common.hpp"
#include "miafano/data.hpp"
#include "miafano/nn.hpp"

namespace miafano::mia {

/// One attack training/evaluation example. `label` is the true class of the
/// underlying data row, used only by per-class attack models.
struct AttackRecord {
  std::vector<double> features;
  bool member = false;
  int label = 0;

  friend bool operator==(const AttackRecord&, const AttackRecord&) = default;
};

struct AttackReport {
  double success_prob = 0.0;
  std::size_t errors_xi = 0;
  /// alpha -> empirical P(xi > alpha) over bootstrap resamples.
  std::map<std::size_t, double> p_hat_alpha;
  std::size_t num_eval = 0;
  std::size_t variant = 0;
  nn::FeatureMode mode = nn::FeatureMode::blackbox;
};

/// Independent stratified member draws over the same pool, one per shadow.
inline std::vector<data::MembershipSplit> make_shadow_splits(const data::LabeledDataset& pool, std::size_t num_shadows,
                                                             double in_fraction, std::uint64_t seed) {
  require(num_shadows >= 1, ErrorCode::invalid_argument, "need at least one shadow model");
  const auto members = std::llround(in_fraction * static_cast<double>(pool.size()));
  require(members >= 1 && members < static_cast<long long>(pool.size()), ErrorCode::too_few_samples,
          "shadow pool of " + std::to_string(pool.size()) + " rows is too small for in_fraction " +
              std::to_string(in_fraction));
  std::vector<data::MembershipSplit> splits;
  for (std::size_t i = 0; i < num_shadows; ++i)
    splits.push_back(data::split_membership(pool, in_fraction, derive_seed(seed, i)));
  return splits;
}

/// Features of every pool row under every shadow, labeled with that shadow's
/// membership, then balanced by subsampling the majority class.
inline std::vector<AttackRecord> build_attack_dataset(const std::vector<nn::MlpModel>& shadows,
                                                      const std::vector<data::MembershipSplit>& splits,
                                                      const data::LabeledDataset& pool, nn::FeatureMode mode,
                                                      std::uint64_t seed) {
  require(shadows.size() == splits.size(), ErrorCode::invalid_argument, "need exactly one split per shadow model");
  require(!shadows.empty(), ErrorCode::invalid_argument, "no shadow models");
  const auto len = nn::feature_length(shadows.front(), mode);
  std::vector<AttackRecord> all;
  all.reserve(shadows.size() * pool.size());
  for (std::size_t s = 0; s < shadows.size(); ++s) {
    require(nn::feature_length(shadows[s], mode) == len, ErrorCode::dimension_mismatch,
            "shadow " + std::to_string(s) + " produces a different feature length");
    for (std::size_t r = 0; r < pool.size(); ++r)
      all.push_back({nn::extract_features(shadows[s], pool.features.row(r), pool.labels[r], mode),
                     splits[s].is_member(pool.ids[r]), pool.labels[r]});
  }

  std::vector<std::size_t> in;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < all.size(); ++i) (all[i].member ? in : out).push_back(i);
  if (in.size() == out.size() || in.empty() || out.empty()) return all;

  auto& majority = in.size() > out.size() ? in : out;
  const auto keep = std::min(in.size(), out.size());
  Rng rng(seed);
  std::shuffle(majority.begin(), majority.end(), rng);
  majority.resize(keep);
  std::vector<std::size_t> chosen = in;
  chosen.insert(chosen.end(), out.begin(), out.end());
  std::sort(chosen.begin(), chosen.end());
  std::vector<AttackRecord> balanced;
  balanced.reserve(chosen.size());
  for (auto i : chosen) balanced.push_back(std::move(all[i]));
  return balanced;
}

/// Logistic regression on standardized features.
struct LogisticModel {
  std::vector<double> weights;
  double bias = 0.0;
  std::vector<double> mean;
  std::vector<double> scale;
  std::size_t iterations = 0;
  double grad_norm = 0.0;

  [[nodiscard]] double predict_proba(std::span<const double> f) const {
    double z = bias;
    for (std::size_t j = 0; j < weights.size(); ++j) z += weights[j] * (f[j] - mean[j]) / scale[j];
    return 1.0 / (1.0 + std::exp(-z));
  }
};

struct AttackTrainOptions {
  double l2 = 1e-4;
  std::size_t max_iter = 5000;
  double tol = 1e-6;
  bool per_class = false;
};

/// Either one global model, or one per true class (keyed by label).
struct AttackClassifier {
  std::map<int, LogisticModel> per_class;
  LogisticModel global;
  bool use_per_class = false;

  [[nodiscard]] double predict_proba(std::span<const double> f, int label) const {
    if (use_per_class) {
      auto it = per_class.find(label);
      if (it != per_class.end()) return it->second.predict_proba(f);
    }
    return global.predict_proba(f);
  }

  /// Membership decision; a probability of exactly 0.5 counts as member.
  [[nodiscard]] bool predict(std::span<const double> f, int label) const { return predict_proba(f, label) >= 0.5; }
};

namespace detail {

/// Full-batch gradient descent on mean log-loss + (l2/2)||w||², step 1/L with
/// L from a power-iteration estimate of the design matrix's top eigenvalue.
inline LogisticModel fit_logistic(const std::vector<const AttackRecord*>& recs, const AttackTrainOptions& opt) {
  const std::size_t n = recs.size();
  const std::size_t d = recs.front()->features.size();
  LogisticModel m;
  m.mean.assign(d, 0.0);
  m.scale.assign(d, 0.0);
  for (const auto* r : recs)
    for (std::size_t j = 0; j < d; ++j) m.mean[j] += r->features[j];
  for (double& v : m.mean) v /= static_cast<double>(n);
  for (const auto* r : recs)
    for (std::size_t j = 0; j < d; ++j) m.scale[j] += (r->features[j] - m.mean[j]) * (r->features[j] - m.mean[j]);
  for (double& v : m.scale) {
    v = std::sqrt(v / static_cast<double>(n));
    if (!(v > 1e-12)) v = 1.0;
  }

  // Standardized design with an intercept column at index d.
  Matrix z(n, d + 1);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) z(i, j) = (recs[i]->features[j] - m.mean[j]) / m.scale[j];
    z(i, d) = 1.0;
    y[i] = recs[i]->member ? 1.0 : 0.0;
  }

  std::vector<double> v(d + 1, 1.0);
  double lambda = 0.0;
  for (int it = 0; it < 100; ++it) {
    std::vector<double> zv(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= d; ++j) zv[i] += z(i, j) * v[j];
    std::vector<double> next(d + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= d; ++j) next[j] += z(i, j) * zv[i];
    double norm = 0.0;
    for (double& x : next) {
      x /= static_cast<double>(n);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) break;
    lambda = norm;
    for (std::size_t j = 0; j <= d; ++j) v[j] = next[j] / norm;
  }
  const double step = 1.0 / (0.25 * std::max(lambda, 1.0) * 1.01 + opt.l2);

  std::vector<double> w(d + 1, 0.0);
  std::vector<double> grad(d + 1);
  for (m.iterations = 0; m.iterations < opt.max_iter; ++m.iterations) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j <= d; ++j) s += z(i, j) * w[j];
      const double err = 1.0 / (1.0 + std::exp(-s)) - y[i];
      for (std::size_t j = 0; j <= d; ++j) grad[j] += err * z(i, j);
    }
    double gn = 0.0;
    for (std::size_t j = 0; j <= d; ++j) {
      grad[j] = grad[j] / static_cast<double>(n) + (j < d ? opt.l2 * w[j] : 0.0);
      gn += grad[j] * grad[j];
    }
    m.grad_norm = std::sqrt(gn);
    if (m.grad_norm < opt.tol) break;
    for (std::size_t j = 0; j <= d; ++j) w[j] -= step * grad[j];
  }
  m.weights.assign(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(d));
  m.bias = w[d];
  return m;
}

inline void require_both_classes(const std::vector<const AttackRecord*>& recs, const std::string& what) {
  const bool any_in = std::any_of(recs.begin(), recs.end(), [](auto* r) { return r->member; });
  const bool any_out = std::any_of(recs.begin(), recs.end(), [](auto* r) { return !r->member; });
  require(any_in && any_out, ErrorCode::single_class, what + " contains only one membership class");
}

}  // namespace detail

/// L2-regularized logistic regression by full-batch gradient descent from zero,
/// stopping at gradient norm < tol or max_iter. Deterministic.
inline AttackClassifier train_attack(const std::vector<AttackRecord>& records, const AttackTrainOptions& opt = {}) {
  require(!records.empty(), ErrorCode::invalid_argument, "no attack records");
  const auto len = records.front().features.size();
  std::vector<const AttackRecord*> all;
  for (const auto& r : records) {
    require(r.features.size() == len, ErrorCode::dimension_mismatch, "attack records have differing feature lengths");
    all.push_back(&r);
  }
  detail::require_both_classes(all, "attack training set");

  AttackClassifier clf;
  clf.global = detail::fit_logistic(all, opt);
  if (opt.per_class) {
    clf.use_per_class = true;
    std::map<int, std::vector<const AttackRecord*>> groups;
    for (const auto* r : all) groups[r->label].push_back(r);
    for (auto& [label, group] : groups) {
      const bool any_in = std::any_of(group.begin(), group.end(), [](auto* r) { return r->member; });
      const bool any_out = std::any_of(group.begin(), group.end(), [](auto* r) { return !r->member; });
      if (any_in && any_out) clf.per_class.emplace(label, detail::fit_logistic(group, opt));
    }
  }
  return clf;
}

/// Scores membership predictions against ground truth. p_hat_alpha comes from
/// `trials` bootstrap resamples (with replacement) of the evaluation set.
inline AttackReport score_predictions(const std::vector<std::uint8_t>& predicted, const std::vector<std::uint8_t>& truth,
                                      const std::vector<std::size_t>& alpha_list, std::size_t trials,
                                      std::uint64_t seed) {
  require(predicted.size() == truth.size(), ErrorCode::dimension_mismatch, "prediction/truth length mismatch");
  require(!truth.empty(), ErrorCode::invalid_argument, "empty evaluation pool");
  require(alpha_list.empty() || trials >= 1, ErrorCode::invalid_argument, "need at least one bootstrap trial");
  const std::size_t n = truth.size();
  std::vector<std::uint8_t> wrong(n);
  AttackReport rep;
  rep.num_eval = n;
  for (std::size_t i = 0; i < n; ++i) {
    wrong[i] = (predicted[i] != 0) != (truth[i] != 0) ? 1 : 0;
    rep.errors_xi += wrong[i];
  }
  rep.success_prob = 1.0 - static_cast<double>(rep.errors_xi) / static_cast<double>(n);

  if (alpha_list.empty()) return rep;
  std::vector<std::size_t> exceed(alpha_list.size(), 0);
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, t));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::size_t xi = 0;
    for (std::size_t i = 0; i < n; ++i) xi += wrong[pick(rng)];
    for (std::size_t a = 0; a < alpha_list.size(); ++a) exceed[a] += xi > alpha_list[a] ? 1 : 0;
  }
  for (std::size_t a = 0; a < alpha_list.size(); ++a)
    rep.p_hat_alpha[alpha_list[a]] = static_cast<double>(exceed[a]) / static_cast<double>(trials);
  return rep;
}

/// Runs the attack on every pool row of the target and scores it against the
/// target's true membership.
inline AttackReport evaluate_attack(const AttackClassifier& attack, const nn::MlpModel& target,
                                    const data::LabeledDataset& pool, const data::MembershipSplit& target_split,
                                    nn::FeatureMode mode, const std::vector<std::size_t>& alpha_list,
                                    std::size_t trials, std::uint64_t seed) {
  require(pool.size() >= 1, ErrorCode::invalid_argument, "empty evaluation pool");
  std::vector<std::uint8_t> predicted(pool.size());
  std::vector<std::uint8_t> truth(pool.size());
  for (std::size_t r = 0; r < pool.size(); ++r) {
    auto f = nn::extract_features(target, pool.features.row(r), pool.labels[r], mode);
    predicted[r] = attack.predict(f, pool.labels[r]) ? 1 : 0;
    truth[r] = target_split.is_member(pool.ids[r]) ? 1 : 0;
  }
  auto rep = score_predictions(predicted, truth, alpha_list, trials, seed);
  rep.mode = mode;
  return rep;
}

}  // namespace miafano::mia
