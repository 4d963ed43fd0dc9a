#include <gtest/gtest.h>

#include "miafano/experiment.hpp"
#include "miafano/mia.hpp"

using namespace miafano;

namespace {

double jaccard(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b) {
  std::vector<std::int64_t> inter, uni;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
  return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

double train_accuracy(const mia::AttackClassifier& clf, const std::vector<mia::AttackRecord>& recs) {
  std::size_t hits = 0;
  for (const auto& r : recs) hits += clf.predict(r.features, r.label) == r.member ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(recs.size());
}

std::vector<nn::MlpModel> train_shadows(const data::LabeledDataset& pool, const std::vector<data::MembershipSplit>& splits,
                                        int epochs, std::size_t width) {
  std::vector<nn::MlpModel> out;
  for (std::size_t s = 0; s < splits.size(); ++s) {
    nn::TrainOptions opt;
    opt.epochs = epochs;
    opt.lr = 0.05;
    opt.batch = 8;
    opt.seed = 100 + s;
    auto init = nn::mlp_init({pool.dim(), width, static_cast<std::size_t>(pool.num_classes)}, nn::Activation::relu, s);
    out.push_back(nn::train_sgd(init, pool, splits[s].member_ids, opt).model);
  }
  return out;
}

}  // namespace

TEST(ShadowSplits, CountsAndDeterminism) {
  auto pool = data::synth_blobs(2, 50, 2, 1.0, 1);
  auto splits = mia::make_shadow_splits(pool, 3, 0.5, 9);
  ASSERT_EQ(splits.size(), 3u);
  for (const auto& s : splits) EXPECT_EQ(s.member_ids.size(), 50u);
  EXPECT_EQ(splits, mia::make_shadow_splits(pool, 3, 0.5, 9));
  EXPECT_NE(splits[0], splits[1]);
}

TEST(ShadowSplits, IndependentDraws) {
  auto pool = data::synth_blobs(2, 100, 2, 1.0, 1);
  auto splits = mia::make_shadow_splits(pool, 5, 0.5, 4);
  for (std::size_t i = 0; i < splits.size(); ++i)
    for (std::size_t j = i + 1; j < splits.size(); ++j)
      EXPECT_NEAR(jaccard(splits[i].member_ids, splits[j].member_ids), 1.0 / 3.0, 0.15);
}

TEST(ShadowSplits, Errors) {
  auto pool = data::synth_blobs(2, 1, 2, 1.0, 1);
  try {
    mia::make_shadow_splits(pool, 3, 0.1, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::too_few_samples);
  }
  EXPECT_THROW(mia::make_shadow_splits(pool, 0, 0.5, 1), Error);
}

TEST(BuildAttackDataset, RecordsFollowSplits) {
  auto pool = data::synth_blobs(2, 50, 3, 1.0, 1);
  auto splits = mia::make_shadow_splits(pool, 3, 0.5, 2);
  auto shadows = train_shadows(pool, splits, 5, 8);
  auto recs = mia::build_attack_dataset(shadows, splits, pool, nn::FeatureMode::blackbox, 3);
  ASSERT_EQ(recs.size(), 300u);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t r = 0; r < 100; ++r) {
      const auto& rec = recs[s * 100 + r];
      EXPECT_EQ(rec.member, splits[s].is_member(pool.ids[r]));
      EXPECT_EQ(rec.label, pool.labels[r]);
      EXPECT_EQ(rec.features, nn::extract_features(shadows[s], pool.features.row(r), pool.labels[r],
                                                   nn::FeatureMode::blackbox));
    }
}

TEST(BuildAttackDataset, BalancesByMajoritySubsampling) {
  auto pool = data::synth_blobs(2, 50, 3, 1.0, 1);
  auto splits = mia::make_shadow_splits(pool, 3, 0.3, 2);
  auto shadows = train_shadows(pool, splits, 5, 8);
  auto recs = mia::build_attack_dataset(shadows, splits, pool, nn::FeatureMode::whitebox, 3);
  const auto in = std::count_if(recs.begin(), recs.end(), [](const auto& r) { return r.member; });
  EXPECT_EQ(in, 90);
  EXPECT_EQ(static_cast<long>(recs.size()) - in, 90);
  EXPECT_EQ(recs, mia::build_attack_dataset(shadows, splits, pool, nn::FeatureMode::whitebox, 3));
  for (const auto& r : recs) EXPECT_EQ(r.features.size(), nn::feature_length(shadows[0], nn::FeatureMode::whitebox));
}

TEST(BuildAttackDataset, FeatureLengthMismatch) {
  auto pool = data::synth_blobs(2, 10, 3, 1.0, 1);
  auto splits = mia::make_shadow_splits(pool, 2, 0.5, 2);
  auto shadows = train_shadows(pool, splits, 1, 8);
  shadows[1] = nn::mlp_init({3, 5, 2}, nn::Activation::relu, 0);
  EXPECT_THROW(mia::build_attack_dataset(shadows, splits, pool, nn::FeatureMode::whitebox, 3), Error);
}

TEST(BuildAttackDataset, OverfitShadowsAreMoreConfidentOnMembers) {
  for (double spread : {0.05, 1.0}) {
    auto pool = data::synth_blobs(4, 50, 10, spread, 1);
    auto splits = mia::make_shadow_splits(pool, 3, 0.5, 2);
    auto shadows = train_shadows(pool, splits, 300, 64);
    auto recs = mia::build_attack_dataset(shadows, splits, pool, nn::FeatureMode::blackbox, 3);
    double sum[2] = {0, 0};
    double count[2] = {0, 0};
    for (const auto& r : recs) {
      sum[r.member] += r.features[0];
      count[r.member] += 1;
    }
    EXPECT_GT(sum[1] / count[1], sum[0] / count[0]) << "spread " << spread;
  }
}

TEST(TrainAttack, SeparableRecords) {
  Rng rng(1);
  std::normal_distribution<double> g;
  std::vector<mia::AttackRecord> recs;
  for (int i = 0; i < 400; ++i) {
    const bool m = i % 2 == 0;
    recs.push_back({{(m ? 2.0 : -2.0) + 0.3 * g(rng), g(rng)}, m, 0});
  }
  const auto clf = mia::train_attack(recs);
  EXPECT_DOUBLE_EQ(train_accuracy(clf, recs), 1.0);
  EXPECT_EQ(clf.global.weights, mia::train_attack(recs).global.weights);
}

TEST(TrainAttack, ShuffledLabelsNearChance) {
  Rng rng(2);
  std::normal_distribution<double> g;
  std::vector<mia::AttackRecord> recs;
  for (int i = 0; i < 1000; ++i) recs.push_back({{g(rng), g(rng), g(rng), g(rng)}, i % 2 == 0, 0});
  std::vector<bool> flags;
  for (const auto& r : recs) flags.push_back(r.member);
  std::shuffle(flags.begin(), flags.end(), rng);
  for (std::size_t i = 0; i < recs.size(); ++i) recs[i].member = flags[i];
  EXPECT_LE(train_accuracy(mia::train_attack(recs), recs), 0.6);
}

TEST(TrainAttack, ConvergesAndRejectsSingleClass) {
  Rng rng(3);
  std::normal_distribution<double> g;
  std::vector<mia::AttackRecord> recs;
  for (int i = 0; i < 200; ++i) {
    const bool m = i % 2 == 0;
    recs.push_back({{(m ? 0.5 : -0.5) + g(rng)}, m, i % 3});
  }
  const auto clf = mia::train_attack(recs);
  EXPECT_LT(clf.global.grad_norm, 1e-6);
  EXPECT_LT(clf.global.iterations, 5000u);

  mia::AttackTrainOptions per;
  per.per_class = true;
  const auto pc = mia::train_attack(recs, per);
  EXPECT_EQ(pc.per_class.size(), 3u);

  for (auto& r : recs) r.member = true;
  try {
    mia::train_attack(recs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::single_class);
  }
}

TEST(ScorePredictions, PerfectAttacker) {
  std::vector<std::uint8_t> truth{1, 0, 0, 1, 1, 0, 1, 0};
  const auto rep = mia::score_predictions(truth, truth, {0, 1, 2}, 100, 1);
  EXPECT_EQ(rep.errors_xi, 0u);
  EXPECT_DOUBLE_EQ(rep.success_prob, 1.0);
  EXPECT_DOUBLE_EQ(rep.p_hat_alpha.at(0), 0.0);
}

TEST(ScorePredictions, PropertiesOnRandomPredictions) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    std::vector<std::uint8_t> truth(100), pred(100);
    for (std::size_t i = 0; i < 100; ++i) {
      truth[i] = rng() % 2;
      pred[i] = rng() % 4 == 0 ? 1 - truth[i] : truth[i];
    }
    const auto rep = mia::score_predictions(pred, truth, {0, 10, 20, 30, 60}, 200, rng());
    EXPECT_GE(rep.success_prob, 0.0);
    EXPECT_LE(rep.success_prob, 1.0);
    EXPECT_NEAR(static_cast<double>(rep.errors_xi), 100 * (1 - rep.success_prob), 1e-9);
    double prev = 1.0;
    for (const auto& [a, p] : rep.p_hat_alpha) {
      EXPECT_LE(p, prev);
      prev = p;
    }
  }
  std::vector<std::uint8_t> truth{1, 0, 1, 1, 0, 0, 1, 0, 1, 1};
  std::vector<std::uint8_t> pred{1, 1, 1, 0, 0, 0, 1, 1, 1, 1};
  EXPECT_EQ(mia::score_predictions(pred, truth, {0, 2}, 300, 5).p_hat_alpha,
            mia::score_predictions(pred, truth, {0, 2}, 300, 5).p_hat_alpha);
  EXPECT_THROW(mia::score_predictions({}, {}, {}, 1, 0), Error);
}

TEST(EvaluateAttack, ZeroWeightAttackerScoresMajorityRate) {
  auto pool = data::synth_blobs(2, 50, 3, 1.0, 1);
  auto split = data::split_membership(pool, 0.7, 2);
  auto target = nn::mlp_init({3, 4, 2}, nn::Activation::relu, 0);
  mia::AttackClassifier clf;
  clf.global.weights.assign(nn::feature_length(target, nn::FeatureMode::blackbox), 0.0);
  clf.global.mean.assign(clf.global.weights.size(), 0.0);
  clf.global.scale.assign(clf.global.weights.size(), 1.0);
  const auto rep = mia::evaluate_attack(clf, target, pool, split, nn::FeatureMode::blackbox, {0}, 10, 1);
  EXPECT_DOUBLE_EQ(rep.success_prob, 0.7);
  EXPECT_EQ(rep.num_eval, 100u);
}

TEST(EvaluateAttack, OverfitVersusOneEpochTarget) {
  experiment::ExperimentConfig cfg;
  const auto pools = experiment::make_pools(cfg.data);
  auto success = [&](int epochs) {
    const experiment::FamilyMember knobs{epochs, 64, 0.0};
    const auto target = experiment::train_model(cfg.model, knobs, pools.target, pools.target_split.member_ids, 0).model;
    return experiment::run_attack_variant(cfg, pools, target, knobs, 3).success_prob;
  };
  EXPECT_GT(success(300), 0.6);
  const double weak = success(1);
  EXPECT_GE(weak, 0.45);
  EXPECT_LE(weak, 0.58);
}

TEST(EvaluateAttack, UntrainedTargetAtBaseRate) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    experiment::ExperimentConfig cfg;
    cfg.data.seed = 100 + s;
    cfg.model.seed = 300 + s;
    cfg.attack.seed = 200 + s;
    const auto pools = experiment::make_pools(cfg.data);
    const auto target =
        experiment::train_model(cfg.model, {0, 64, 0.0}, pools.target, pools.target_split.member_ids, 0).model;
    const auto rep = experiment::run_attack_variant(cfg, pools, target, {40, 64, 0.0}, 3);
    EXPECT_NEAR(rep.success_prob, 0.5, 0.05) << "seed " << s;
  }
}
