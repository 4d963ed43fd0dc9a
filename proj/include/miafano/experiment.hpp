#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "miafano/bound.hpp"
#include "miafano/common.hpp"
#include "miafano/data.hpp"
#include "miafano/infotheory.hpp"
#include "miafano/mia.hpp"
#include "miafano/nn.hpp"
#include "miafano/parallel.hpp"

namespace miafano::experiment {

/// Sample Pearson correlation.
inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  require(xs.size() == ys.size(), ErrorCode::dimension_mismatch, "pearson needs equal-length inputs");
  require(xs.size() >= 2, ErrorCode::invalid_argument, "pearson needs at least two points");
  const auto n = static_cast<double>(xs.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  require(sxx > 0.0 && syy > 0.0, ErrorCode::invalid_argument, "pearson is undefined for zero-variance input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Configuration

struct DataConfig {
  int num_classes = 4;
  int per_class = 100;
  int dim = 10;
  double spread = 1.0;
  std::uint64_t seed = 1;
  double member_fraction = 0.5;
  /// Optional labeled CSV; when set it replaces the synthetic pools and is
  /// halved (stratified) into a target pool and a shadow pool.
  std::string csv;
  std::string label_column = "label";
};

struct ModelConfig {
  std::size_t hidden_layers = 1;
  std::size_t width = 64;
  std::string activation = "relu";
  int epochs = 200;
  double lr = 0.05;
  double l2 = 0.0;
  std::size_t batch = 8;
  std::uint64_t seed = 2;
};

struct MiConfig {
  std::size_t k = 3;
  double jitter = 1e-10;
  std::size_t noise_copies = 8;
  double sigma_rel = 0.05;
  std::string feature = "softmax+penultimate";
  std::string estimator = "kl";
  bool standardize = false;
  std::string base = "nats";
  std::uint64_t seed = 3;
};

struct AttackConfig {
  std::vector<std::size_t> shadow_counts = {3, 5, 7};
  double in_fraction = 0.5;
  std::string mode = "blackbox";
  std::vector<std::size_t> alphas = {0, 10, 20, 40};
  std::size_t trials = 200;
  bool per_class = false;
  double l2 = 1e-4;
  std::size_t max_iter = 5000;
  /// "bootstrap" resamples the evaluation pool; "retrain" redraws the target
  /// membership split and retrains the target for every trial.
  std::string resample = "bootstrap";
  std::uint64_t seed = 4;
};

/// One model of the family; knobs move it from under- to over-fit.
struct FamilyMember {
  int epochs = 1;
  std::size_t width = 64;
  double l2 = 0.0;

  friend bool operator<(const FamilyMember& a, const FamilyMember& b) {
    return std::tie(a.epochs, a.width, a.l2) < std::tie(b.epochs, b.width, b.l2);
  }
  friend bool operator==(const FamilyMember&, const FamilyMember&) = default;
};

struct FamilyConfig {
  std::vector<FamilyMember> members = {{1, 64, 0.0}, {40, 64, 0.0}, {120, 64, 0.0}, {400, 64, 0.0}};
};

struct TheoremConfig {
  std::vector<double> flip_probs = {0.1, 0.2, 0.3, 0.4};
  std::vector<std::uint64_t> d_sizes = {8, 12, 16};
  std::vector<std::uint64_t> alphas = {0, 1, 2};
  std::uint64_t trials = 200000;
  std::uint64_t seed = 5;
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  MiConfig mi;
  AttackConfig attack;
  FamilyConfig experiment;
  TheoremConfig theorem;
  std::size_t jobs = 1;

  void validate() const {
    require(experiment.members.size() >= 2, ErrorCode::invalid_argument, "model family needs at least two members");
    std::set<FamilyMember> distinct(experiment.members.begin(), experiment.members.end());
    require(distinct.size() == experiment.members.size(), ErrorCode::invalid_argument, "family knobs must be distinct");
    for (const auto& m : experiment.members)
      require(m.epochs >= 0 && m.width >= 1 && m.l2 >= 0.0, ErrorCode::invalid_argument, "invalid family knobs");
    require(!attack.shadow_counts.empty(), ErrorCode::invalid_argument, "need at least one shadow count");
    for (auto s : attack.shadow_counts) require(s >= 1, ErrorCode::invalid_argument, "shadow counts must be >= 1");
    require(attack.resample == "bootstrap" || attack.resample == "retrain", ErrorCode::invalid_argument,
            "attack.resample must be bootstrap or retrain");
    require(data.member_fraction > 0.0 && data.member_fraction < 1.0, ErrorCode::invalid_argument,
            "data.member_fraction must lie in (0, 1)");
    (void)nn::parse_activation(model.activation);
    (void)nn::parse_feature_mode(attack.mode);
    (void)infotheory::parse_mi_feature(mi.feature);
    (void)infotheory::parse_estimator(mi.estimator);
    (void)parse_log_base(mi.base);
  }
};

namespace detail {

/// Copies keys present in `j` into `target`, rejecting keys not already in it.
inline void merge_known(nlohmann::json& target, const nlohmann::json& j, const std::string& where) {
  require(j.is_object(), ErrorCode::parse, "config section '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    require(target.contains(it.key()), ErrorCode::parse, "unknown config key '" + where + "." + it.key() + "'");
    target[it.key()] = it.value();
  }
}

}  // namespace detail

#define MIAFANO_JSON_FIELDS(Type, ...) NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Type, __VA_ARGS__)
MIAFANO_JSON_FIELDS(DataConfig, num_classes, per_class, dim, spread, seed, member_fraction, csv, label_column)
MIAFANO_JSON_FIELDS(ModelConfig, hidden_layers, width, activation, epochs, lr, l2, batch, seed)
MIAFANO_JSON_FIELDS(MiConfig, k, jitter, noise_copies, sigma_rel, feature, estimator, standardize, base, seed)
MIAFANO_JSON_FIELDS(AttackConfig, shadow_counts, in_fraction, mode, alphas, trials, per_class, l2, max_iter, resample,
                    seed)
MIAFANO_JSON_FIELDS(FamilyMember, epochs, width, l2)
MIAFANO_JSON_FIELDS(FamilyConfig, members)
MIAFANO_JSON_FIELDS(TheoremConfig, flip_probs, d_sizes, alphas, trials, seed)
MIAFANO_JSON_FIELDS(ExperimentConfig, data, model, mi, attack, experiment, theorem, jobs)
#undef MIAFANO_JSON_FIELDS

/// Overlays a (possibly partial) JSON config onto the defaults. Unknown keys
/// are errors.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  nlohmann::json merged = ExperimentConfig{};
  require(j.is_object(), ErrorCode::parse, "config must be a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      require(merged.contains(it.key()), ErrorCode::parse, "unknown config section '" + it.key() + "'");
      if (merged[it.key()].is_object())
        detail::merge_known(merged[it.key()], it.value(), it.key());
      else
        merged[it.key()] = it.value();
    }
    auto cfg = merged.get<ExperimentConfig>();
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("invalid config: ") + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, path + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Pipeline pieces

/// Target pool (attacked) and shadow pool (attacker's own data), drawn from
/// the same population.
struct Pools {
  data::LabeledDataset target;
  data::LabeledDataset shadow;
  data::MembershipSplit target_split;
};

inline Pools make_pools(const DataConfig& cfg) {
  Pools p;
  if (!cfg.csv.empty()) {
    auto all = data::load_csv(cfg.csv, cfg.label_column);
    all.validate();
    auto halves = data::split_membership(all, 0.5, derive_seed(cfg.seed, 7));
    std::vector<std::int64_t> rest;
    std::set_difference(halves.pool_ids.begin(), halves.pool_ids.end(), halves.member_ids.begin(),
                        halves.member_ids.end(), std::back_inserter(rest));
    p.target = data::subset(all, halves.member_ids);
    p.shadow = data::subset(all, rest);
  } else {
    p.target = data::synth_blobs(cfg.num_classes, cfg.per_class, cfg.dim, cfg.spread, cfg.seed);
    p.shadow = data::synth_blobs(cfg.num_classes, cfg.per_class, cfg.dim, cfg.spread, derive_seed(cfg.seed, 1));
  }
  p.target_split = data::split_membership(p.target, cfg.member_fraction, derive_seed(cfg.seed, 2));
  return p;
}

inline std::vector<std::size_t> layer_sizes(const ModelConfig& model, std::size_t input_dim, std::size_t num_classes,
                                            std::size_t width) {
  std::vector<std::size_t> sizes{input_dim};
  for (std::size_t l = 0; l < model.hidden_layers; ++l) sizes.push_back(width);
  sizes.push_back(num_classes);
  return sizes;
}

/// Trains one model with the given knobs on `member_ids`; `stream` separates
/// the initialization/shuffle seeds of different models.
inline nn::TrainResult train_model(const ModelConfig& model, const FamilyMember& knobs, const data::LabeledDataset& ds,
                                   const std::vector<std::int64_t>& member_ids, std::uint64_t stream) {
  auto init = nn::mlp_init(layer_sizes(model, ds.dim(), static_cast<std::size_t>(ds.num_classes), knobs.width),
                           nn::parse_activation(model.activation), derive_seed(model.seed, stream));
  nn::TrainOptions opt;
  opt.epochs = knobs.epochs;
  opt.lr = model.lr;
  opt.l2 = knobs.l2;
  opt.batch = model.batch;
  opt.seed = derive_seed(model.seed, stream + 0x5eed);
  return nn::train_sgd(std::move(init), ds, member_ids, opt);
}

inline infotheory::ModelMiOptions mi_options(const MiConfig& cfg, std::size_t jobs) {
  infotheory::ModelMiOptions o;
  o.noise_copies = cfg.noise_copies;
  o.sigma_rel = cfg.sigma_rel;
  o.feature = infotheory::parse_mi_feature(cfg.feature);
  o.entropy.k = cfg.k;
  o.entropy.jitter = cfg.jitter;
  o.entropy.estimator = infotheory::parse_estimator(cfg.estimator);
  o.entropy.jobs = jobs;
  o.standardize = cfg.standardize;
  o.base = parse_log_base(cfg.base);
  o.seed = cfg.seed;
  return o;
}

/// Shokri-style attack with `num_shadows` shadow models trained with the same
/// knobs as the target, evaluated on the target pool.
inline mia::AttackReport run_attack_variant(const ExperimentConfig& cfg, const Pools& pools, const nn::MlpModel& target,
                                            const FamilyMember& knobs, std::size_t num_shadows) {
  const auto mode = nn::parse_feature_mode(cfg.attack.mode);
  const auto variant_seed = derive_seed(cfg.attack.seed, num_shadows);
  auto splits = mia::make_shadow_splits(pools.shadow, num_shadows, cfg.attack.in_fraction, variant_seed);

  std::vector<nn::MlpModel> shadows(num_shadows);
  parallel_for(num_shadows, cfg.jobs, [&](std::size_t s) {
    shadows[s] = train_model(cfg.model, knobs, pools.shadow, splits[s].member_ids, 1000 + 100 * num_shadows + s).model;
  });

  auto records = mia::build_attack_dataset(shadows, splits, pools.shadow, mode, derive_seed(variant_seed, 1));
  mia::AttackTrainOptions topt;
  topt.l2 = cfg.attack.l2;
  topt.max_iter = cfg.attack.max_iter;
  topt.per_class = cfg.attack.per_class;
  const auto attack = mia::train_attack(records, topt);

  mia::AttackReport rep;
  if (cfg.attack.resample == "retrain") {
    // Each trial redraws the target's members, retrains it, and reattacks.
    rep = mia::evaluate_attack(attack, target, pools.target, pools.target_split, mode, {}, 0, 0);
    std::map<std::size_t, std::size_t> exceed;
    for (std::size_t t = 0; t < cfg.attack.trials; ++t) {
      auto split = data::split_membership(pools.target, cfg.data.member_fraction, derive_seed(variant_seed, 100 + t));
      auto retrained = train_model(cfg.model, knobs, pools.target, split.member_ids, 5000 + t).model;
      auto trial = mia::evaluate_attack(attack, retrained, pools.target, split, mode, {}, 0, 0);
      for (auto a : cfg.attack.alphas) exceed[a] += trial.errors_xi > a ? 1 : 0;
    }
    for (auto a : cfg.attack.alphas)
      rep.p_hat_alpha[a] = cfg.attack.trials ? static_cast<double>(exceed[a]) / static_cast<double>(cfg.attack.trials) : 0.0;
  } else {
    rep = mia::evaluate_attack(attack, target, pools.target, pools.target_split, mode, cfg.attack.alphas,
                               cfg.attack.trials, derive_seed(variant_seed, 2));
  }
  rep.variant = num_shadows;
  return rep;
}

struct ModelRow {
  FamilyMember knobs;
  infotheory::MiEstimate mi;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<mia::AttackReport> attacks;  // one per shadow count, config order
};

struct CorrelationResult {
  std::vector<ModelRow> rows;
  std::vector<std::size_t> variants;
  std::vector<double> pearson_per_variant;
  double pearson_pooled = 0.0;
};

inline std::vector<double> per_variant_success(const CorrelationResult& r, std::size_t v) {
  std::vector<double> out;
  for (const auto& row : r.rows) out.push_back(row.attacks[v].success_prob);
  return out;
}

/// Trains every family member as a target, estimates its MI, attacks it with
/// every shadow-count variant, and correlates MI with attack success.
inline CorrelationResult run_correlation(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto pools = make_pools(cfg.data);
  const auto mi_opt = mi_options(cfg.mi, cfg.jobs);

  std::vector<std::int64_t> non_members;
  std::set_difference(pools.target_split.pool_ids.begin(), pools.target_split.pool_ids.end(),
                      pools.target_split.member_ids.begin(), pools.target_split.member_ids.end(),
                      std::back_inserter(non_members));
  const auto member_rows = data::rows_of(pools.target, pools.target_split.member_ids);
  const auto test_rows = data::rows_of(pools.target, non_members);

  CorrelationResult res;
  res.variants = cfg.attack.shadow_counts;
  for (std::size_t i = 0; i < cfg.experiment.members.size(); ++i) {
    const auto& knobs = cfg.experiment.members[i];
    ModelRow row;
    row.knobs = knobs;
    try {
      const auto target = train_model(cfg.model, knobs, pools.target, pools.target_split.member_ids, i).model;
      row.train_accuracy = nn::accuracy(target, pools.target, member_rows);
      row.test_accuracy = nn::accuracy(target, pools.target, test_rows);
      row.mi = infotheory::model_mi(target, pools.target, pools.target_split.member_ids, mi_opt);
      for (auto s : cfg.attack.shadow_counts) row.attacks.push_back(run_attack_variant(cfg, pools, target, knobs, s));
    } catch (const Error& e) {
      throw Error(e.code(), "family member (epochs=" + std::to_string(knobs.epochs) + ", width=" +
                                std::to_string(knobs.width) + ", l2=" + data::format_double(knobs.l2) +
                                ") failed: " + e.what());
    }
    res.rows.push_back(std::move(row));
  }

  std::vector<double> mis;
  for (const auto& row : res.rows) mis.push_back(row.mi.value);
  std::vector<double> pooled_mi;
  std::vector<double> pooled_success;
  for (std::size_t v = 0; v < res.variants.size(); ++v) {
    const auto succ = per_variant_success(res, v);
    res.pearson_per_variant.push_back(pearson(mis, succ));
    pooled_mi.insert(pooled_mi.end(), mis.begin(), mis.end());
    pooled_success.insert(pooled_success.end(), succ.begin(), succ.end());
  }
  res.pearson_pooled = pearson(pooled_mi, pooled_success);
  return res;
}

inline std::vector<bound::ChannelSimConfig> theorem_grid(const TheoremConfig& t, std::size_t jobs = 1) {
  std::vector<bound::ChannelSimConfig> grid;
  std::uint64_t cell = 0;
  for (auto d : t.d_sizes)
    for (auto p : t.flip_probs)
      for (auto a : t.alphas) {
        bound::ChannelSimConfig c;
        c.d_size = d;
        c.flip_prob = p;
        c.alpha = a;
        c.trials = t.trials;
        c.seed = derive_seed(t.seed, cell++);
        c.jobs = jobs;
        grid.push_back(c);
      }
  return grid;
}

inline std::vector<bound::ChannelSimResult> run_theorem_validation(const std::vector<bound::ChannelSimConfig>& grid) {
  std::vector<bound::ChannelSimResult> out;
  out.reserve(grid.size());
  for (const auto& c : grid) out.push_back(bound::simulate_channel(c));
  return out;
}

// ---------------------------------------------------------------------------
// Writers (full double precision)

inline std::string correlation_rows_csv(const CorrelationResult& r) {
  std::ostringstream out;
  out << "model,epochs,width,l2,mi,mi_base,h_x,h_y,h_xy,train_accuracy,test_accuracy";
  for (auto v : r.variants) out << ",success_s" << v;
  out << '\n';
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const auto& row = r.rows[i];
    out << i << ',' << row.knobs.epochs << ',' << row.knobs.width << ',' << data::format_double(row.knobs.l2) << ','
        << data::format_double(row.mi.value) << ',' << to_string(row.mi.base) << ',' << data::format_double(row.mi.h_x)
        << ',' << data::format_double(row.mi.h_y) << ',' << data::format_double(row.mi.h_xy) << ','
        << data::format_double(row.train_accuracy) << ',' << data::format_double(row.test_accuracy);
    for (const auto& a : row.attacks) out << ',' << data::format_double(a.success_prob);
    out << '\n';
  }
  return out.str();
}

inline std::string correlation_summary_csv(const CorrelationResult& r) {
  std::ostringstream out;
  out << "variant,pearson_r\n";
  for (std::size_t v = 0; v < r.variants.size(); ++v)
    out << "shadows_" << r.variants[v] << ',' << data::format_double(r.pearson_per_variant[v]) << '\n';
  out << "pooled," << data::format_double(r.pearson_pooled) << '\n';
  return out.str();
}

/// AttackReport rows: variant, mode, success_prob, errors_xi, num_eval, then one
/// p_hat column per alpha.
inline std::string attack_reports_csv(const std::vector<mia::AttackReport>& reps) {
  std::ostringstream out;
  out << "variant,mode,success_prob,errors_xi,num_eval";
  if (!reps.empty())
    for (const auto& [a, p] : reps.front().p_hat_alpha) out << ",p_xi_gt_" << a;
  out << '\n';
  for (const auto& r : reps) {
    out << r.variant << ',' << nn::to_string(r.mode) << ',' << data::format_double(r.success_prob) << ','
        << r.errors_xi << ',' << r.num_eval;
    for (const auto& [a, p] : r.p_hat_alpha) out << ',' << data::format_double(p);
    out << '\n';
  }
  return out.str();
}

inline std::string theorem_csv(const std::vector<bound::ChannelSimResult>& rows) {
  std::ostringstream out;
  out << "d_size,flip_prob,alpha,trials,mi_bits,lower_bound,positive,empirical,std_error,exact,holds\n";
  for (const auto& r : rows) {
    out << r.config.d_size << ',' << data::format_double(r.config.flip_prob) << ',' << r.config.alpha << ','
        << r.config.trials << ',' << data::format_double(r.mi_bits) << ',' << data::format_double(r.bound.lower_bound)
        << ',' << (r.bound.positive ? "true" : "false") << ',' << data::format_double(r.empirical) << ','
        << data::format_double(r.std_error) << ',' << data::format_double(r.exact) << ','
        << (r.holds ? "pass" : "FAIL") << '\n';
  }
  return out.str();
}

inline std::string thresholds_csv(const std::vector<bound::ThresholdRow>& rows) {
  std::ostringstream out;
  out << "alpha_over_D,c_star,z_star\n";
  for (const auto& r : rows)
    out << data::format_double(r.alpha_over_d) << ',' << data::format_double(r.c_star) << ','
        << data::format_double(r.z_star) << '\n';
  return out.str();
}

}  // namespace miafano::experiment
