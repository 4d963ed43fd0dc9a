// mia-fano: command-line front end for the miafano library.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "miafano/bound.hpp"
#include "miafano/checkpoint.hpp"
#include "miafano/data.hpp"
#include "miafano/experiment.hpp"
#include "miafano/infotheory.hpp"
#include "miafano/mia.hpp"
#include "miafano/nn.hpp"

namespace {

using namespace miafano;
namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitError = 1;
constexpr int kExitViolation = 3;

std::string g6(double v) {
  std::ostringstream out;
  out << std::setprecision(6) << v;
  return out.str();
}

void print(const std::string& key, double v) { std::cout << key << '=' << g6(v) << '\n'; }
void print(const std::string& key, const std::string& v) { std::cout << key << '=' << v << '\n'; }

struct Globals {
  std::string config;
  std::string out = "mia_fano_out";
  std::uint64_t seed = 0;
  std::string base;
  std::size_t jobs = 1;
  std::string label_column = "label";

  CLI::Option* seed_opt = nullptr;
  CLI::Option* base_opt = nullptr;
  CLI::Option* jobs_opt = nullptr;
  CLI::Option* label_opt = nullptr;

  [[nodiscard]] LogBase base_or(LogBase fallback) const {
    return base_opt->count() ? parse_log_base(base) : fallback;
  }
};

fs::path out_dir(const Globals& g) {
  fs::path dir(g.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorCode::io, "cannot create output directory '" + g.out + "': " + ec.message());
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write '" + path.string() + "'");
  out << text;
  require(static_cast<bool>(out), ErrorCode::io, "write failed for '" + path.string() + "'");
  spdlog::info("wrote {}", path.string());
}

/// The manifest echoes the command, its resolved options, and (for config
/// driven commands) the full resolved config. Passing it back through --config
/// reruns the command.
void write_manifest(const Globals& g, const std::string& command, const json& options, const json& config = nullptr) {
  json m = {{"manifest_version", 1}, {"tool", "mia-fano"}, {"command", command}, {"options", options}};
  if (!config.is_null()) m["config"] = config;
  write_file(out_dir(g) / "manifest.json", m.dump(2) + "\n");
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, path + ": " + e.what());
  }
}

/// Config file (or manifest) overlaid with command-line overrides.
experiment::ExperimentConfig resolve_config(const Globals& g) {
  experiment::ExperimentConfig cfg;
  if (!g.config.empty()) {
    auto j = read_json(g.config);
    if (j.is_object() && j.contains("manifest_version")) {
      require(j.contains("config"), ErrorCode::parse, "manifest '" + g.config + "' carries no config section");
      j = j.at("config");
    }
    cfg = experiment::config_from_json(j);
  }
  if (g.seed_opt->count()) {
    cfg.data.seed = g.seed;
    cfg.model.seed = g.seed + 1;
    cfg.mi.seed = g.seed + 2;
    cfg.attack.seed = g.seed + 3;
    cfg.theorem.seed = g.seed + 4;
  }
  if (g.base_opt->count()) cfg.mi.base = std::string(to_string(parse_log_base(g.base)));
  if (g.jobs_opt->count()) cfg.jobs = g.jobs;
  if (g.label_opt->count()) cfg.data.label_column = g.label_column;
  require(cfg.jobs >= 1, ErrorCode::invalid_argument, "--jobs must be >= 1");
  cfg.validate();
  return cfg;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("mia-fano");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("MIA_FANO_LOG")) {
    const std::string want(env);
    const auto level = spdlog::level::from_str(want);
    if (level == spdlog::level::off && want != "off")
      spdlog::warn("MIA_FANO_LOG='{}' is not a log level; using warn", want);
    else
      spdlog::set_level(level);
  }
}

// ---------------------------------------------------------------------------

struct EntropyArgs {
  std::string input;
  std::vector<std::string> columns;
  std::size_t k = 3;
  double jitter = 1e-10;
  std::string estimator = "kl";
};

void cmd_entropy(const Globals& g, const EntropyArgs& a) {
  const auto table = data::load_table(a.input);
  std::vector<std::string> cols = a.columns;
  if (cols.empty())
    for (const auto& c : table.columns)
      if (c != g.label_column) cols.push_back(c);
  require(!cols.empty(), ErrorCode::invalid_argument, "no feature columns in '" + a.input + "'");

  infotheory::EntropyOptions opt;
  opt.k = a.k;
  opt.jitter = a.jitter;
  opt.seed = g.seed;
  opt.estimator = infotheory::parse_estimator(a.estimator);
  opt.jobs = g.jobs;
  const auto points = table.select(cols);
  const double nats = infotheory::entropy_knn(points, opt);
  const auto base = g.base_or(LogBase::nats);

  print("entropy", from_nats(nats, base));
  print("base", std::string(to_string(base)));
  print("entropy_nats", nats);
  print("entropy_bits", from_nats(nats, LogBase::bits));
  print("n", static_cast<double>(points.rows));
  print("d", static_cast<double>(points.cols));
  write_manifest(g, "entropy",
                 {{"input", a.input}, {"columns", cols}, {"k", a.k}, {"jitter", a.jitter}, {"estimator", a.estimator},
                  {"seed", g.seed}, {"base", to_string(base)}, {"jobs", g.jobs}});
}

struct MiArgs {
  std::string input;
  std::vector<std::string> x_columns;
  std::vector<std::string> y_columns;
  std::string model;
  std::size_t k = 3;
  double jitter = 1e-10;
  std::string estimator = "kl";
  std::size_t noise_copies = 8;
  double sigma_rel = 0.05;
  std::string feature = "softmax+penultimate";
};

void cmd_mi(const Globals& g, const MiArgs& a) {
  const auto base = g.base_or(LogBase::nats);
  infotheory::EntropyOptions eopt;
  eopt.k = a.k;
  eopt.jitter = a.jitter;
  eopt.seed = g.seed;
  eopt.estimator = infotheory::parse_estimator(a.estimator);
  eopt.jobs = g.jobs;

  infotheory::MiEstimate est;
  json options = {{"input", a.input}, {"k", a.k},       {"jitter", a.jitter}, {"estimator", a.estimator},
                  {"seed", g.seed},   {"base", to_string(base)}, {"jobs", g.jobs}};
  if (!a.model.empty()) {
    const auto model = nn::load_checkpoint(a.model);
    const auto ds = data::load_csv(a.input, g.label_column);
    require(ds.dim() == model.input_dim(), ErrorCode::dimension_mismatch,
            "model expects " + std::to_string(model.input_dim()) + " features, '" + a.input + "' has " +
                std::to_string(ds.dim()));
    infotheory::ModelMiOptions mopt;
    mopt.noise_copies = a.noise_copies;
    mopt.sigma_rel = a.sigma_rel;
    mopt.feature = infotheory::parse_mi_feature(a.feature);
    mopt.entropy = eopt;
    mopt.base = base;
    mopt.seed = g.seed;
    est = infotheory::model_mi(model, ds, ds.ids, mopt);
    options.update({{"model", a.model},
                    {"label_column", g.label_column},
                    {"noise_copies", a.noise_copies},
                    {"sigma_rel", a.sigma_rel},
                    {"feature", a.feature}});
  } else {
    require(!a.x_columns.empty() && !a.y_columns.empty(), ErrorCode::invalid_argument,
            "mi needs --x and --y column lists, or --model");
    const auto table = data::load_table(a.input);
    est = infotheory::mutual_information(table.select(a.x_columns), table.select(a.y_columns), eopt, base);
    options.update({{"x", a.x_columns}, {"y", a.y_columns}});
  }
  print("mi", est.value);
  print("base", std::string(to_string(est.base)));
  print("h_x", est.h_x);
  print("h_y", est.h_y);
  print("h_xy", est.h_xy);
  print("n", static_cast<double>(est.n));
  print("k", static_cast<double>(est.k));
  write_manifest(g, "mi", options);
}

struct BoundArgs {
  double h_x = -1.0;
  double mi = 0.0;
  std::uint64_t d_size = 0;
  std::uint64_t alpha = 0;
};

void cmd_bound(const Globals& g, const BoundArgs& a) {
  const auto base = g.base_or(LogBase::bits);
  bound::BoundQuery q;
  q.d_size = a.d_size;
  q.alpha = a.alpha;
  q.mi = a.mi;
  q.base = base;
  q.h_x = a.h_x >= 0.0 ? a.h_x : static_cast<double>(a.d_size) * (base == LogBase::bits ? 1.0 : std::numbers::ln2);
  const auto r = bound::fano_lower_bound(q);
  print("lower_bound", r.lower_bound);
  print("numerator", r.numerator);
  print("denominator", r.denominator);
  print("log_v_alpha", r.log_v_alpha);
  print("positive", r.positive ? "true" : "false");
  print("base", std::string(to_string(base)));
  write_manifest(g, "bound",
                 {{"h_x", q.h_x}, {"mi", q.mi}, {"d_size", q.d_size}, {"alpha", q.alpha}, {"base", to_string(base)}});
}

struct SweepArgs {
  std::uint64_t d_size = 10000;
  std::size_t points = 51;
  double max_ratio = 0.5;
};

void cmd_sweep(const Globals& g, const SweepArgs& a) {
  const auto base = g.base_or(LogBase::nats);
  const auto rows = bound::sweep_thresholds(a.d_size, a.points, base, a.max_ratio);
  write_file(out_dir(g) / "thresholds.csv", experiment::thresholds_csv(rows));
  std::cout << "alpha_over_D,alpha,c_star,z_star\n";
  for (const auto& r : rows)
    std::cout << g6(r.alpha_over_d) << ',' << r.alpha << ',' << g6(r.c_star) << ',' << g6(r.z_star) << '\n';
  write_manifest(g, "sweep-thresholds",
                 {{"d_size", a.d_size}, {"points", a.points}, {"max_ratio", a.max_ratio}, {"base", to_string(base)}});
}

struct TrainArgs {
  int epochs = -1;
  std::size_t width = 0;
  double l2 = -1.0;
  std::string model;
};

experiment::FamilyMember knobs_from(const experiment::ExperimentConfig& cfg, const TrainArgs& a) {
  experiment::FamilyMember k{cfg.model.epochs, cfg.model.width, cfg.model.l2};
  if (a.epochs >= 0) k.epochs = a.epochs;
  if (a.width > 0) k.width = a.width;
  if (a.l2 >= 0.0) k.l2 = a.l2;
  return k;
}

json knobs_json(const experiment::FamilyMember& k) { return {{"epochs", k.epochs}, {"width", k.width}, {"l2", k.l2}}; }

void cmd_train(const Globals& g, const TrainArgs& a) {
  const auto cfg = resolve_config(g);
  const auto knobs = knobs_from(cfg, a);
  const auto pools = experiment::make_pools(cfg.data);
  spdlog::info("training target: {} member rows, {} epochs", pools.target_split.member_ids.size(), knobs.epochs);
  const auto res = experiment::train_model(cfg.model, knobs, pools.target, pools.target_split.member_ids, 0);

  std::vector<std::int64_t> rest;
  std::set_difference(pools.target_split.pool_ids.begin(), pools.target_split.pool_ids.end(),
                      pools.target_split.member_ids.begin(), pools.target_split.member_ids.end(),
                      std::back_inserter(rest));
  const double train_acc = nn::accuracy(res.model, pools.target, data::rows_of(pools.target, pools.target_split.member_ids));
  const double test_acc = nn::accuracy(res.model, pools.target, data::rows_of(pools.target, rest));

  const auto dir = out_dir(g);
  nn::save_checkpoint(res.model, (dir / "model.json").string());
  std::ostringstream trace;
  trace << "epoch,loss\n";
  for (std::size_t e = 0; e < res.loss_trace.size(); ++e) trace << e + 1 << ',' << data::format_double(res.loss_trace[e]) << '\n';
  write_file(dir / "train_loss.csv", trace.str());

  print("train_accuracy", train_acc);
  print("test_accuracy", test_acc);
  print("final_loss", res.loss_trace.empty() ? 0.0 : res.loss_trace.back());
  print("parameters", static_cast<double>(res.model.num_parameters()));
  write_manifest(g, "train", {{"knobs", knobs_json(knobs)}}, json(cfg));
}

void cmd_attack(const Globals& g, const TrainArgs& a) {
  const auto cfg = resolve_config(g);
  const auto knobs = knobs_from(cfg, a);
  const auto pools = experiment::make_pools(cfg.data);
  const auto target = a.model.empty()
                          ? experiment::train_model(cfg.model, knobs, pools.target, pools.target_split.member_ids, 0).model
                          : nn::load_checkpoint(a.model);
  require(target.input_dim() == pools.target.dim(), ErrorCode::dimension_mismatch,
          "target model input size does not match the configured data");

  std::vector<mia::AttackReport> reports;
  for (auto s : cfg.attack.shadow_counts) {
    spdlog::info("attack variant with {} shadow models", s);
    reports.push_back(experiment::run_attack_variant(cfg, pools, target, knobs, s));
  }
  write_file(out_dir(g) / "attack_report.csv", experiment::attack_reports_csv(reports));
  for (const auto& r : reports) {
    std::cout << "shadows=" << r.variant << " success_prob=" << g6(r.success_prob) << " errors_xi=" << r.errors_xi
              << " num_eval=" << r.num_eval;
    for (const auto& [alpha, p] : r.p_hat_alpha) std::cout << " p_xi_gt_" << alpha << '=' << g6(p);
    std::cout << '\n';
  }
  json options = {{"knobs", knobs_json(knobs)}};
  if (!a.model.empty()) options["model"] = a.model;
  write_manifest(g, "attack", options, json(cfg));
}

void cmd_correlate(const Globals& g) {
  const auto cfg = resolve_config(g);
  spdlog::info("correlating {} family members", cfg.experiment.members.size());
  const auto res = experiment::run_correlation(cfg);
  const auto dir = out_dir(g);
  write_file(dir / "correlation.csv", experiment::correlation_rows_csv(res));
  write_file(dir / "correlation_summary.csv", experiment::correlation_summary_csv(res));

  std::ostringstream summary;
  summary << "model epochs width l2 mi(" << cfg.mi.base << ") train_acc test_acc";
  for (auto v : res.variants) summary << " success_s" << v;
  summary << '\n';
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    const auto& row = res.rows[i];
    summary << i << ' ' << row.knobs.epochs << ' ' << row.knobs.width << ' ' << g6(row.knobs.l2) << ' '
            << g6(row.mi.value) << ' ' << g6(row.train_accuracy) << ' ' << g6(row.test_accuracy);
    for (const auto& at : row.attacks) summary << ' ' << g6(at.success_prob);
    summary << '\n';
  }
  for (std::size_t v = 0; v < res.variants.size(); ++v)
    summary << "pearson_r shadows_" << res.variants[v] << '=' << g6(res.pearson_per_variant[v]) << '\n';
  summary << "pearson_r pooled=" << g6(res.pearson_pooled) << '\n';
  write_file(dir / "summary.txt", summary.str());
  std::cout << summary.str();
  write_manifest(g, "correlate", json::object(), json(cfg));
}

int cmd_validate_theorem(const Globals& g) {
  const auto cfg = resolve_config(g);
  const auto grid = experiment::theorem_grid(cfg.theorem, cfg.jobs);
  spdlog::info("simulating {} channel configurations", grid.size());
  const auto rows = experiment::run_theorem_validation(grid);
  write_file(out_dir(g) / "theorem.csv", experiment::theorem_csv(rows));
  std::size_t violations = 0;
  std::size_t positive = 0;
  for (const auto& r : rows) {
    positive += r.bound.positive ? 1 : 0;
    if (!r.holds) {
      ++violations;
      std::cout << "VIOLATION d_size=" << r.config.d_size << " flip_prob=" << g6(r.config.flip_prob)
                << " alpha=" << r.config.alpha << " empirical=" << g6(r.empirical)
                << " bound=" << g6(r.bound.lower_bound) << '\n';
    }
  }
  print("cells", static_cast<double>(rows.size()));
  print("positive_bounds", static_cast<double>(positive));
  print("violations", static_cast<double>(violations));
  write_manifest(g, "validate-theorem", json::object(), json(cfg));
  return violations == 0 ? 0 : kExitViolation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Membership-inference risk analysis: information bounds, MI estimation, shadow-model attacks"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "JSON experiment config, or a manifest from a previous run");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  g.seed_opt = app.add_option("--seed", g.seed, "seed override");
  g.base_opt = app.add_option("--base", g.base, "log base for reported information quantities")
                   ->check(CLI::IsMember({"bits", "nats"}));
  g.jobs_opt = app.add_option("--jobs", g.jobs, "worker threads")->check(CLI::PositiveNumber);
  g.label_opt = app.add_option("--label-column", g.label_column, "label column of CSV inputs")->capture_default_str();

  EntropyArgs ea;
  auto* entropy = app.add_subcommand("entropy", "kNN differential entropy of a numeric CSV");
  entropy->add_option("input", ea.input, "CSV file")->required();
  entropy->add_option("--columns", ea.columns, "columns to use (default: all but the label column)")->delimiter(',');
  entropy->add_option("-k,--k", ea.k, "neighbor rank")->capture_default_str();
  entropy->add_option("--jitter", ea.jitter, "uniform jitter half-width")->capture_default_str();
  entropy->add_option("--estimator", ea.estimator, "kl or plain")->capture_default_str();

  MiArgs ma;
  auto* mi = app.add_subcommand("mi", "kNN mutual information between column groups, or of a model checkpoint");
  mi->add_option("input", ma.input, "CSV file")->required();
  mi->add_option("--x", ma.x_columns, "X columns")->delimiter(',');
  mi->add_option("--y", ma.y_columns, "Y columns")->delimiter(',');
  mi->add_option("--model", ma.model, "model checkpoint; estimates I(inputs; perturbed outputs) over all rows");
  mi->add_option("-k,--k", ma.k, "neighbor rank")->capture_default_str();
  mi->add_option("--jitter", ma.jitter, "uniform jitter half-width")->capture_default_str();
  mi->add_option("--estimator", ma.estimator, "kl or plain")->capture_default_str();
  mi->add_option("--noise-copies", ma.noise_copies, "perturbed model copies")->capture_default_str();
  mi->add_option("--sigma-rel", ma.sigma_rel, "weight noise relative to per-layer weight std")->capture_default_str();
  mi->add_option("--feature", ma.feature, "softmax or softmax+penultimate")->capture_default_str();

  BoundArgs ba;
  auto* bnd = app.add_subcommand("bound", "lower bound on the probability of more than alpha attack errors");
  bnd->add_option("--h-x", ba.h_x, "entropy of the membership vector (default: |D| bits)");
  bnd->add_option("--mi", ba.mi, "I(X;Y)")->required();
  bnd->add_option("--d-size", ba.d_size, "|D|")->required();
  bnd->add_option("--alpha", ba.alpha, "error threshold")->capture_default_str();

  SweepArgs sa;
  auto* sweep = app.add_subcommand("sweep-thresholds", "positivity thresholds c* and z* over alpha/|D|");
  sweep->add_option("--d-size", sa.d_size, "|D|")->capture_default_str();
  sweep->add_option("--points", sa.points, "grid points in [0, max-ratio]")->capture_default_str();
  sweep->add_option("--max-ratio", sa.max_ratio, "largest alpha/|D|")->capture_default_str();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train the target model and write a checkpoint");
  auto* attack = app.add_subcommand("attack", "shadow-model attack on the target model");
  for (auto* sub : {train, attack}) {
    sub->add_option("--epochs", ta.epochs, "override model.epochs");
    sub->add_option("--width", ta.width, "override model.width");
    sub->add_option("--l2", ta.l2, "override model.l2");
  }
  attack->add_option("--model", ta.model, "attack this checkpoint instead of training the target");

  auto* correlate = app.add_subcommand("correlate", "MI versus attack success over the model family");
  auto* theorem = app.add_subcommand("validate-theorem", "Monte-Carlo check of the bound on binary channels");

  CLI11_PARSE(app, argc, argv);
  setup_logging();

  try {
    if (*entropy) cmd_entropy(g, ea);
    if (*mi) cmd_mi(g, ma);
    if (*bnd) cmd_bound(g, ba);
    if (*sweep) cmd_sweep(g, sa);
    if (*train) cmd_train(g, ta);
    if (*attack) cmd_attack(g, ta);
    if (*correlate) cmd_correlate(g);
    if (*theorem) return cmd_validate_theorem(g);
  } catch (const std::exception& e) {
    std::cerr << "mia-fano: error: " << e.what() << '\n';
    return kExitError;
  }
  return 0;
}
