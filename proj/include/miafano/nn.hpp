#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "miafano/common.hpp"
#include "miafano/data.hpp"

namespace miafano::nn {

enum class Activation { relu, tanh };

inline std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw Error(ErrorCode::invalid_argument, "unknown activation '" + std::string(s) + "'");
}

/// Feedforward classifier. weights[l] maps layer l to layer l+1 and has shape
/// (layer_sizes[l+1] x layer_sizes[l]); the last layer produces logits.
struct MlpModel {
  std::vector<std::size_t> layer_sizes;
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
  Activation activation = Activation::relu;
  std::uint64_t seed = 0;

  [[nodiscard]] std::size_t input_dim() const { return layer_sizes.front(); }
  [[nodiscard]] std::size_t num_classes() const { return layer_sizes.back(); }
  [[nodiscard]] std::size_t num_layers() const { return weights.size(); }
  /// Width of the representation feeding the output layer (the input itself
  /// when there are no hidden layers).
  [[nodiscard]] std::size_t penultimate_size() const { return layer_sizes[layer_sizes.size() - 2]; }

  [[nodiscard]] std::size_t num_parameters() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].data.size() + biases[l].size();
    return n;
  }

  void validate() const {
    require(layer_sizes.size() >= 2, ErrorCode::invalid_argument, "model needs at least two layers");
    require(weights.size() == layer_sizes.size() - 1 && biases.size() == weights.size(), ErrorCode::dimension_mismatch,
            "parameter list length does not match layer_sizes");
    for (std::size_t l = 0; l < weights.size(); ++l) {
      require(weights[l].rows == layer_sizes[l + 1] && weights[l].cols == layer_sizes[l] &&
                  weights[l].data.size() == weights[l].rows * weights[l].cols,
              ErrorCode::dimension_mismatch, "weight shape mismatch in layer " + std::to_string(l));
      require(biases[l].size() == layer_sizes[l + 1], ErrorCode::dimension_mismatch,
              "bias shape mismatch in layer " + std::to_string(l));
      for (double v : weights[l].data) require(std::isfinite(v), ErrorCode::invalid_argument, "non-finite weight");
      for (double v : biases[l]) require(std::isfinite(v), ErrorCode::invalid_argument, "non-finite bias");
    }
  }

  friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

struct ModelOutput {
  std::vector<double> logits;
  std::vector<double> softmax;
  std::vector<double> penultimate;
  /// d(cross-entropy)/d(last-layer weights), num_classes x penultimate_size.
  std::optional<Matrix> loss_grad_last;
  std::optional<double> loss;
};

/// Gradient of an objective w.r.t. every parameter, shaped like the model.
struct Gradients {
  double loss = 0.0;
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
};

inline MlpModel mlp_init(const std::vector<std::size_t>& layer_sizes, Activation activation, std::uint64_t seed) {
  require(layer_sizes.size() >= 2, ErrorCode::invalid_argument, "mlp_init needs at least two layer sizes");
  for (auto s : layer_sizes) require(s >= 1, ErrorCode::invalid_argument, "layer sizes must be >= 1");
  MlpModel m;
  m.layer_sizes = layer_sizes;
  m.activation = activation;
  m.seed = seed;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const auto fan_in = layer_sizes[l];
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    Matrix w(layer_sizes[l + 1], fan_in);
    for (double& v : w.data) v = dist(rng);
    m.weights.push_back(std::move(w));
    m.biases.emplace_back(layer_sizes[l + 1], 0.0);
  }
  return m;
}

namespace detail {

inline double activate(Activation a, double z) { return a == Activation::relu ? (z > 0.0 ? z : 0.0) : std::tanh(z); }

/// Derivative expressed through the pre-activation z and activation value h.
inline double activate_grad(Activation a, double z, double h) {
  return a == Activation::relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - h * h;
}

/// Pre-activations and activations of every layer for one input.
struct Trace {
  std::vector<std::vector<double>> pre;   // pre[l] feeds layer l+1
  std::vector<std::vector<double>> post;  // post[0] = x, post[l] = activation of layer l
};

inline Trace run(const MlpModel& m, std::span<const double> x) {
  Trace t;
  t.post.emplace_back(x.begin(), x.end());
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const auto& w = m.weights[l];
    const auto& in = t.post.back();
    std::vector<double> z(w.rows);
    for (std::size_t i = 0; i < w.rows; ++i) {
      double acc = m.biases[l][i];
      auto wr = w.row(i);
      for (std::size_t j = 0; j < w.cols; ++j) acc += wr[j] * in[j];
      z[i] = acc;
    }
    t.pre.push_back(z);
    if (l + 1 < m.num_layers())
      for (double& v : z) v = activate(m.activation, v);
    t.post.push_back(std::move(z));
  }
  return t;
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += (p[i] = std::exp(logits[i] - mx));
  for (double& v : p) v /= sum;
  return p;
}

inline double cross_entropy(const std::vector<double>& logits, int label) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  return mx + std::log(sum) - logits[static_cast<std::size_t>(label)];
}

inline Gradients zero_like(const MlpModel& m) {
  Gradients g;
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    g.weights.emplace_back(m.weights[l].rows, m.weights[l].cols);
    g.biases.emplace_back(m.biases[l].size(), 0.0);
  }
  return g;
}

/// Adds the cross-entropy gradient of one labeled example into `g`.
inline double accumulate(const MlpModel& m, std::span<const double> x, int label, Gradients& g) {
  auto t = run(m, x);
  const auto& logits = t.post.back();
  const double loss = cross_entropy(logits, label);
  auto delta = softmax(logits);
  delta[static_cast<std::size_t>(label)] -= 1.0;
  for (std::size_t l = m.num_layers(); l-- > 0;) {
    const auto& in = t.post[l];
    auto& gw = g.weights[l];
    for (std::size_t i = 0; i < gw.rows; ++i) {
      g.biases[l][i] += delta[i];
      auto row = gw.row(i);
      for (std::size_t j = 0; j < gw.cols; ++j) row[j] += delta[i] * in[j];
    }
    if (l == 0) break;
    const auto& w = m.weights[l];
    std::vector<double> prev(w.cols, 0.0);
    for (std::size_t i = 0; i < w.rows; ++i) {
      auto wr = w.row(i);
      for (std::size_t j = 0; j < w.cols; ++j) prev[j] += wr[j] * delta[i];
    }
    for (std::size_t j = 0; j < prev.size(); ++j)
      prev[j] *= activate_grad(m.activation, t.pre[l - 1][j], t.post[l][j]);
    delta = std::move(prev);
  }
  return loss;
}

inline double weight_sq_norm(const MlpModel& m) {
  double s = 0.0;
  for (const auto& w : m.weights)
    for (double v : w.data) s += v * v;
  return s;
}

}  // namespace detail

inline ModelOutput forward(const MlpModel& m, std::span<const double> x, std::optional<int> label = std::nullopt) {
  require(x.size() == m.input_dim(), ErrorCode::dimension_mismatch,
          "input has " + std::to_string(x.size()) + " features, model expects " + std::to_string(m.input_dim()));
  auto t = detail::run(m, x);
  ModelOutput out;
  out.logits = t.post.back();
  out.softmax = detail::softmax(out.logits);
  out.penultimate = t.post[t.post.size() - 2];
  if (label) {
    require(*label >= 0 && static_cast<std::size_t>(*label) < m.num_classes(), ErrorCode::invalid_argument,
            "label out of range");
    out.loss = detail::cross_entropy(out.logits, *label);
    Matrix g(m.num_classes(), out.penultimate.size());
    for (std::size_t i = 0; i < g.rows; ++i) {
      const double delta = out.softmax[i] - (static_cast<int>(i) == *label ? 1.0 : 0.0);
      for (std::size_t j = 0; j < g.cols; ++j) g(i, j) = delta * out.penultimate[j];
    }
    out.loss_grad_last = std::move(g);
  }
  return out;
}

inline int predict(const MlpModel& m, std::span<const double> x) {
  require(x.size() == m.input_dim(), ErrorCode::dimension_mismatch,
          "input has " + std::to_string(x.size()) + " features, model expects " + std::to_string(m.input_dim()));
  auto t = detail::run(m, x);
  const auto& z = t.post.back();
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

inline double accuracy(const MlpModel& m, const data::LabeledDataset& ds, std::span<const std::size_t> rows) {
  if (rows.empty()) return 0.0;
  std::size_t hits = 0;
  for (auto r : rows) hits += predict(m, ds.features.row(r)) == ds.labels[r] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

inline double accuracy(const MlpModel& m, const data::LabeledDataset& ds) {
  std::vector<std::size_t> rows(ds.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return accuracy(m, ds, rows);
}

/// Objective mean cross-entropy over `rows` + (l2/2)·||W||² (weights only)
/// and its exact gradient. Examples are summed in `rows` order.
inline Gradients loss_and_gradient(const MlpModel& m, const data::LabeledDataset& ds, std::span<const std::size_t> rows,
                                   double l2) {
  require(!rows.empty(), ErrorCode::invalid_argument, "gradient over zero rows");
  auto g = detail::zero_like(m);
  double loss = 0.0;
  for (auto r : rows) loss += detail::accumulate(m, ds.features.row(r), ds.labels[r], g);
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    for (std::size_t k = 0; k < g.weights[l].data.size(); ++k)
      g.weights[l].data[k] = g.weights[l].data[k] * inv + l2 * m.weights[l].data[k];
    for (double& v : g.biases[l]) v *= inv;
  }
  g.loss = loss * inv + 0.5 * l2 * detail::weight_sq_norm(m);
  return g;
}

struct TrainOptions {
  int epochs = 100;
  double lr = 0.1;
  double l2 = 0.0;
  std::size_t batch = 16;
  std::uint64_t seed = 0;
};

struct TrainResult {
  MlpModel model;
  /// Per-epoch mean of the minibatch objectives, weighted by batch size.
  std::vector<double> loss_trace;
};

/// Plain minibatch SGD on the member rows only.
inline TrainResult train_sgd(MlpModel model, const data::LabeledDataset& ds, const std::vector<std::int64_t>& member_ids,
                             const TrainOptions& opt) {
  require(!member_ids.empty(), ErrorCode::invalid_argument, "train_sgd needs at least one member row");
  require(opt.epochs >= 0, ErrorCode::invalid_argument, "epochs must be non-negative");
  require(opt.lr > 0.0 && std::isfinite(opt.lr), ErrorCode::invalid_argument, "learning rate must be positive");
  require(opt.l2 >= 0.0, ErrorCode::invalid_argument, "l2 must be non-negative");
  require(opt.batch >= 1, ErrorCode::invalid_argument, "batch size must be >= 1");
  require(ds.dim() == model.input_dim(), ErrorCode::dimension_mismatch, "dataset dimension does not match model input");

  auto rows = data::rows_of(ds, member_ids);
  std::sort(rows.begin(), rows.end());
  TrainResult res;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    Rng rng(derive_seed(opt.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(rows.begin(), rows.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < rows.size(); start += opt.batch) {
      const auto len = std::min(opt.batch, rows.size() - start);
      std::span<const std::size_t> batch(rows.data() + start, len);
      auto g = loss_and_gradient(model, ds, batch, opt.l2);
      epoch_loss += g.loss * static_cast<double>(len);
      for (std::size_t l = 0; l < model.num_layers(); ++l) {
        for (std::size_t k = 0; k < g.weights[l].data.size(); ++k) model.weights[l].data[k] -= opt.lr * g.weights[l].data[k];
        for (std::size_t k = 0; k < g.biases[l].size(); ++k) model.biases[l][k] -= opt.lr * g.biases[l][k];
      }
    }
    epoch_loss /= static_cast<double>(rows.size());
    require(std::isfinite(epoch_loss), ErrorCode::divergence,
            "training diverged: non-finite loss at epoch " + std::to_string(epoch + 1));
    res.loss_trace.push_back(epoch_loss);
  }
  res.model = std::move(model);
  return res;
}

/// Adds i.i.d. Gaussian noise to every weight matrix with standard deviation
/// sigma_rel * std(W) (per layer; sigma_rel itself when std(W) = 0). Biases are
/// left untouched.
inline MlpModel perturb_weights(MlpModel model, double sigma_rel, std::uint64_t seed) {
  require(sigma_rel > 0.0 && std::isfinite(sigma_rel), ErrorCode::invalid_argument, "sigma_rel must be positive");
  Rng rng(seed);
  for (auto& w : model.weights) {
    double mean = 0.0;
    for (double v : w.data) mean += v;
    mean /= static_cast<double>(w.data.size());
    double var = 0.0;
    for (double v : w.data) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(w.data.size()));
    std::normal_distribution<double> noise(0.0, sd > 0.0 ? sigma_rel * sd : sigma_rel);
    for (double& v : w.data) v += noise(rng);
  }
  return model;
}

enum class FeatureMode { blackbox, whitebox };

inline std::string_view to_string(FeatureMode m) { return m == FeatureMode::blackbox ? "blackbox" : "whitebox"; }

inline FeatureMode parse_feature_mode(std::string_view s) {
  if (s == "blackbox") return FeatureMode::blackbox;
  if (s == "whitebox") return FeatureMode::whitebox;
  throw Error(ErrorCode::invalid_argument, "unknown attack mode '" + std::string(s) + "'");
}

inline std::size_t feature_length(const MlpModel& m, FeatureMode mode) {
  const auto k = m.num_classes();
  return mode == FeatureMode::blackbox ? k + 1 : k + 1 + m.penultimate_size() + 1 + k;
}

/// Attack features for one example.
/// blackbox: softmax sorted descending, then the loss at the true label.
/// whitebox: blackbox, penultimate activations, ||dL/dW_last||_F, per-row norms.
inline std::vector<double> extract_features(const MlpModel& m, std::span<const double> x, int true_label,
                                            FeatureMode mode) {
  auto out = forward(m, x, true_label);
  std::vector<double> f = out.softmax;
  std::sort(f.begin(), f.end(), std::greater<>());
  f.push_back(*out.loss);
  if (mode == FeatureMode::whitebox) {
    f.insert(f.end(), out.penultimate.begin(), out.penultimate.end());
    const auto& g = *out.loss_grad_last;
    std::vector<double> row_norms(g.rows);
    double total = 0.0;
    for (std::size_t i = 0; i < g.rows; ++i) {
      double s = 0.0;
      for (double v : g.row(i)) s += v * v;
      total += s;
      row_norms[i] = std::sqrt(s);
    }
    f.push_back(std::sqrt(total));
    f.insert(f.end(), row_norms.begin(), row_norms.end());
  }
  return f;
}

}  // namespace miafano::nn
