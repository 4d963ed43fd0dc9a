#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "miafano/common.hpp"
#include "miafano/parallel.hpp"

namespace miafano::bound {

namespace detail {

inline double log_choose(std::uint64_t n, std::uint64_t j) {
  const auto nd = static_cast<double>(n);
  const auto jd = static_cast<double>(j);
  return std::lgamma(nd + 1.0) - std::lgamma(jd + 1.0) - std::lgamma(nd - jd + 1.0);
}

inline double in_base(double nats, LogBase base) { return from_nats(nats, base); }

/// One bit expressed in `base`.
inline double bit_unit(LogBase base) { return base == LogBase::bits ? 1.0 : std::numbers::ln2; }

}  // namespace detail

/// log V(a) = log sum_{j<=a} C(n, j) for every a in [0, alpha_max], in `base`.
/// Terms are log-gamma differences merged with a running log-sum-exp, so
/// nothing overflows for n in the millions.
inline std::vector<double> log_binomial_prefix(std::uint64_t n, std::uint64_t alpha_max, LogBase base) {
  require(alpha_max <= n, ErrorCode::invalid_argument,
          "alpha (" + std::to_string(alpha_max) + ") exceeds n (" + std::to_string(n) + ")");
  std::vector<double> out;
  out.reserve(alpha_max + 1);
  double acc = -std::numeric_limits<double>::infinity();
  for (std::uint64_t j = 0; j <= alpha_max; ++j) {
    const double t = detail::log_choose(n, j);
    const double hi = std::max(acc, t);
    acc = hi + std::log(std::exp(acc - hi) + std::exp(t - hi));
    out.push_back(detail::in_base(acc, base));
  }
  return out;
}

/// log sum_{j=0}^{alpha} C(n, j) in `base`.
inline double log_binomial_sum(std::uint64_t n, std::uint64_t alpha, LogBase base) {
  require(alpha <= n, ErrorCode::invalid_argument,
          "alpha (" + std::to_string(alpha) + ") exceeds n (" + std::to_string(n) + ")");
  // Terms increase up to n/2, so the largest one is known up front.
  const std::uint64_t peak = std::min(alpha, n / 2);
  const double mx = detail::log_choose(n, peak);
  double sum = 0.0;
  for (std::uint64_t j = 0; j <= alpha; ++j) sum += std::exp(detail::log_choose(n, j) - mx);
  return detail::in_base(mx + std::log(sum), base);
}

/// |D| - log V(alpha) in `base`, i.e. -log P(Bin(n, 1/2) <= alpha). Past n/2
/// the upper tail is summed instead so the difference keeps full precision.
inline double log_binomial_complement(std::uint64_t n, std::uint64_t alpha, LogBase base) {
  require(alpha <= n, ErrorCode::invalid_argument,
          "alpha (" + std::to_string(alpha) + ") exceeds n (" + std::to_string(n) + ")");
  const double n_nats = static_cast<double>(n) * std::numbers::ln2;
  if (alpha == n) return 0.0;
  if (2 * alpha <= n) return static_cast<double>(n) * detail::bit_unit(base) - log_binomial_sum(n, alpha, base);
  const std::uint64_t peak = std::max(alpha + 1, n / 2);
  const double mx = detail::log_choose(n, peak);
  double sum = 0.0;
  for (std::uint64_t j = alpha + 1; j <= n; ++j) sum += std::exp(detail::log_choose(n, j) - mx);
  const double log_tail = mx + std::log(sum) - n_nats;
  return detail::in_base(-std::log1p(-std::exp(log_tail)), base);
}

/// Inputs to the bound. h_x and mi are in `base` units; |D| is a count and is
/// converted to |D| bits (|D|·ln 2 nats) inside the bound.
struct BoundQuery {
  double h_x = 0.0;
  double mi = 0.0;
  std::uint64_t d_size = 0;
  std::uint64_t alpha = 0;
  LogBase base = LogBase::bits;
};

struct BoundResult {
  double lower_bound = 0.0;
  double numerator = 0.0;
  double denominator = 0.0;
  double log_v_alpha = 0.0;
  bool positive = false;
};

/// p_alpha >= (H(X) - I(X;Y) - 1 - log V(alpha)) / (|D| - log V(alpha)).
/// The constant 1 is the one-bit entropy cap of the binary error event and, like
/// |D|, is expressed in the query's base. Negative values are returned as-is.
inline BoundResult fano_lower_bound(const BoundQuery& q) {
  require(q.d_size >= 1, ErrorCode::invalid_argument, "|D| must be >= 1");
  require(q.alpha <= q.d_size, ErrorCode::invalid_argument, "alpha must not exceed |D|");
  require(q.h_x >= 0.0 && std::isfinite(q.h_x), ErrorCode::invalid_argument, "H(X) must be finite and >= 0");
  require(q.mi >= 0.0 && std::isfinite(q.mi), ErrorCode::invalid_argument, "I(X;Y) must be finite and >= 0");
  const double unit = detail::bit_unit(q.base);
  const double d_units = static_cast<double>(q.d_size) * unit;
  require(q.h_x <= d_units * (1.0 + 1e-12), ErrorCode::invalid_argument,
          "H(X) cannot exceed |D| bits for a membership vector over |D| items");
  require(q.alpha < q.d_size, ErrorCode::vacuous_threshold,
          "alpha = |D| makes the bound vacuous (every membership vector is within alpha errors)");

  BoundResult r;
  r.log_v_alpha = log_binomial_sum(q.d_size, q.alpha, q.base);
  r.numerator = q.h_x - q.mi - unit - r.log_v_alpha;
  r.denominator = log_binomial_complement(q.d_size, q.alpha, q.base);
  require(r.denominator > 0.0, ErrorCode::vacuous_threshold, "bound denominator |D| - log V(alpha) is not positive");
  r.lower_bound = r.numerator / r.denominator;
  r.positive = r.numerator > 0.0;
  return r;
}

/// Closed form with H(X) = |D| bits, I = 0, alpha = c: 1 - 1/(|D| - log2 V(c)).
inline double example1_bound(std::uint64_t d_size, std::uint64_t c) {
  require(c < d_size, ErrorCode::invalid_argument, "closed form needs c < |D|");
  return 1.0 - 1.0 / (static_cast<double>(d_size) - log_binomial_sum(d_size, c, LogBase::bits));
}

/// Closed form with H(X) = |D| bits, I = |D|/c, alpha = 0: 1 - 1/c - 1/|D|.
inline double example2_bound(double c, std::uint64_t d_size) {
  require(c > 1.0, ErrorCode::invalid_argument, "closed form needs c > 1");
  require(d_size >= 1, ErrorCode::invalid_argument, "|D| must be >= 1");
  return 1.0 - 1.0 / c - 1.0 / static_cast<double>(d_size);
}

/// Restated form 1 - (1 + 1/|D| - c) / (1 - z).
inline double bound_restated(double c, double z, std::uint64_t d_size) {
  require(d_size >= 1, ErrorCode::invalid_argument, "|D| must be >= 1");
  require(z < 1.0, ErrorCode::vacuous_threshold, "z must be < 1");
  return 1.0 - (1.0 + 1.0 / static_cast<double>(d_size) - c) / (1.0 - z);
}

/// (c, z) of the restated form for a query: c = H(X|Y)/|D|, z = log V(alpha)/|D|,
/// with |D| in the query's units.
struct RestatedCoordinates {
  double c = 0.0;
  double z = 0.0;
};

inline RestatedCoordinates restated_coordinates(const BoundQuery& q) {
  const double d_units = static_cast<double>(q.d_size) * detail::bit_unit(q.base);
  return {(q.h_x - q.mi) / d_units, log_binomial_sum(q.d_size, q.alpha, q.base) / d_units};
}

/// Smallest H(X|Y)/|D| giving a positive bound: (1 + log V(alpha)) / |D|.
/// log V is taken in `base` while |D| stays a raw count, the convention of the
/// published threshold curves (natural log there gives c* -> ln 2 at alpha = |D|/2).
inline double threshold_conditional_entropy(std::uint64_t d_size, std::uint64_t alpha, LogBase base) {
  require(alpha < d_size, ErrorCode::invalid_argument, "threshold needs alpha < |D|");
  return (1.0 + log_binomial_sum(d_size, alpha, base)) / static_cast<double>(d_size);
}

/// z at which the restated bound crosses zero for a given c.
inline double threshold_z(double c, std::uint64_t d_size) {
  require(d_size >= 1, ErrorCode::invalid_argument, "|D| must be >= 1");
  return c - 1.0 / static_cast<double>(d_size);
}

/// Largest alpha < |D| with log V(alpha)/|D| <= z, by bisection (log V is
/// strictly increasing in alpha). Empty when even alpha = 0 exceeds z.
inline std::optional<std::uint64_t> alpha_for_z(double z, std::uint64_t d_size, LogBase base) {
  require(d_size >= 1, ErrorCode::invalid_argument, "|D| must be >= 1");
  const auto d = static_cast<double>(d_size);
  auto z_of = [&](std::uint64_t a) { return log_binomial_sum(d_size, a, base) / d; };
  if (z_of(0) > z) return std::nullopt;
  std::uint64_t lo = 0;
  std::uint64_t hi = d_size - 1;
  if (z_of(hi) <= z) return hi;
  while (hi - lo > 1) {
    const auto mid = lo + (hi - lo) / 2;
    (z_of(mid) <= z ? lo : hi) = mid;
  }
  return lo;
}

struct ThresholdRow {
  double alpha_over_d = 0.0;
  std::uint64_t alpha = 0;
  double c_star = 0.0;
  double z_star = 0.0;
};

/// Threshold curves over alpha/|D| in [0, max_ratio] on `points` evenly spaced
/// grid values. alpha = round(ratio·|D|), capped at |D| - 1.
inline std::vector<ThresholdRow> sweep_thresholds(std::uint64_t d_size, std::size_t points, LogBase base,
                                                  double max_ratio = 0.5) {
  require(d_size >= 2, ErrorCode::invalid_argument, "sweep needs |D| >= 2");
  require(points >= 2, ErrorCode::invalid_argument, "sweep needs at least two grid points");
  require(max_ratio > 0.0 && max_ratio <= 1.0, ErrorCode::invalid_argument, "max ratio must lie in (0, 1]");
  const auto d = static_cast<double>(d_size);
  auto alpha_at = [&](std::size_t i) {
    const double ratio = max_ratio * static_cast<double>(i) / static_cast<double>(points - 1);
    return std::min<std::uint64_t>(static_cast<std::uint64_t>(std::llround(ratio * d)), d_size - 1);
  };
  const auto prefix = log_binomial_prefix(d_size, alpha_at(points - 1), base);
  std::vector<ThresholdRow> rows;
  for (std::size_t i = 0; i < points; ++i) {
    ThresholdRow row;
    row.alpha_over_d = max_ratio * static_cast<double>(i) / static_cast<double>(points - 1);
    row.alpha = alpha_at(i);
    row.c_star = (1.0 + prefix[row.alpha]) / d;
    row.z_star = threshold_z(row.c_star, d_size);
    rows.push_back(row);
  }
  return rows;
}

/// Binary entropy in bits.
inline double binary_entropy_bits(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

/// Symmetric membership channel: X uniform on {0,1}^|D|, the attacker's guess A
/// flips each coordinate independently with flip_prob.
struct ChannelSimConfig {
  std::uint64_t d_size = 8;
  double flip_prob = 0.1;
  std::uint64_t trials = 200000;
  std::uint64_t alpha = 0;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct ChannelSimResult {
  ChannelSimConfig config;
  double h_x_bits = 0.0;
  double mi_bits = 0.0;
  BoundResult bound;
  std::uint64_t exceed_count = 0;
  double empirical = 0.0;   // Monte-Carlo P(xi > alpha)
  double std_error = 0.0;   // sqrt(p(1-p)/trials)
  double exact = 0.0;       // binomial tail, for reference
  bool holds = true;        // empirical >= bound - 3 se whenever the bound is positive
};

inline constexpr std::uint64_t kChannelChunk = 8192;

inline ChannelSimResult simulate_channel(const ChannelSimConfig& cfg) {
  require(cfg.d_size >= 1 && cfg.d_size <= 20, ErrorCode::invalid_argument, "channel simulation needs 1 <= |D| <= 20");
  require(cfg.flip_prob >= 0.0 && cfg.flip_prob <= 0.5, ErrorCode::invalid_argument, "flip_prob must lie in [0, 0.5]");
  require(cfg.trials >= 1, ErrorCode::invalid_argument, "trials must be >= 1");
  require(cfg.alpha < cfg.d_size, ErrorCode::invalid_argument, "alpha must be < |D|");

  ChannelSimResult res;
  res.config = cfg;
  const auto d = static_cast<double>(cfg.d_size);
  res.h_x_bits = d;
  res.mi_bits = d * (1.0 - binary_entropy_bits(cfg.flip_prob));
  res.bound = fano_lower_bound({res.h_x_bits, res.mi_bits, cfg.d_size, cfg.alpha, LogBase::bits});

  const std::uint64_t chunks = (cfg.trials + kChannelChunk - 1) / kChannelChunk;
  std::vector<std::uint64_t> counts(chunks, 0);
  const std::uint64_t mask = (std::uint64_t{1} << cfg.d_size) - 1;
  parallel_for(chunks, cfg.jobs, [&](std::size_t c) {
    Rng rng(derive_seed(cfg.seed, c));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto begin = c * kChannelChunk;
    const auto end = std::min(cfg.trials, begin + kChannelChunk);
    std::uint64_t hits = 0;
    for (auto t = begin; t < end; ++t) {
      const std::uint64_t truth = rng() & mask;
      std::uint64_t guess = truth;
      for (std::uint64_t b = 0; b < cfg.d_size; ++b)
        if (u(rng) < cfg.flip_prob) guess ^= std::uint64_t{1} << b;
      const auto xi = static_cast<std::uint64_t>(std::popcount(truth ^ guess));
      hits += xi > cfg.alpha ? 1 : 0;
    }
    counts[c] = hits;
  });
  for (auto h : counts) res.exceed_count += h;

  const auto trials = static_cast<double>(cfg.trials);
  res.empirical = static_cast<double>(res.exceed_count) / trials;
  res.std_error = std::sqrt(res.empirical * (1.0 - res.empirical) / trials);

  double at_most = 0.0;
  for (std::uint64_t j = 0; j <= cfg.alpha; ++j)
    at_most += std::exp(detail::log_choose(cfg.d_size, j)) * std::pow(cfg.flip_prob, static_cast<double>(j)) *
               std::pow(1.0 - cfg.flip_prob, d - static_cast<double>(j));
  res.exact = 1.0 - at_most;

  res.holds = !res.bound.positive || res.empirical >= res.bound.lower_bound - 3.0 * res.std_error;
  return res;
}

}  // namespace miafano::bound
