#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace miafano {

/// Category of a failure raised by the library. Callers that need to branch
/// on the failure (the CLI maps these to diagnostics) inspect `Error::code()`.
enum class ErrorCode {
  invalid_argument,
  io,
  parse,
  unknown_column,
  dimension_mismatch,
  too_few_samples,
  duplicate_points,
  divergence,
  vacuous_threshold,
  single_class,
};

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

enum class LogBase { bits, nats };

inline std::string_view to_string(LogBase b) { return b == LogBase::bits ? "bits" : "nats"; }

inline LogBase parse_log_base(std::string_view s) {
  if (s == "bits") return LogBase::bits;
  if (s == "nats") return LogBase::nats;
  throw Error(ErrorCode::invalid_argument, "unknown log base '" + std::string(s) + "' (expected bits or nats)");
}

/// Converts a quantity measured in nats into `base`.
inline double from_nats(double nats, LogBase base) {
  return base == LogBase::bits ? nats / std::numbers::ln2 : nats;
}

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// Column-wise concatenation [a | b]; both must have the same row count.
inline Matrix hconcat(const Matrix& a, const Matrix& b) {
  require(a.rows == b.rows, ErrorCode::dimension_mismatch,
          "cannot concatenate clouds with " + std::to_string(a.rows) + " and " + std::to_string(b.rows) + " rows");
  Matrix out(a.rows, a.cols + b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    auto dst = out.row(i);
    auto ra = a.row(i);
    auto rb = b.row(i);
    std::copy(ra.begin(), ra.end(), dst.begin());
    std::copy(rb.begin(), rb.end(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols));
  }
  return out;
}

using Rng = std::mt19937_64;

/// splitmix64 finalizer; derives an independent stream seed from (seed, stream).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace miafano
