#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "miafano/common.hpp"
#include "miafano/parallel.hpp"

namespace miafano::knn {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

/// Exact Euclidean kd-tree over the rows of a matrix. The matrix must outlive
/// the tree.
class KdTree {
public:
  explicit KdTree(const Matrix& points, std::size_t leaf_size = 16) : points_(&points), leaf_size_(leaf_size) {
    idx_.resize(points.rows);
    std::iota(idx_.begin(), idx_.end(), std::size_t{0});
    nodes_.reserve(2 * points.rows / std::max<std::size_t>(leaf_size_, 1) + 1);
    if (points.rows > 0) build(0, points.rows);
  }

  /// Squared distance from row `i` to its k-th nearest other row.
  [[nodiscard]] double kth_sq_distance(std::size_t i, std::size_t k) const {
    std::vector<double> heap;
    heap.reserve(k + 1);
    search(0, points_->row(i), i, k, heap);
    return heap.front();
  }

private:
  struct Node {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t dim = 0;
    double split = 0.0;
    std::ptrdiff_t left = -1;
    std::ptrdiff_t right = -1;
  };

  std::ptrdiff_t build(std::size_t begin, std::size_t end) {
    const auto id = static_cast<std::ptrdiff_t>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= leaf_size_) return id;

    const std::size_t d = points_->cols;
    std::size_t best_dim = 0;
    double best_spread = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (std::size_t k = begin; k < end; ++k) {
        const double v = (*points_)(idx_[k], j);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > best_spread) {
        best_spread = hi - lo;
        best_dim = j;
      }
    }
    if (best_spread == 0.0) return id;  // all points identical

    const std::size_t mid = begin + (end - begin) / 2;
    auto first = idx_.begin();
    std::nth_element(first + static_cast<std::ptrdiff_t>(begin), first + static_cast<std::ptrdiff_t>(mid),
                     first + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                       return (*points_)(a, best_dim) < (*points_)(b, best_dim);
                     });
    const double split = (*points_)(idx_[mid], best_dim);
    const auto left = build(begin, mid);
    const auto right = build(mid, end);
    auto& node = nodes_[static_cast<std::size_t>(id)];
    node.dim = best_dim;
    node.split = split;
    node.left = left;
    node.right = right;
    return id;
  }

  void search(std::ptrdiff_t id, std::span<const double> q, std::size_t self, std::size_t k,
              std::vector<double>& heap) const {
    const auto& node = nodes_[static_cast<std::size_t>(id)];
    if (node.left < 0) {
      for (std::size_t p = node.begin; p < node.end; ++p) {
        if (idx_[p] == self) continue;
        const double dist = squared_distance(q, points_->row(idx_[p]));
        if (heap.size() < k) {
          heap.push_back(dist);
          std::push_heap(heap.begin(), heap.end());
        } else if (dist < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = dist;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    // Left holds coordinates <= split, right >= split.
    const double diff = q[node.dim] - node.split;
    const auto near = diff < 0.0 ? node.left : node.right;
    const auto far = diff < 0.0 ? node.right : node.left;
    search(near, q, self, k, heap);
    if (heap.size() < k || diff * diff < heap.front()) search(far, q, self, k, heap);
  }

  const Matrix* points_;
  std::size_t leaf_size_;
  std::vector<std::size_t> idx_;
  std::vector<Node> nodes_;
};

/// Dimension above which the kd-tree is replaced by an O(n²) scan.
inline constexpr std::size_t kBruteForceAboveDim = 16;

/// Euclidean distance from every row to its k-th nearest other row (exact).
inline std::vector<double> knn_radius(const Matrix& points, std::size_t k, std::size_t jobs = 1) {
  require(k >= 1, ErrorCode::invalid_argument, "k must be >= 1");
  require(points.rows >= k + 1, ErrorCode::too_few_samples,
          "need at least k+1 = " + std::to_string(k + 1) + " points, got " + std::to_string(points.rows));
  std::vector<double> r(points.rows);
  if (points.cols > kBruteForceAboveDim) {
    parallel_for(points.rows, jobs, [&](std::size_t i) {
      std::vector<double> d;
      d.reserve(points.rows - 1);
      for (std::size_t j = 0; j < points.rows; ++j)
        if (j != i) d.push_back(squared_distance(points.row(i), points.row(j)));
      std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
      r[i] = std::sqrt(d[k - 1]);
    });
  } else {
    KdTree tree(points);
    parallel_for(points.rows, jobs, [&](std::size_t i) { r[i] = std::sqrt(tree.kth_sq_distance(i, k)); });
  }
  return r;
}

}  // namespace miafano::knn
