#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "miafano/common.hpp"

namespace miafano::data {

/// Feature matrix with class labels and stable row ids.
struct LabeledDataset {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::int64_t> ids;
  int num_classes = 0;

  [[nodiscard]] std::size_t size() const { return features.rows; }
  [[nodiscard]] std::size_t dim() const { return features.cols; }

  void validate() const {
    require(features.rows >= 1 && features.cols >= 1, ErrorCode::invalid_argument, "dataset must have n >= 1 and d >= 1");
    require(labels.size() == features.rows && ids.size() == features.rows, ErrorCode::dimension_mismatch,
            "labels/ids length differs from row count");
    require(num_classes >= 1, ErrorCode::invalid_argument, "num_classes must be positive");
    for (int l : labels)
      require(l >= 0 && l < num_classes, ErrorCode::invalid_argument, "label " + std::to_string(l) + " out of range");
    for (double v : features.data) require(std::isfinite(v), ErrorCode::invalid_argument, "non-finite feature value");
    std::unordered_set<std::int64_t> seen(ids.begin(), ids.end());
    require(seen.size() == ids.size(), ErrorCode::invalid_argument, "row ids are not unique");
  }

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

/// Training-member designation over a pool of ids. Both id lists are sorted.
struct MembershipSplit {
  std::vector<std::int64_t> member_ids;
  std::vector<std::int64_t> pool_ids;

  [[nodiscard]] bool is_member(std::int64_t id) const {
    return std::binary_search(member_ids.begin(), member_ids.end(), id);
  }

  /// Ground-truth membership vector, one entry per pool id in pool order.
  [[nodiscard]] std::vector<std::uint8_t> ground_truth() const {
    std::vector<std::uint8_t> out;
    out.reserve(pool_ids.size());
    for (auto id : pool_ids) out.push_back(is_member(id) ? 1 : 0);
    return out;
  }

  friend bool operator==(const MembershipSplit&, const MembershipSplit&) = default;
};

/// Gaussian blobs, one per class. Class means sit on the unit circle spanned by
/// the first two coordinates at equal angular spacing (zeros elsewhere), so the
/// seed only drives the noise: different seeds are independent draws from the
/// same population.
inline LabeledDataset synth_blobs(int num_classes, int per_class, int d, double spread, std::uint64_t seed) {
  require(num_classes >= 2, ErrorCode::invalid_argument, "synth_blobs needs num_classes >= 2");
  require(per_class >= 1, ErrorCode::invalid_argument, "synth_blobs needs per_class >= 1");
  require(d >= 1, ErrorCode::invalid_argument, "synth_blobs needs d >= 1");
  require(std::isfinite(spread) && spread > 0.0, ErrorCode::invalid_argument, "synth_blobs needs a finite spread > 0");

  const auto n = static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(per_class);
  LabeledDataset ds;
  ds.features = Matrix(n, static_cast<std::size_t>(d));
  ds.labels.resize(n);
  ds.ids.resize(n);
  ds.num_classes = num_classes;

  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, spread);
  std::size_t r = 0;
  for (int c = 0; c < num_classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * c / num_classes;
    for (int j = 0; j < per_class; ++j, ++r) {
      auto row = ds.features.row(r);
      for (int k = 0; k < d; ++k) row[k] = noise(rng);
      row[0] += std::cos(angle);
      if (d >= 2) row[1] += std::sin(angle);
      ds.labels[r] = c;
      ds.ids[r] = static_cast<std::int64_t>(r);
    }
  }
  return ds;
}

/// Rows whose ids appear in `ids`, in dataset order. Ids are preserved.
inline LabeledDataset subset(const LabeledDataset& ds, const std::vector<std::int64_t>& ids) {
  std::unordered_set<std::int64_t> want(ids.begin(), ids.end());
  LabeledDataset out;
  out.num_classes = ds.num_classes;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (want.contains(ds.ids[i])) rows.push_back(i);
  require(rows.size() == want.size(), ErrorCode::invalid_argument, "subset references ids not in the dataset");
  out.features = Matrix(rows.size(), ds.dim());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto src = ds.features.row(rows[k]);
    std::copy(src.begin(), src.end(), out.features.row(k).begin());
    out.labels.push_back(ds.labels[rows[k]]);
    out.ids.push_back(ds.ids[rows[k]]);
  }
  return out;
}

/// Row indices of the given ids, in the order of `ids`.
inline std::vector<std::size_t> rows_of(const LabeledDataset& ds, const std::vector<std::int64_t>& ids) {
  std::unordered_map<std::int64_t, std::size_t> where;
  for (std::size_t i = 0; i < ds.size(); ++i) where.emplace(ds.ids[i], i);
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    auto it = where.find(id);
    require(it != where.end(), ErrorCode::invalid_argument, "id " + std::to_string(id) + " not in dataset");
    out.push_back(it->second);
  }
  return out;
}

/// Stratified draw of round(member_fraction * n) members. Per-class quotas use
/// largest-remainder rounding so each class is within one example of exact
/// proportionality.
inline MembershipSplit split_membership(const LabeledDataset& ds, double member_fraction, std::uint64_t seed) {
  require(ds.size() >= 1, ErrorCode::invalid_argument, "split_membership on an empty dataset");
  require(member_fraction > 0.0 && member_fraction < 1.0, ErrorCode::invalid_argument,
          "member fraction must lie in (0, 1)");

  const std::size_t n = ds.size();
  const auto total = static_cast<std::size_t>(std::llround(member_fraction * static_cast<double>(n)));

  std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(ds.ids[i]);

  std::vector<std::size_t> quota(by_class.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const double exact = static_cast<double>(total) * static_cast<double>(by_class[c].size()) / static_cast<double>(n);
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++quota[remainders[k % remainders.size()].second];

  Rng rng(seed);
  MembershipSplit split;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& pool = by_class[c];
    std::shuffle(pool.begin(), pool.end(), rng);
    split.member_ids.insert(split.member_ids.end(), pool.begin(),
                            pool.begin() + static_cast<std::ptrdiff_t>(std::min(quota[c], pool.size())));
  }
  std::sort(split.member_ids.begin(), split.member_ids.end());
  split.pool_ids = ds.ids;
  std::sort(split.pool_ids.begin(), split.pool_ids.end());
  return split;
}

namespace detail {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  require(!lines.empty(), ErrorCode::parse, "'" + path + "' has no header row");
  return lines;
}

}  // namespace detail

/// Shortest round-trip text form of a double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

/// A purely numeric table, used for entropy/MI input files.
struct NumericTable {
  std::vector<std::string> columns;
  Matrix values;

  /// Columns selected by name, in the given order.
  [[nodiscard]] Matrix select(const std::vector<std::string>& names) const {
    std::vector<std::size_t> idx;
    for (const auto& name : names) {
      auto it = std::find(columns.begin(), columns.end(), name);
      require(it != columns.end(), ErrorCode::unknown_column, "unknown column '" + name + "'");
      idx.push_back(static_cast<std::size_t>(it - columns.begin()));
    }
    Matrix out(values.rows, idx.size());
    for (std::size_t r = 0; r < values.rows; ++r)
      for (std::size_t c = 0; c < idx.size(); ++c) out(r, c) = values(r, idx[c]);
    return out;
  }
};

inline NumericTable load_table(const std::string& path) {
  auto lines = detail::read_lines(path);
  NumericTable t;
  for (auto& h : detail::split_line(lines[0])) t.columns.push_back(detail::trim(h));
  require(!t.columns.empty(), ErrorCode::parse, "'" + path + "' has an empty header");
  t.values = Matrix(lines.size() - 1, t.columns.size());
  for (std::size_t r = 1; r < lines.size(); ++r) {
    auto cells = detail::split_line(lines[r]);
    require(cells.size() == t.columns.size(), ErrorCode::parse,
            path + ": line " + std::to_string(r + 1) + " has " + std::to_string(cells.size()) + " cells, expected " +
                std::to_string(t.columns.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      auto cell = detail::trim(cells[c]);
      require(detail::parse_double(cell, t.values(r - 1, c)), ErrorCode::parse,
              path + ": line " + std::to_string(r + 1) + ", column '" + t.columns[c] + "': '" + cell +
                  "' is not numeric");
    }
  }
  return t;
}

/// Reads a labeled CSV. Rows keep file order and get ids 0..n-1; the label
/// column must hold non-negative integers and num_classes is max label + 1.
inline LabeledDataset load_csv(const std::string& path, const std::string& label_column = "label") {
  auto lines = detail::read_lines(path);
  std::vector<std::string> header;
  for (auto& h : detail::split_line(lines[0])) header.push_back(detail::trim(h));
  auto label_it = std::find(header.begin(), header.end(), label_column);
  require(label_it != header.end(), ErrorCode::unknown_column,
          path + ": label column '" + label_column + "' not found in header");
  const auto label_idx = static_cast<std::size_t>(label_it - header.begin());
  require(header.size() >= 2, ErrorCode::parse, path + ": no feature columns");

  LabeledDataset ds;
  const std::size_t n = lines.size() - 1;
  ds.features = Matrix(n, header.size() - 1);
  ds.labels.resize(n);
  ds.ids.resize(n);
  int max_label = -1;
  for (std::size_t r = 0; r < n; ++r) {
    auto cells = detail::split_line(lines[r + 1]);
    const std::string where = path + ": line " + std::to_string(r + 2);
    require(cells.size() == header.size(), ErrorCode::parse,
            where + " has " + std::to_string(cells.size()) + " cells, expected " + std::to_string(header.size()));
    std::size_t out_col = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      auto cell = detail::trim(cells[c]);
      if (c == label_idx) {
        int label = -1;
        auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), label);
        require(ec == std::errc() && ptr == cell.data() + cell.size() && label >= 0, ErrorCode::parse,
                where + ", column '" + header[c] + "': '" + cell + "' is not a non-negative integer label");
        ds.labels[r] = label;
        max_label = std::max(max_label, label);
      } else {
        require(detail::parse_double(cell, ds.features(r, out_col)), ErrorCode::parse,
                where + ", column '" + header[c] + "': '" + cell + "' is not numeric");
        ++out_col;
      }
    }
    ds.ids[r] = static_cast<std::int64_t>(r);
  }
  require(n >= 1, ErrorCode::parse, path + ": no data rows");
  ds.num_classes = max_label + 1;
  return ds;
}

/// Writes features as f0..f{d-1} followed by the label column. Ids are not
/// stored; they are reassigned 0..n-1 on load.
inline void save_csv(const LabeledDataset& ds, const std::string& path, const std::string& label_column = "label") {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write '" + path + "'");
  for (std::size_t c = 0; c < ds.dim(); ++c) out << 'f' << c << ',';
  out << label_column << '\n';
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (double v : ds.features.row(r)) out << format_double(v) << ',';
    out << ds.labels[r] << '\n';
  }
}

}  // namespace miafano::data
