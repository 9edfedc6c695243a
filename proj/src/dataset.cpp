#include "evnet/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "evnet/parallel.hpp"
#include "evnet/random.hpp"

namespace evnet {
namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
  std::string out(s.substr(b, e - b));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      fields.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return fields;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

bool parse_int(const std::string& s, int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

double squared_distance(const Matrix& x, std::size_t a, std::size_t b) {
  double s = 0.0;
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    const double d = x(a, f) - x(b, f);
    s += d * d;
  }
  return s;
}

// k nearest among `candidates` (excluding `query`), ties to lower index.
std::vector<std::size_t> nearest(const Matrix& x, std::size_t query,
                                 const std::vector<std::size_t>& candidates, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(candidates.size());
  for (std::size_t j : candidates) {
    if (j == query) continue;
    scored.emplace_back(squared_distance(x, query, j), j);
  }
  const std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end());
  std::vector<std::size_t> out(take);
  for (std::size_t t = 0; t < take; ++t) out[t] = scored[t].second;
  return out;
}

}  // namespace

std::string to_string(NormMode mode) { return mode == NormMode::kMinMax ? "minmax" : "zscore"; }

NormMode parse_norm_mode(const std::string& text) {
  if (text == "minmax") return NormMode::kMinMax;
  if (text == "zscore") return NormMode::kZScore;
  fail(ErrorCode::kInvalidArgument, "unknown normalization mode '" + text + "' (expected minmax or zscore)");
}

Dataset parse_csv(const std::string& text, const std::optional<std::string>& label_column,
                  const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_fields(line);
      break;
    }
  }
  if (header.empty()) fail(ErrorCode::kFormat, source + ": missing header row");

  std::optional<std::size_t> label_idx;
  if (label_column) {
    auto it = std::find(header.begin(), header.end(), *label_column);
    if (it == header.end()) {
      fail(ErrorCode::kFormat, source + ": label column '" + *label_column + "' not found in header");
    }
    label_idx = static_cast<std::size_t>(it - header.begin());
  }

  Dataset d;
  if (label_idx) d.label_name = *label_column;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!label_idx || c != *label_idx) d.feature_names.push_back(header[c]);
  }
  const std::size_t n = d.feature_names.size();

  std::vector<double> values;
  std::vector<std::string> raw_labels;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++row;
    auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      fail(ErrorCode::kFormat, source + ": inconsistent row width at row " + std::to_string(row) +
                                   " (line " + std::to_string(line_no) + "): expected " +
                                   std::to_string(header.size()) + " cells, got " +
                                   std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      if (label_idx && c == *label_idx) {
        raw_labels.push_back(fields[c]);
        continue;
      }
      double v = 0.0;
      if (!parse_double(fields[c], v) || !std::isfinite(v)) {
        fail(ErrorCode::kFormat, source + ": non-numeric cell at row " + std::to_string(row) +
                                     ", column '" + header[c] + "' (" + std::to_string(c + 1) +
                                     "): '" + fields[c] + "'");
      }
      values.push_back(v);
    }
  }

  d.features.resize(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < row; ++r) {
    for (std::size_t c = 0; c < n; ++c) d.features(r, c) = values[r * n + c];
  }

  if (label_idx) {
    std::vector<int> labels(raw_labels.size());
    bool all_int = true;
    for (std::size_t i = 0; i < raw_labels.size() && all_int; ++i) {
      all_int = parse_int(raw_labels[i], labels[i]);
    }
    if (!all_int) {
      // Ids follow the sorted order of the distinct strings.
      std::map<std::string, int> ids;
      for (const auto& l : raw_labels) ids.emplace(l, 0);
      int next = 0;
      for (auto& [name, id] : ids) id = next++;
      for (std::size_t i = 0; i < raw_labels.size(); ++i) labels[i] = ids[raw_labels[i]];
    }
    d.labels = std::move(labels);
  }
  return d;
}

Dataset load_csv(const std::string& path, const std::optional<std::string>& label_column) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), label_column, path);
}

std::string to_csv(const Dataset& d) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t c = 0; c < d.cols(); ++c) out << (c ? "," : "") << d.feature_names[c];
  if (d.labels) out << (d.cols() ? "," : "") << (d.label_name.empty() ? "label" : d.label_name);
  out << "\n";
  for (std::size_t r = 0; r < d.rows(); ++r) {
    for (std::size_t c = 0; c < d.cols(); ++c) out << (c ? "," : "") << d.features(r, c);
    if (d.labels) out << (d.cols() ? "," : "") << (*d.labels)[r];
    out << "\n";
  }
  return out.str();
}

void save_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write '" + path + "'");
  out << to_csv(d);
  if (!out) fail(ErrorCode::kIo, "write failed for '" + path + "'");
}

NormalizationStats fit_normalization(const Matrix& x, NormMode mode) {
  require(x.rows() >= 1, "normalize requires at least one row");
  NormalizationStats stats;
  stats.mode = mode;
  const auto n = static_cast<std::size_t>(x.cols());
  stats.offset.assign(n, 0.0);
  stats.scale.assign(n, 0.0);
  for (std::size_t f = 0; f < n; ++f) {
    const auto col = x.col(static_cast<Eigen::Index>(f));
    if (mode == NormMode::kMinMax) {
      const double lo = col.minCoeff();
      const double hi = col.maxCoeff();
      stats.offset[f] = lo;
      stats.scale[f] = hi > lo ? hi - lo : 0.0;
    } else {
      const double mean = col.mean();
      double var = 0.0;
      for (Eigen::Index r = 0; r < x.rows(); ++r) var += (col(r) - mean) * (col(r) - mean);
      var /= static_cast<double>(x.rows());
      stats.offset[f] = mean;
      stats.scale[f] = var > 0.0 ? std::sqrt(var) : 0.0;
    }
  }
  return stats;
}

Matrix apply_normalization(const Matrix& x, const NormalizationStats& stats) {
  require(static_cast<std::size_t>(x.cols()) == stats.offset.size(),
          "normalization statistics cover " + std::to_string(stats.offset.size()) +
              " features, data has " + std::to_string(x.cols()));
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    const double scale = stats.scale[static_cast<std::size_t>(f)];
    const double offset = stats.offset[static_cast<std::size_t>(f)];
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      out(r, f) = scale > 0.0 ? (x(r, f) - offset) / scale : 0.0;
    }
  }
  return out;
}

Dataset apply_normalization(const Dataset& d, const NormalizationStats& stats) {
  Dataset out = d;
  out.features = apply_normalization(d.features, stats);
  out.normalization = stats;
  return out;
}

Dataset normalize(const Dataset& d, NormMode mode) {
  return apply_normalization(d, fit_normalization(d.features, mode));
}

NeighborLists knn_lists(const Matrix& x, std::size_t k, std::size_t threads) {
  const auto m = static_cast<std::size_t>(x.rows());
  require(k >= 1, "kNN requires K >= 1");
  require(k < m, "kNN requires K < M (K=" + std::to_string(k) + ", M=" + std::to_string(m) + ")");
  std::vector<std::size_t> all(m);
  std::iota(all.begin(), all.end(), std::size_t{0});
  NeighborLists lists(m);
  parallel_for(m, threads, [&](std::size_t i) { lists[i] = nearest(x, i, all, k); });
  return lists;
}

Dataset build_knn(const Dataset& d, std::size_t k, bool supervised, std::size_t threads) {
  if (supervised && !d.labels) {
    fail(ErrorCode::kInvalidArgument, "supervised kNN requested but the dataset has no labels");
  }
  Dataset out = d;
  out.neighbors = knn_lists(d.features, k, threads);
  out.knn_k = k;
  out.supervised_neighbors.reset();
  if (supervised) {
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < d.rows(); ++i) groups[(*d.labels)[i]].push_back(i);
    NeighborLists lists(d.rows());
    parallel_for(d.rows(), threads, [&](std::size_t i) {
      lists[i] = nearest(d.features, i, groups.at((*d.labels)[i]), k);
    });
    out.supervised_neighbors = std::move(lists);
  }
  return out;
}

Dataset select_rows(const Dataset& d, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), d.features.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < d.rows(), "row index " + std::to_string(rows[r]) + " out of range");
    out.features.row(static_cast<Eigen::Index>(r)) = d.features.row(static_cast<Eigen::Index>(rows[r]));
  }
  if (d.labels) {
    std::vector<int> labels(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) labels[r] = (*d.labels)[rows[r]];
    out.labels = std::move(labels);
  }
  out.feature_names = d.feature_names;
  out.label_name = d.label_name;
  out.normalization = d.normalization;
  out.noise_features = d.noise_features;
  return out;
}

SplitIndices split_indices(std::size_t rows, const SplitSpec& spec) {
  require(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0, "train_fraction must lie in (0, 1]");
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_stream({tag(StreamTag::kSplit), spec.seed});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(rows)));
  n_train = std::clamp<std::size_t>(n_train, std::min<std::size_t>(1, rows), rows);
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {std::move(train), std::move(test)};
}

std::pair<Dataset, Dataset> split(const Dataset& d, const SplitSpec& spec) {
  const SplitIndices idx = split_indices(d.rows(), spec);
  return {select_rows(d, idx.train), select_rows(d, idx.test)};
}

SyntheticParams parse_synthetic_spec(const std::string& spec) {
  SyntheticParams p;
  const auto colon = spec.find(':');
  const std::string kind = trim(spec.substr(0, colon));
  if (kind == "gaussians") {
    p.kind = SyntheticKind::kGaussians;
  } else if (kind == "noisy_gaussians") {
    p.kind = SyntheticKind::kNoisyGaussians;
    p.noise_features = 6;
  } else if (kind == "swiss_roll") {
    p.kind = SyntheticKind::kSwissRoll;
    p.dim = 3;
  } else {
    fail(ErrorCode::kInvalidArgument,
         "unknown synthetic kind '" + kind + "' (expected gaussians, noisy_gaussians or swiss_roll)");
  }
  if (colon == std::string::npos) return p;
  for (const auto& item : split_fields(spec.substr(colon + 1))) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    require(eq != std::string::npos, "synthetic parameter '" + item + "' is not key=value");
    const std::string key = trim(item.substr(0, eq));
    const std::string value = trim(item.substr(eq + 1));
    double v = 0.0;
    require(parse_double(value, v), "synthetic parameter '" + key + "' has non-numeric value '" + value + "'");
    auto count = [&]() {
      require(v >= 0.0 && v == std::floor(v), "synthetic parameter '" + key + "' must be a non-negative integer");
      return static_cast<std::size_t>(v);
    };
    if (key == "k") p.clusters = count();
    else if (key == "per") p.per_cluster = count();
    else if (key == "dim") p.dim = count();
    else if (key == "sep") p.separation = v;
    else if (key == "sigma") p.sigma = v;
    else if (key == "noise" && p.kind == SyntheticKind::kSwissRoll) p.roll_noise = v;
    else if (key == "noise") p.noise_features = count();
    else if (key == "dup") p.duplicate_columns = count();
    else fail(ErrorCode::kInvalidArgument, "unknown synthetic parameter '" + key + "'");
  }
  return p;
}

std::string to_string(const SyntheticParams& p) {
  std::ostringstream out;
  switch (p.kind) {
    case SyntheticKind::kGaussians: out << "gaussians"; break;
    case SyntheticKind::kNoisyGaussians: out << "noisy_gaussians"; break;
    case SyntheticKind::kSwissRoll: out << "swiss_roll"; break;
  }
  out << ":k=" << p.clusters << ",per=" << p.per_cluster;
  if (p.kind == SyntheticKind::kSwissRoll) {
    out << ",noise=" << p.roll_noise;
  } else {
    out << ",dim=" << p.dim << ",sep=" << p.separation << ",sigma=" << p.sigma;
    if (p.kind == SyntheticKind::kNoisyGaussians) out << ",noise=" << p.noise_features;
    if (p.duplicate_columns) out << ",dup=" << p.duplicate_columns;
  }
  return out.str();
}

namespace {

Matrix gaussian_centers(const SyntheticParams& p, SplitMix64& rng) {
  const auto k = static_cast<Eigen::Index>(p.clusters);
  const auto dim = static_cast<Eigen::Index>(p.dim);
  const double min_dist = p.separation * p.sigma;
  Matrix centers(k, dim);
  // Rejection sampling in a box that comfortably fits k separated points.
  const double side = min_dist * std::max(2.0, 2.0 * std::pow(static_cast<double>(k), 1.0 / static_cast<double>(dim)));
  for (Eigen::Index c = 0; c < k; ++c) {
    for (int attempt = 0;; ++attempt) {
      for (Eigen::Index f = 0; f < dim; ++f) centers(c, f) = rng.uniform(0.0, side);
      bool ok = true;
      for (Eigen::Index o = 0; o < c && ok; ++o) ok = (centers.row(c) - centers.row(o)).norm() >= min_dist;
      if (ok) break;
      if (attempt > 100000) {
        fail(ErrorCode::kInvalidArgument, "cannot place " + std::to_string(k) + " centers with separation " +
                                              std::to_string(p.separation));
      }
    }
  }
  return centers;
}

}  // namespace

Dataset make_synthetic(const SyntheticParams& p, std::uint64_t seed) {
  require(p.clusters >= 1, "synthetic data needs at least one cluster");
  require(p.per_cluster >= 1, "synthetic data needs at least one point per cluster");
  require(p.sigma > 0.0, "synthetic sigma must be positive");
  auto rng = make_stream({tag(StreamTag::kSynthetic), seed});
  const std::size_t m = p.clusters * p.per_cluster;
  Dataset d;
  std::vector<int> labels(m);

  if (p.kind == SyntheticKind::kSwissRoll) {
    d.features.resize(static_cast<Eigen::Index>(m), 3);
    // Points drawn along the roll, labels are equal-width bins of the angle.
    for (std::size_t i = 0; i < m; ++i) {
      const double u = rng.uniform();
      const double t = 1.5 * std::numbers::pi * (1.0 + 2.0 * u);
      const double h = rng.uniform(0.0, 21.0);
      d.features(static_cast<Eigen::Index>(i), 0) = t * std::cos(t) + p.roll_noise * rng.normal();
      d.features(static_cast<Eigen::Index>(i), 1) = h + p.roll_noise * rng.normal();
      d.features(static_cast<Eigen::Index>(i), 2) = t * std::sin(t) + p.roll_noise * rng.normal();
      labels[i] = std::min(static_cast<int>(u * static_cast<double>(p.clusters)), static_cast<int>(p.clusters) - 1);
    }
    d.feature_names = {"x0", "x1", "x2"};
  } else {
    require(p.dim >= 1, "synthetic gaussians need dim >= 1");
    require(p.duplicate_columns <= p.dim, "dup cannot exceed dim");
    const Matrix centers = gaussian_centers(p, rng);
    const std::size_t informative = p.dim;
    const std::size_t noise = p.kind == SyntheticKind::kNoisyGaussians ? p.noise_features : 0;
    const std::size_t n = informative + p.duplicate_columns + noise;
    d.features.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    for (std::size_t c = 0; c < p.clusters; ++c) {
      for (std::size_t j = 0; j < p.per_cluster; ++j) {
        const std::size_t i = c * p.per_cluster + j;
        labels[i] = static_cast<int>(c);
        for (std::size_t f = 0; f < informative; ++f) {
          d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)) =
              centers(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(f)) + p.sigma * rng.normal();
        }
      }
    }
    for (std::size_t f = 0; f < p.duplicate_columns; ++f) {
      d.features.col(static_cast<Eigen::Index>(informative + f)) = d.features.col(static_cast<Eigen::Index>(f));
    }
    if (noise > 0) {
      // Uniform noise over the overall range of the informative block.
      const auto block = d.features.leftCols(static_cast<Eigen::Index>(informative));
      const double lo = block.minCoeff();
      const double hi = block.maxCoeff();
      const std::size_t first_noise = informative + p.duplicate_columns;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t f = first_noise; f < n; ++f) {
          d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)) = rng.uniform(lo, hi);
        }
      }
      for (std::size_t f = first_noise; f < n; ++f) d.noise_features.push_back(f);
    }
    for (std::size_t f = 0; f < n; ++f) {
      std::string name = "f" + std::to_string(f);
      if (f >= informative && f < informative + p.duplicate_columns) name += "_dup";
      if (f >= informative + p.duplicate_columns) name = "noise" + std::to_string(f - informative - p.duplicate_columns);
      d.feature_names.push_back(std::move(name));
    }
  }
  d.labels = std::move(labels);
  d.label_name = "label";
  return d;
}

}  // namespace evnet
