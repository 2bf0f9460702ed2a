#pragma once

// Tabular preparation: CSV ingest with a missing-cell mask, KNN imputation,
// PCA, min-max scaling, train/test split and the FDSC binary dataset format.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "feddisc/bytes.hpp"
#include "feddisc/error.hpp"
#include "feddisc/nn.hpp"
#include "feddisc/rng.hpp"

namespace feddisc {

// --- CSV --------------------------------------------------------------------

struct CsvOptions {
  std::vector<std::string> missing_tokens{"",    "NaN",  "nan",  "NAN",      "inf",      "-inf",
                                          "Inf", "-Inf", "INF", "-INF", "Infinity", "-Infinity"};
  /// Header name of the marker column, or its zero-based index as digits.
  std::string marker_column = "marker";
  std::vector<std::string> natural_markers{"Natural", "NoEvents", "0"};
  std::vector<std::string> attack_markers{"Attack", "1"};
  char delimiter = ',';
};

struct RawTable {
  std::vector<std::string> columns;  ///< feature column names, marker excluded
  std::vector<double> values;        ///< row-major, NaN where missing
  std::vector<std::uint8_t> missing;
  std::vector<Label> labels;
  std::uint16_t source_file = 0;
  std::string source_name;

  std::size_t rows() const { return labels.size(); }
  std::size_t cols() const { return columns.size(); }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  bool is_missing(std::size_t r, std::size_t c) const { return missing[r * cols() + c] != 0; }
  std::size_t missing_count() const {
    return static_cast<std::size_t>(std::count(missing.begin(), missing.end(), std::uint8_t{1}));
  }
  std::vector<double> row(std::size_t r) const {
    return {values.begin() + static_cast<std::ptrdiff_t>(r * cols()),
            values.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols())};
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(delim, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool contains(const std::vector<std::string>& v, std::string_view s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace detail

inline RawTable parse_csv(std::istream& in, const CsvOptions& opt = {}, std::uint16_t source_file = 0,
                          std::string source_name = {}) {
  RawTable t;
  t.source_file = source_file;
  t.source_name = std::move(source_name);
  std::string line;
  if (!std::getline(in, line)) throw DataError(t.source_name + ": missing header row");
  const auto header = detail::split_fields(line, opt.delimiter);

  std::size_t marker = header.size();
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == opt.marker_column) marker = i;
  if (marker == header.size()) {
    const auto& mc = opt.marker_column;
    if (!mc.empty() && std::all_of(mc.begin(), mc.end(), [](char c) { return c >= '0' && c <= '9'; }))
      marker = std::stoul(mc);
    if (marker >= header.size())
      throw DataError(t.source_name + ": marker column '" + opt.marker_column + "' not found");
  }
  for (std::size_t i = 0; i < header.size(); ++i)
    if (i != marker) t.columns.emplace_back(header[i]);

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line, opt.delimiter);
    if (fields.size() != header.size())
      throw DataError(t.source_name + ": row at line " + std::to_string(line_no) + " has " +
                      std::to_string(fields.size()) + " fields, header has " +
                      std::to_string(header.size()));
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const auto f = fields[i];
      if (i == marker) {
        if (detail::contains(opt.natural_markers, f))
          t.labels.push_back(Label::Natural);
        else if (detail::contains(opt.attack_markers, f))
          t.labels.push_back(Label::Attack);
        else
          throw DataError(t.source_name + ": unknown marker value '" + std::string(f) + "' at line " +
                          std::to_string(line_no));
        continue;
      }
      double v = std::numeric_limits<double>::quiet_NaN();
      bool miss = detail::contains(opt.missing_tokens, f);
      if (!miss) {
        const auto* first = f.data();
        if (!f.empty() && *first == '+') ++first;
        const auto res = std::from_chars(first, f.data() + f.size(), v);
        if (res.ec != std::errc{} || res.ptr != f.data() + f.size())
          throw DataError(t.source_name + ": line " + std::to_string(line_no) + " column '" +
                          std::string(header[i]) + "': not a number: '" + std::string(f) + "'");
        if (!std::isfinite(v)) {
          miss = true;
          v = std::numeric_limits<double>::quiet_NaN();
        }
      }
      t.values.push_back(v);
      t.missing.push_back(miss ? 1 : 0);
    }
  }
  return t;
}

inline RawTable load_csv(const std::filesystem::path& path, const CsvOptions& opt = {},
                         std::uint16_t source_file = 0) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_csv(in, opt, source_file, path.filename().string());
}

// --- KNN imputation ---------------------------------------------------------

namespace detail {

/// Euclidean distance over coordinates observed in both rows, rescaled by
/// total/shared coordinate count. Infinity when nothing is shared.
inline double masked_distance(const RawTable& t, std::size_t a, std::size_t b) {
  double acc = 0.0;
  std::size_t shared = 0;
  for (std::size_t c = 0; c < t.cols(); ++c) {
    if (t.is_missing(a, c) || t.is_missing(b, c)) continue;
    const double d = t.at(a, c) - t.at(b, c);
    acc += d * d;
    ++shared;
  }
  if (shared == 0) return std::numeric_limits<double>::infinity();
  return std::sqrt(acc * static_cast<double>(t.cols()) / static_cast<double>(shared));
}

}  // namespace detail

/// Fills each missing cell with the inverse-distance weighted mean of that
/// feature over the k nearest rows that observe it. Donors at distance zero
/// take all the weight. Distances use only originally observed values.
inline RawTable knn_impute(const RawTable& table, std::size_t k = 5) {
  if (k == 0) throw UsageError("knn_impute: k must be >= 1");
  RawTable out = table;
  if (table.missing_count() == 0) return out;

  const std::size_t n = table.rows(), d = table.cols();
  std::vector<std::size_t> observed(d, 0);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t row_obs = 0;
    for (std::size_t c = 0; c < d; ++c)
      if (!table.is_missing(r, c)) {
        ++observed[c];
        ++row_obs;
      }
    if (row_obs == 0) throw DataError("knn_impute: row " + std::to_string(r) + " has no observed feature");
  }
  for (std::size_t c = 0; c < d; ++c)
    if (observed[c] == 0) throw DataError("knn_impute: column '" + table.columns[c] + "' is unimputable (missing in every row)");

  std::vector<double> dist(n);
  std::vector<std::size_t> donors;
  for (std::size_t r = 0; r < n; ++r) {
    bool any = false;
    for (std::size_t c = 0; c < d && !any; ++c) any = table.is_missing(r, c);
    if (!any) continue;
    for (std::size_t o = 0; o < n; ++o)
      dist[o] = o == r ? std::numeric_limits<double>::infinity() : detail::masked_distance(table, r, o);

    for (std::size_t c = 0; c < d; ++c) {
      if (!table.is_missing(r, c)) continue;
      donors.clear();
      for (std::size_t o = 0; o < n; ++o)
        if (o != r && !table.is_missing(o, c) && std::isfinite(dist[o])) donors.push_back(o);
      double value = 0.0;
      if (donors.empty()) {
        // No row shares a coordinate with r: fall back to the column mean.
        std::size_t cnt = 0;
        for (std::size_t o = 0; o < n; ++o)
          if (!table.is_missing(o, c)) {
            value += table.at(o, c);
            ++cnt;
          }
        value /= static_cast<double>(cnt);
      } else {
        const std::size_t take = std::min(k, donors.size());
        auto closer = [&](std::size_t a, std::size_t b) {
          return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
        };
        std::partial_sort(donors.begin(), donors.begin() + static_cast<std::ptrdiff_t>(take),
                          donors.end(), closer);
        double wsum = 0.0, acc = 0.0;
        if (dist[donors[0]] == 0.0) {
          for (std::size_t i = 0; i < take && dist[donors[i]] == 0.0; ++i) {
            acc += table.at(donors[i], c);
            wsum += 1.0;
          }
        } else {
          for (std::size_t i = 0; i < take; ++i) {
            const double w = 1.0 / dist[donors[i]];
            acc += w * table.at(donors[i], c);
            wsum += w;
          }
        }
        value = acc / wsum;
      }
      out.values[r * d + c] = value;
    }
  }
  std::fill(out.missing.begin(), out.missing.end(), std::uint8_t{0});
  return out;
}

// --- PCA --------------------------------------------------------------------

struct PcaBasis {
  std::vector<double> mean;
  Rows components;  ///< components[j] is the j-th unit principal axis (length d)
  std::vector<double> explained_variance;

  std::size_t input_dim() const { return mean.size(); }
  std::size_t output_dim() const { return components.size(); }
};

/// Eigendecomposition of the sample covariance (n-1 denominator) of the
/// centred rows. Axes are sorted by decreasing variance and each axis is
/// signed so its largest-magnitude coordinate is positive.
inline PcaBasis fit_pca(const Rows& train, std::size_t p) {
  if (train.size() < 2) throw DataError("fit_pca: need at least 2 rows");
  const std::size_t d = train.front().size();
  if (p == 0 || p > d)
    throw DataError("fit_pca: requested " + std::to_string(p) + " components from " +
                    std::to_string(d) + " features");
  const auto n = static_cast<Eigen::Index>(train.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(d));
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = train[static_cast<std::size_t>(r)];
    if (row.size() != d) throw DataError("fit_pca: ragged rows");
    for (std::size_t c = 0; c < d; ++c) x(r, static_cast<Eigen::Index>(c)) = row[c];
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw NumericError("fit_pca: eigendecomposition failed");

  PcaBasis b;
  b.mean.assign(mu.data(), mu.data() + d);
  const auto& vals = es.eigenvalues();
  const auto& vecs = es.eigenvectors();
  for (std::size_t j = 0; j < p; ++j) {
    const auto col = static_cast<Eigen::Index>(d - 1 - j);  // ascending order from Eigen
    std::vector<double> axis(d);
    std::size_t big = 0;
    for (std::size_t c = 0; c < d; ++c) {
      axis[c] = vecs(static_cast<Eigen::Index>(c), col);
      if (std::abs(axis[c]) > std::abs(axis[big])) big = c;
    }
    if (axis[big] < 0.0)
      for (double& v : axis) v = -v;
    b.components.push_back(std::move(axis));
    b.explained_variance.push_back(std::max(0.0, vals(col)));
  }
  return b;
}

inline std::vector<double> project(const PcaBasis& b, std::span<const double> x) {
  if (x.size() != b.input_dim()) throw DataError("project: width mismatch");
  std::vector<double> y(b.output_dim(), 0.0);
  for (std::size_t j = 0; j < y.size(); ++j)
    for (std::size_t c = 0; c < x.size(); ++c) y[j] += b.components[j][c] * (x[c] - b.mean[c]);
  return y;
}

/// Maps a projection back into the input space.
inline std::vector<double> unproject(const PcaBasis& b, std::span<const double> y) {
  std::vector<double> x = b.mean;
  for (std::size_t j = 0; j < y.size(); ++j)
    for (std::size_t c = 0; c < x.size(); ++c) x[c] += b.components[j][c] * y[j];
  return x;
}

// --- Min-max scaling --------------------------------------------------------

struct ScalerParams {
  std::vector<double> min;
  std::vector<double> max;
};

inline ScalerParams fit_scaler(const Rows& train) {
  if (train.empty()) throw DataError("fit_scaler: no rows");
  ScalerParams s{train.front(), train.front()};
  for (const auto& row : train) {
    if (row.size() != s.min.size()) throw DataError("fit_scaler: ragged rows");
    for (std::size_t c = 0; c < row.size(); ++c) {
      s.min[c] = std::min(s.min[c], row[c]);
      s.max[c] = std::max(s.max[c], row[c]);
    }
  }
  return s;
}

/// (x - min) / (max - min) clamped to [0, 1]; constant features map to 0.5.
inline std::vector<double> scale(const ScalerParams& s, std::span<const double> x) {
  if (x.size() != s.min.size()) throw DataError("scale: width mismatch");
  std::vector<double> y(x.size());
  for (std::size_t c = 0; c < x.size(); ++c) {
    const double range = s.max[c] - s.min[c];
    y[c] = range > 0.0 ? std::clamp((x[c] - s.min[c]) / range, 0.0, 1.0) : 0.5;
  }
  return y;
}

// --- Train/test split -------------------------------------------------------

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Test size is round(n * fraction), per class when stratified.
inline SplitIndices split(std::span<const Label> labels, double test_fraction, std::uint64_t seed,
                          bool stratified) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw UsageError("split: test fraction must lie in (0,1)");
  Engine eng(seed);
  SplitIndices out;
  auto take = [&](std::vector<std::size_t> idx) {
    std::shuffle(idx.begin(), idx.end(), eng);
    const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(idx.size()) * test_fraction));
    out.test.insert(out.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    out.train.insert(out.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  };
  if (stratified) {
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    for (std::size_t c = 0; c < 2; ++c)
      if (by_class[c].size() == 1)
        throw DataError(std::string("split: class ") + (c ? "Attack" : "Natural") +
                        " has a single sample, cannot stratify");
    for (auto& members : by_class)
      if (!members.empty()) take(std::move(members));
  } else {
    std::vector<std::size_t> idx(labels.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    take(std::move(idx));
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

// --- Binary dataset file ----------------------------------------------------
//
// "FDSC", version u16, d u32, n u64, then per row: d little-endian f64
// followed by one flag byte. Flag bit 0: Attack label. Bit 1: row belongs to
// the test split. Bits 2-7: source file index (0..63).

inline constexpr std::uint16_t kDatasetVersion = 1;

struct Dataset {
  std::size_t dim = 0;
  std::vector<Sample> samples;
  std::vector<std::uint8_t> is_test;

  std::vector<Sample> train() const { return pick(false); }
  std::vector<Sample> test() const { return pick(true); }

 private:
  std::vector<Sample> pick(bool test) const {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if ((is_test[i] != 0) == test) out.push_back(samples[i]);
    return out;
  }
};

inline std::vector<std::uint8_t> encode(const Dataset& ds) {
  std::vector<std::uint8_t> out;
  bytes::put_raw(out, "FDSC");
  bytes::put<std::uint16_t>(out, kDatasetVersion);
  bytes::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.dim));
  bytes::put<std::uint64_t>(out, ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    if (s.features.size() != ds.dim) throw DataError("dataset: ragged rows");
    if (s.source > 63) throw DataError("dataset: source index above 63");
    for (double v : s.features) bytes::put<double>(out, v);
    const auto flags = static_cast<std::uint8_t>(static_cast<unsigned>(s.label) |
                                                 (ds.is_test[i] ? 2u : 0u) | (unsigned{s.source} << 2));
    bytes::put<std::uint8_t>(out, flags);
  }
  return out;
}

inline Dataset decode_dataset(std::span<const std::uint8_t> buf) {
  bytes::Reader r(buf, "dataset");
  const auto magic = r.take(4);
  if (std::string_view(reinterpret_cast<const char*>(magic.data()), 4) != "FDSC")
    throw DataError("dataset: bad magic");
  if (r.get<std::uint16_t>() != kDatasetVersion) throw DataError("dataset: unsupported version");
  Dataset ds;
  ds.dim = r.get<std::uint32_t>();
  const auto n = r.get<std::uint64_t>();
  if (r.remaining() != n * (8 * ds.dim + 1)) throw DataError("dataset: size does not match header");
  ds.samples.resize(n);
  ds.is_test.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = ds.samples[i];
    s.features.resize(ds.dim);
    for (auto& v : s.features) v = r.get<double>();
    const auto flags = r.get<std::uint8_t>();
    s.label = (flags & 1u) ? Label::Attack : Label::Natural;
    ds.is_test[i] = (flags >> 1) & 1u;
    s.source = static_cast<std::uint16_t>(flags >> 2);
  }
  return ds;
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  bytes::write_file_atomic(path, encode(ds));
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  return decode_dataset(bytes::read_file(path));
}

// --- Pipeline ---------------------------------------------------------------

struct PrepOptions {
  std::size_t k_impute = 5;
  std::size_t pca_p = 100;
  double test_fraction = 0.3;
  bool stratified = true;
  std::uint64_t seed = 1;
};

struct PreparedData {
  Dataset dataset;
  PcaBasis basis;
  ScalerParams scaler;
};

/// impute (per table) -> split -> PCA fit on train -> scaler fit on projected
/// train -> transform every row.
inline PreparedData prepare(const std::vector<RawTable>& tables, const PrepOptions& opt) {
  if (tables.empty()) throw DataError("prepare: no input tables");
  const std::size_t d = tables.front().cols();
  Rows x;
  std::vector<Label> labels;
  std::vector<std::uint16_t> sources;
  for (const auto& t : tables) {
    if (t.cols() != d)
      throw DataError("prepare: " + t.source_name + " has " + std::to_string(t.cols()) +
                      " features, expected " + std::to_string(d));
    const RawTable filled = knn_impute(t, opt.k_impute);
    for (std::size_t r = 0; r < filled.rows(); ++r) {
      x.push_back(filled.row(r));
      labels.push_back(filled.labels[r]);
      sources.push_back(filled.source_file);
    }
  }
  const auto idx = split(labels, opt.test_fraction, opt.seed, opt.stratified);
  if (idx.train.size() < 2) throw DataError("prepare: training split has fewer than 2 rows");

  Rows train;
  for (auto i : idx.train) train.push_back(x[i]);
  PreparedData out;
  out.basis = fit_pca(train, std::min(opt.pca_p, d));
  Rows projected(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) projected[i] = project(out.basis, x[i]);
  Rows projected_train;
  for (auto i : idx.train) projected_train.push_back(projected[i]);
  out.scaler = fit_scaler(projected_train);

  auto& ds = out.dataset;
  ds.dim = out.basis.output_dim();
  ds.samples.resize(x.size());
  ds.is_test.assign(x.size(), 0);
  for (auto i : idx.test) ds.is_test[i] = 1;
  for (std::size_t i = 0; i < x.size(); ++i)
    ds.samples[i] = Sample{scale(out.scaler, projected[i]), labels[i], sources[i]};
  return out;
}

/// Fingerprint of a fitted basis and scaler.
inline std::uint64_t basis_hash(const PcaBasis& b, const ScalerParams& s) {
  std::uint64_t h = fnv1a64(b.mean.data(), b.mean.size() * sizeof(double));
  for (const auto& c : b.components) h = fnv1a64(c.data(), c.size() * sizeof(double), h);
  h = fnv1a64(s.min.data(), s.min.size() * sizeof(double), h);
  return fnv1a64(s.max.data(), s.max.size() * sizeof(double), h);
}

}  // namespace feddisc
