#pragma once

// Toy 2-D generators, a Gaussian generator, standardization, and CSV I/O.
//
// The toy geometries are reconstructions:
//   checkerboard   4x4 alternating board on [-2,2]^2, uniform in the 8 "on" squares
//   two_moons      interleaving unit half-circles, offsets (1, -0.5), noise 0.1
//   two_circles    concentric radii 1 and 2, radial noise 0.05
//   rose           r = cos(3 theta), arc-length uniform, noise 0.02
//   fractal_tree   7-level binary tree, ratio 0.7, branch angle pi/5, noise 0.01
//   olympic_rings  five unit circles in the ring layout, noise 0.05

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "jkoflow/errors.hpp"
#include "jkoflow/net.hpp"

namespace jko {

/// Samples (rows) with optional integer class labels.
struct Dataset {
  Matrix x;
  std::vector<int> labels;
  std::vector<std::string> columns;

  Eigen::Index size() const { return x.rows(); }
  Eigen::Index dim() const { return x.cols(); }
  bool labeled() const { return !labels.empty(); }
};

struct DatasetSpec {
  std::string name = "checkerboard";
  std::size_t n_samples = 10000;
  std::uint64_t seed = 0;
  std::optional<double> noise;  ///< unset: per-dataset default
  bool labeled = false;
  // csv
  std::string path;
  char delimiter = ',';
  bool has_header = true;
  // gaussian
  int dim = 2;
  std::vector<double> mean;  ///< empty: zeros; one entry: broadcast
  double std = 1.0;

  void validate() const;
  int data_dim() const;
};

inline const std::vector<std::string>& dataset_names() {
  static const std::vector<std::string> names{"checkerboard", "two_moons",     "two_circles", "rose",
                                              "fractal_tree", "olympic_rings", "gaussian",    "csv"};
  return names;
}

inline double default_noise(const std::string& name) {
  if (name == "two_moons") return 0.1;
  if (name == "two_circles") return 0.05;
  if (name == "rose") return 0.02;
  if (name == "fractal_tree") return 0.01;
  if (name == "olympic_rings") return 0.05;
  return 0.0;
}

inline void DatasetSpec::validate() const {
  if (std::find(dataset_names().begin(), dataset_names().end(), name) == dataset_names().end()) {
    throw ConfigError("unknown dataset '" + name + "'");
  }
  if (n_samples < 1) throw ConfigError("dataset: n_samples must be >= 1");
  if (noise && *noise < 0.0) throw ConfigError("dataset: noise must be >= 0");
  if (labeled && name != "two_moons" && name != "two_circles" && name != "olympic_rings" && name != "csv") {
    throw ConfigError("dataset '" + name + "' has no labeled variant");
  }
  if (name == "gaussian") {
    if (dim < 1) throw ConfigError("dataset: gaussian dim must be >= 1");
    if (mean.size() > 1 && static_cast<int>(mean.size()) != dim) {
      throw ConfigError("dataset: gaussian mean must have 1 or dim entries");
    }
    if (!(std > 0.0)) throw ConfigError("dataset: gaussian std must be > 0");
  }
  if (name == "csv" && path.empty()) throw ConfigError("dataset: csv requires a path");
}

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  Matrix values;
  std::vector<std::string> header;
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, delim)) {
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == delim) {
    out.emplace_back();
  }
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_cell(const std::string& raw, std::size_t row, std::size_t col) {
  const std::string s = trim(raw);
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (s.empty() || ec != std::errc() || ptr != last) {
    throw IoError("csv: non-numeric cell '" + s + "' at row " + std::to_string(row) + ", column " +
                  std::to_string(col + 1));
  }
  return v;
}

}  // namespace detail

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

/// Reads a rectangular numeric table. Row numbers in errors are 1-based file
/// lines. Blank lines are skipped.
inline CsvTable load_csv(const std::string& path, char delimiter = ',', bool has_header = true) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("csv: cannot open '" + path + "'");
  }
  CsvTable table;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  bool header_pending = has_header;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_line(line, delimiter);
    if (header_pending) {
      for (auto& c : cells) table.header.push_back(detail::trim(c));
      width = cells.size();
      header_pending = false;
      continue;
    }
    if (width == 0) width = cells.size();
    if (cells.size() != width) {
      throw IoError("csv: ragged row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                    " cells, expected " + std::to_string(width));
    }
    std::vector<double> r;
    r.reserve(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      r.push_back(detail::parse_cell(cells[c], line_no, c));
    }
    rows.push_back(std::move(r));
  }
  table.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      table.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return table;
}

/// Writes `content` to `path` through a temporary file and a rename.
inline void write_file_atomic(const std::string& path, const std::string& content) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(target.parent_path(), ec);
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) throw IoError("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

inline std::string csv_string(const Matrix& values, const std::vector<std::string>& header,
                              const std::vector<int>& labels = {}) {
  std::string out;
  for (std::size_t j = 0; j < header.size(); ++j) {
    out += (j ? "," : "") + header[j];
  }
  if (!labels.empty()) out += header.empty() ? "label" : ",label";
  out += '\n';
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      if (j) out += ',';
      out += format_double(values(i, j));
    }
    if (!labels.empty()) out += "," + std::to_string(labels[static_cast<std::size_t>(i)]);
    out += '\n';
  }
  return out;
}

inline std::vector<std::string> default_columns(Eigen::Index dim) {
  std::vector<std::string> cols;
  for (Eigen::Index j = 0; j < dim; ++j) cols.push_back("x" + std::to_string(j + 1));
  return cols;
}

/// Sample CSV: one row per sample, header x1..xd, optional trailing label.
inline void write_samples_csv(const std::string& path, const Matrix& x, const std::vector<int>& labels = {}) {
  write_file_atomic(path, csv_string(x, default_columns(x.cols()), labels));
}

/// Loads a dataset from CSV; a column named "label" becomes the labels.
inline Dataset load_dataset_csv(const std::string& path, char delimiter = ',', bool has_header = true) {
  CsvTable t = load_csv(path, delimiter, has_header);
  Dataset d;
  Eigen::Index label_col = -1;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    if (t.header[j] == "label") label_col = static_cast<Eigen::Index>(j);
  }
  if (label_col < 0) {
    d.x = std::move(t.values);
    d.columns = t.header.empty() ? default_columns(d.x.cols()) : t.header;
    return d;
  }
  d.x.resize(t.values.rows(), t.values.cols() - 1);
  for (Eigen::Index j = 0, k = 0; j < t.values.cols(); ++j) {
    if (j == label_col) continue;
    d.x.col(k++) = t.values.col(j);
    d.columns.push_back(t.header[static_cast<std::size_t>(j)]);
  }
  for (Eigen::Index i = 0; i < t.values.rows(); ++i) {
    d.labels.push_back(static_cast<int>(std::lround(t.values(i, label_col))));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Generators

namespace detail {

struct Segment {
  Eigen::Vector2d a;
  Eigen::Vector2d b;
};

inline void grow_tree(std::vector<Segment>& out, const Eigen::Vector2d& base, double angle, double length,
                      int depth) {
  if (depth == 0) return;
  const Eigen::Vector2d tip = base + length * Eigen::Vector2d(std::cos(angle), std::sin(angle));
  out.push_back({base, tip});
  constexpr double spread = std::numbers::pi / 5.0;
  grow_tree(out, tip, angle + spread, 0.7 * length, depth - 1);
  grow_tree(out, tip, angle - spread, 0.7 * length, depth - 1);
}

inline const std::vector<Segment>& tree_segments() {
  static const std::vector<Segment> segs = [] {
    std::vector<Segment> s;
    grow_tree(s, Eigen::Vector2d(0.0, -1.5), std::numbers::pi / 2.0, 1.0, 7);
    return s;
  }();
  return segs;
}

inline const std::vector<Eigen::Vector2d>& ring_centers() {
  static const std::vector<Eigen::Vector2d> c{{-2.2, 0.5}, {0.0, 0.5}, {2.2, 0.5}, {-1.1, -0.5}, {1.1, -0.5}};
  return c;
}

}  // namespace detail

/// Points of the fractal tree's segments, for support-membership checks.
inline const auto& fractal_tree_segments() { return detail::tree_segments(); }
inline const auto& olympic_ring_centers() { return detail::ring_centers(); }

/// Draws n i.i.d. samples; deterministic for a fixed generator state.
inline Dataset generate(const DatasetSpec& spec, std::size_t n, std::mt19937_64& rng) {
  spec.validate();
  if (spec.name == "csv") {
    Dataset d = load_dataset_csv(spec.path, spec.delimiter, spec.has_header);
    if (spec.labeled && !d.labeled()) throw ConfigError("dataset: csv has no 'label' column");
    return d;
  }
  const double noise = spec.noise.value_or(default_noise(spec.name));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto rows = static_cast<Eigen::Index>(n);
  Dataset d;
  std::vector<int> labels(n, 0);

  if (spec.name == "gaussian") {
    d.x.resize(rows, spec.dim);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (int j = 0; j < spec.dim; ++j) {
        const double mu = spec.mean.empty() ? 0.0 : spec.mean.size() == 1 ? spec.mean[0] : spec.mean[static_cast<std::size_t>(j)];
        d.x(i, j) = mu + spec.std * gauss(rng);
      }
    }
    d.columns = default_columns(spec.dim);
    return d;
  }

  d.x.resize(rows, 2);
  for (Eigen::Index i = 0; i < rows; ++i) {
    Eigen::Vector2d p;
    int label = 0;
    if (spec.name == "checkerboard") {
      const int cell = static_cast<int>(unif(rng) * 8.0) % 8;
      const int row = cell / 2;
      const int colp = 2 * (cell % 2) + (row % 2);
      p = Eigen::Vector2d(-2.0 + colp + unif(rng), -2.0 + row + unif(rng));
      p += noise * Eigen::Vector2d(gauss(rng), gauss(rng));
    } else if (spec.name == "two_moons") {
      label = unif(rng) < 0.5 ? 0 : 1;
      const double th = std::numbers::pi * unif(rng);
      p = label == 0 ? Eigen::Vector2d(std::cos(th), std::sin(th))
                     : Eigen::Vector2d(1.0 - std::cos(th), 0.5 - std::sin(th));
      p += noise * Eigen::Vector2d(gauss(rng), gauss(rng));
    } else if (spec.name == "two_circles") {
      label = unif(rng) < 0.5 ? 0 : 1;
      const double r = (label == 0 ? 1.0 : 2.0) + noise * gauss(rng);
      const double th = 2.0 * std::numbers::pi * unif(rng);
      p = r * Eigen::Vector2d(std::cos(th), std::sin(th));
    } else if (spec.name == "rose") {
      double th = 0.0;
      // Rejection on the speed |dr/dtheta| of r = cos(3 theta), bounded by 3.
      for (;;) {
        th = std::numbers::pi * unif(rng);
        const double speed = std::sqrt(std::pow(std::cos(3 * th), 2) + 9.0 * std::pow(std::sin(3 * th), 2));
        if (3.0 * unif(rng) <= speed) break;
      }
      const double r = std::cos(3.0 * th);
      p = r * Eigen::Vector2d(std::cos(th), std::sin(th)) + noise * Eigen::Vector2d(gauss(rng), gauss(rng));
    } else if (spec.name == "fractal_tree") {
      const auto& segs = detail::tree_segments();
      static const std::vector<double> cumulative = [&] {
        std::vector<double> c;
        double acc = 0.0;
        for (const auto& s : segs) c.push_back(acc += (s.b - s.a).norm());
        return c;
      }();
      const double u = unif(rng) * cumulative.back();
      const auto idx = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) -
                                                cumulative.begin());
      const auto& s = segs[std::min(idx, segs.size() - 1)];
      p = s.a + unif(rng) * (s.b - s.a) + noise * Eigen::Vector2d(gauss(rng), gauss(rng));
    } else if (spec.name == "olympic_rings") {
      label = static_cast<int>(unif(rng) * 5.0) % 5;
      const double th = 2.0 * std::numbers::pi * unif(rng);
      p = detail::ring_centers()[static_cast<std::size_t>(label)] + Eigen::Vector2d(std::cos(th), std::sin(th)) +
          noise * Eigen::Vector2d(gauss(rng), gauss(rng));
    }
    d.x.row(i) = p.transpose();
    labels[static_cast<std::size_t>(i)] = label;
  }
  if (spec.labeled) d.labels = std::move(labels);
  d.columns = default_columns(2);
  return d;
}

inline Dataset generate(const DatasetSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  return generate(spec, spec.n_samples, rng);
}

inline int DatasetSpec::data_dim() const {
  if (name == "gaussian") return dim;
  if (name == "csv") return static_cast<int>(load_dataset_csv(path, delimiter, has_header).dim());
  return 2;
}

// ---------------------------------------------------------------------------
// Standardization

/// Per-column affine map z = (x - mean) / scale, scale the population std.
struct Standardizer {
  Vector mean;
  Vector scale;
  std::size_t fitted_on = 0;

  static Standardizer identity(Eigen::Index dim) {
    return {Vector::Zero(dim), Vector::Ones(dim), 0};
  }

  Eigen::Index dim() const { return mean.size(); }

  Matrix apply(const Matrix& x) const {
    check(x);
    return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }

  Matrix invert(const Matrix& z) const {
    check(z);
    return (z.array().rowwise() * scale.transpose().array()).matrix().rowwise() + mean.transpose();
  }

  /// log |det d(apply)/dx| = -sum log scale.
  double log_det() const { return -scale.array().log().sum(); }

  bool operator==(const Standardizer& o) const {
    return mean.size() == o.mean.size() && mean == o.mean && scale == o.scale && fitted_on == o.fitted_on;
  }

 private:
  void check(const Matrix& x) const {
    if (x.cols() != mean.size()) {
      throw ConfigError("Standardizer: dimension mismatch (" + std::to_string(x.cols()) + " vs " +
                        std::to_string(mean.size()) + ")");
    }
  }
};

inline Standardizer fit_standardizer(const Matrix& x) {
  if (x.rows() < 2) throw ConfigError("fit_standardizer: need at least 2 samples");
  Standardizer s;
  s.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - s.mean.transpose();
  s.scale = (centered.array().square().colwise().sum() / static_cast<double>(x.rows())).sqrt().transpose();
  for (Eigen::Index j = 0; j < s.scale.size(); ++j) {
    if (!(s.scale[j] > 0.0) || !std::isfinite(s.scale[j])) {
      throw NumericFault("fit_standardizer: column " + std::to_string(j + 1) + " has zero variance");
    }
  }
  s.fitted_on = static_cast<std::size_t>(x.rows());
  return s;
}

}  // namespace jko
