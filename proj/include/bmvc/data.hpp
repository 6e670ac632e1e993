#pragma once

#include "bmvc/matrix.hpp"
#include "bmvc/parallel.hpp"
#include "bmvc/rng.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace bmvc {

// M feature matrices over the same N samples plus optional ground-truth
// labels. `names` are the per-view file names used on disk.
struct ViewDataset {
  std::vector<Matrix> views;
  std::vector<std::string> names;
  std::vector<int> labels;

  int view_count() const { return static_cast<int>(views.size()); }
  int samples() const { return views.empty() ? 0 : static_cast<int>(views[0].rows()); }
  bool has_labels() const { return !labels.empty(); }

  void validate() const {
    if (views.empty()) throw std::invalid_argument("dataset: need at least one view");
    for (size_t r = 1; r < views.size(); ++r) {
      if (views[r].rows() != views[0].rows()) {
        throw std::invalid_argument("dataset: view row counts differ (" +
                                    std::to_string(views[0].rows()) + " vs " +
                                    std::to_string(views[r].rows()) + ")");
      }
    }
    if (has_labels() && static_cast<Eigen::Index>(labels.size()) != views[0].rows()) {
      throw std::invalid_argument("dataset: " + std::to_string(labels.size()) + " labels for " +
                                  std::to_string(views[0].rows()) + " samples");
    }
  }
};

namespace detail {

inline std::string join_path(const std::string& dir, const std::string& name) {
  if (dir.empty() || dir.back() == '/') return dir + name;
  return dir + "/" + name;
}

inline double parse_cell(const std::string& cell, const std::string& file, int line) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  while (end && *end == ' ') ++end;
  if (end == begin || (end && *end != '\0')) {
    throw std::runtime_error(file + ":" + std::to_string(line) + ": non-numeric cell '" + cell + "'");
  }
  return v;
}

// Headerless comma-separated numeric matrix; every row must have the same
// number of cells.
inline Matrix load_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(parse_cell(cell, path, lineno));
    if (!rows.empty() && row.size() != rows[0].size()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": ragged row (" +
                               std::to_string(row.size()) + " cells, expected " +
                               std::to_string(rows[0].size()) + ")");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error(path + ": empty matrix");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j < rows[i].size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return m;
}

}  // namespace detail

// Directory layout: `views.txt` lists one per-view CSV file name per line
// (order defines the view index); `labels.csv` is optional, one nonnegative
// integer per line.
inline ViewDataset load_dataset(const std::string& dir) {
  const std::string index_path = detail::join_path(dir, "views.txt");
  std::ifstream index(index_path);
  if (!index) throw std::runtime_error("cannot open " + index_path);
  ViewDataset ds;
  std::string line;
  while (std::getline(index, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ds.names.push_back(line);
  }
  if (ds.names.empty()) throw std::runtime_error(index_path + ": no view files listed");
  ds.views.resize(ds.names.size());
  parallel_for(static_cast<int>(ds.names.size()), [&](int begin, int end) {
    for (int r = begin; r < end; ++r) {
      ds.views[static_cast<size_t>(r)] =
          detail::load_csv_matrix(detail::join_path(dir, ds.names[static_cast<size_t>(r)]));
    }
  });
  for (size_t r = 1; r < ds.views.size(); ++r) {
    if (ds.views[r].rows() != ds.views[0].rows()) {
      throw std::runtime_error("row-count mismatch: " + ds.names[0] + " has " +
                               std::to_string(ds.views[0].rows()) + " rows, " + ds.names[r] +
                               " has " + std::to_string(ds.views[r].rows()));
    }
  }
  const std::string labels_path = detail::join_path(dir, "labels.csv");
  std::ifstream lf(labels_path);
  if (lf) {
    int lineno = 0;
    while (std::getline(lf, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const double v = detail::parse_cell(line, labels_path, lineno);
      const int label = static_cast<int>(v);
      if (label < 0 || static_cast<double>(label) != v) {
        throw std::runtime_error(labels_path + ":" + std::to_string(lineno) +
                                 ": labels must be nonnegative integers");
      }
      ds.labels.push_back(label);
    }
    if (static_cast<Eigen::Index>(ds.labels.size()) != ds.views[0].rows()) {
      throw std::runtime_error(labels_path + ": " + std::to_string(ds.labels.size()) +
                               " labels for " + std::to_string(ds.views[0].rows()) + " samples");
    }
  }
  ds.validate();
  return ds;
}

// Mirror of the load_dataset layout, 17 significant digits per value.
inline void save_dataset(const ViewDataset& ds, const std::string& dir) {
  ds.validate();
  std::ofstream index(detail::join_path(dir, "views.txt"));
  if (!index) throw std::runtime_error("save_dataset: cannot open " + detail::join_path(dir, "views.txt"));
  for (const auto& name : ds.names) index << name << "\n";
  if (!index.good()) throw std::runtime_error("save_dataset: write failed for views.txt");
  for (size_t r = 0; r < ds.views.size(); ++r) {
    const std::string path = detail::join_path(dir, ds.names[r]);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
    const Matrix& m = ds.views[r];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (j) out << ",";
        out << format_g17(m(i, j));
      }
      out << "\n";
    }
    if (!out.good()) throw std::runtime_error("save_dataset: write failed for " + path);
  }
  if (ds.has_labels()) {
    const std::string path = detail::join_path(dir, "labels.csv");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
    for (int v : ds.labels) out << v << "\n";
    if (!out.good()) throw std::runtime_error("save_dataset: write failed for " + path);
  }
}

// Per-column (x - min) / (max - min); constant columns map to 0. Idempotent.
inline ViewDataset minmax_scale(const ViewDataset& ds) {
  ViewDataset out = ds;
  for (auto& v : out.views) {
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      const double lo = v.col(j).minCoeff();
      const double hi = v.col(j).maxCoeff();
      if (hi > lo) {
        v.col(j) = (v.col(j).array() - lo) / (hi - lo);
      } else {
        v.col(j).setZero();
      }
    }
  }
  return out;
}

// One view of the synthetic generator: dimensionality, how far apart the
// cluster centers sit, and the per-sample noise level. Larger separation
// against fixed noise makes the view more discriminative.
struct SynthView {
  int dim = 1;
  double separation = 1.0;
  double noise_sigma = 1.0;
};

struct SynthSpec {
  int n_samples = 0;
  int n_clusters = 0;
  std::vector<SynthView> views;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_clusters < 2) throw std::invalid_argument("synth: n_clusters must be >= 2");
    if (n_samples < 2 * n_clusters) {
      throw std::invalid_argument("synth: need n_samples >= 2 * n_clusters");
    }
    if (views.empty()) throw std::invalid_argument("synth: need at least one view");
    for (const auto& v : views) {
      if (v.dim < 1) throw std::invalid_argument("synth: view dim must be >= 1");
      if (v.separation < 0.0) throw std::invalid_argument("synth: separation must be >= 0");
      if (!(v.noise_sigma > 0.0)) throw std::invalid_argument("synth: noise sigma must be > 0");
    }
  }
};

// Shared labels drawn near-uniformly, per-view Gaussian cluster centers
// scaled by the separation, Gaussian sample noise, then min-max scaling.
// Deterministic per seed.
inline ViewDataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, 0x73796e7468ull));
  ViewDataset ds;
  ds.labels.resize(static_cast<size_t>(spec.n_samples));
  for (int i = 0; i < spec.n_samples; ++i) {
    ds.labels[static_cast<size_t>(i)] = rng.below(spec.n_clusters);
  }
  for (size_t v = 0; v < spec.views.size(); ++v) {
    const SynthView& sv = spec.views[v];
    Matrix centers(spec.n_clusters, sv.dim);
    for (Eigen::Index i = 0; i < centers.rows(); ++i) {
      for (Eigen::Index j = 0; j < centers.cols(); ++j) {
        centers(i, j) = rng.gaussian() * sv.separation;
      }
    }
    Matrix x(spec.n_samples, sv.dim);
    for (int i = 0; i < spec.n_samples; ++i) {
      for (int j = 0; j < sv.dim; ++j) {
        x(i, j) = centers(ds.labels[static_cast<size_t>(i)], j) + rng.gaussian() * sv.noise_sigma;
      }
    }
    ds.views.push_back(std::move(x));
    ds.names.push_back("view" + std::to_string(v + 1) + ".csv");
  }
  return minmax_scale(ds);
}

}  // namespace bmvc
