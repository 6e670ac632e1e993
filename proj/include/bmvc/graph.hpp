#pragma once

#include "bmvc/matrix.hpp"
#include "bmvc/parallel.hpp"
#include "bmvc/tape.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace bmvc {

// Row-stochastic adaptive-neighbor graph. Each row keeps at most k
// (column, weight) entries, column-ascending, weights positive, self index
// never present, weights summing to one.
struct Graph {
  int n = 0;
  int k = 0;
  std::vector<std::vector<std::pair<int, double>>> rows;
};

// Squared Euclidean distances between rows; clamped at zero, zero diagonal.
// Same formula as the tape op, usable without a tape.
inline Matrix sq_dist_matrix(const Matrix& x) {
  check_finite(x, "sq_dist_matrix");
  Eigen::VectorXd sq = x.rowwise().squaredNorm();
  Matrix d = -2.0 * (x * x.transpose());
  d.colwise() += sq;
  d.rowwise() += sq.transpose();
  d = d.cwiseMax(0.0);
  d.diagonal().setZero();
  return d;
}

inline void check_neighbor_count(Eigen::Index n, int k, const char* where) {
  if (k < 1 || k > n - 2) {
    throw std::invalid_argument(std::string(where) + ": k must lie in [1, N-2], got k=" +
                                std::to_string(k) + " with N=" + std::to_string(n));
  }
}

// Ranks each row's neighbors by (distance, index), excluding self, and
// freezes the first k, the (k+1)-th, and the degenerate-row decision
// (denominator of the closed form at or below 1e-12).
inline NeighborPlan make_neighbor_plan(const Matrix& sqd, int k) {
  const Eigen::Index n = sqd.rows();
  if (sqd.cols() != n) throw ShapeError("make_neighbor_plan: need square distances, got " + shape_str(sqd));
  check_neighbor_count(n, k, "make_neighbor_plan");
  NeighborPlan plan;
  plan.k = k;
  plan.neighbors.assign(static_cast<size_t>(n), {});
  plan.kplus1.assign(static_cast<size_t>(n), -1);
  plan.degenerate.assign(static_cast<size_t>(n), 0);
  parallel_for(static_cast<int>(n), [&](int begin, int end) {
    std::vector<std::pair<double, int>> order;
    for (int i = begin; i < end; ++i) {
      order.clear();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j != i) order.emplace_back(sqd(i, j), static_cast<int>(j));
      }
      std::partial_sort(order.begin(), order.begin() + k + 1, order.end());
      auto& nb = plan.neighbors[static_cast<size_t>(i)];
      nb.resize(static_cast<size_t>(k));
      double dsum = 0.0;
      for (int j = 0; j < k; ++j) {
        nb[static_cast<size_t>(j)] = order[static_cast<size_t>(j)].second;
        dsum += order[static_cast<size_t>(j)].first;
      }
      plan.kplus1[static_cast<size_t>(i)] = order[static_cast<size_t>(k)].second;
      const double den = k * order[static_cast<size_t>(k)].first - dsum;
      if (den <= 1e-12) plan.degenerate[static_cast<size_t>(i)] = 1;
    }
  });
  return plan;
}

// Closed-form adaptive weights for one plan row, written into `out` as
// (column, weight) pairs. Degenerate rows get the uniform 1/k fallback.
inline void can_row_weights(const Matrix& sqd, const NeighborPlan& plan, int i,
                            std::vector<std::pair<int, double>>& out) {
  const auto& nb = plan.neighbors[static_cast<size_t>(i)];
  const int k = plan.k;
  out.clear();
  if (plan.degenerate[static_cast<size_t>(i)]) {
    for (int j : nb) out.emplace_back(j, 1.0 / k);
  } else {
    const double dk1 = sqd(i, plan.kplus1[static_cast<size_t>(i)]);
    double dsum = 0.0;
    for (int j : nb) dsum += sqd(i, j);
    const double den = k * dk1 - dsum;
    for (int j : nb) {
      const double w = (dk1 - sqd(i, j)) / den;
      if (w != 0.0) out.emplace_back(j, w);
    }
  }
  std::sort(out.begin(), out.end());
}

// Adaptive-neighbor graph: per row, the k nearest samples weighted by
// (d_{k+1} - d_j) / (k d_{k+1} - sum_{m<=k} d_m); ties across the whole
// candidate set (denominator <= 1e-12) fall back to uniform 1/k.
inline Graph can_graph(const Matrix& x, int k) {
  const Matrix sqd = sq_dist_matrix(x);
  const NeighborPlan plan = make_neighbor_plan(sqd, k);
  Graph g;
  g.n = static_cast<int>(x.rows());
  g.k = k;
  g.rows.assign(static_cast<size_t>(g.n), {});
  parallel_for(g.n, [&](int begin, int end) {
    for (int i = begin; i < end; ++i) can_row_weights(sqd, plan, i, g.rows[static_cast<size_t>(i)]);
  });
  return g;
}

// Euclidean projection of v onto the probability simplex {p >= 0, sum p = 1}
// by the sort-and-threshold rule.
inline std::vector<double> project_simplex(const std::vector<double>& v) {
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0;
  double tau = 0.0;
  for (size_t j = 0; j < u.size(); ++j) {
    css += u[j];
    const double cand = (1.0 - css) / static_cast<double>(j + 1);
    if (u[j] + cand > 0.0) tau = cand;
  }
  std::vector<double> p(v.size());
  for (size_t j = 0; j < v.size(); ++j) p[j] = std::max(v[j] + tau, 0.0);
  return p;
}

// Test oracle: per-row solve of the simplex-constrained quadratic program
// min_p sum_j (d_j p_j + alpha p_j^2), with alpha fixed so the minimizer has
// exactly k nonzeros. Independent of the closed form: the minimizer is the
// simplex projection of -d / (2 alpha) over all candidates. Same degenerate
// fallback rule as can_graph. O(N^2 log N) per row; test use only.
inline Graph can_graph_oracle(const Matrix& x, int k) {
  const Matrix sqd = sq_dist_matrix(x);
  const Eigen::Index n = x.rows();
  check_neighbor_count(n, k, "can_graph_oracle");
  Graph g;
  g.n = static_cast<int>(n);
  g.k = k;
  g.rows.assign(static_cast<size_t>(n), {});
  std::vector<std::pair<double, int>> order;
  for (Eigen::Index i = 0; i < n; ++i) {
    order.clear();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) order.emplace_back(sqd(i, j), static_cast<int>(j));
    }
    std::sort(order.begin(), order.end());
    double dsum = 0.0;
    for (int j = 0; j < k; ++j) dsum += order[static_cast<size_t>(j)].first;
    const double den = k * order[static_cast<size_t>(k)].first - dsum;
    auto& row = g.rows[static_cast<size_t>(i)];
    if (den <= 1e-12) {
      for (int j = 0; j < k; ++j) row.emplace_back(order[static_cast<size_t>(j)].second, 1.0 / k);
      std::sort(row.begin(), row.end());
      continue;
    }
    const double alpha = den / 2.0;
    std::vector<double> v(order.size());
    for (size_t j = 0; j < order.size(); ++j) v[j] = -order[j].first / (2.0 * alpha);
    const std::vector<double> p = project_simplex(v);
    for (size_t j = 0; j < p.size(); ++j) {
      if (p[j] > 0.0) row.emplace_back(order[j].second, p[j]);
    }
    std::sort(row.begin(), row.end());
  }
  return g;
}

// Entrywise average (Ga + Gb) / 2 over the union of supports.
inline Graph fuse_graphs(const Graph& a, const Graph& b) {
  if (a.n != b.n) {
    throw ShapeError("fuse_graphs: graphs over " + std::to_string(a.n) + " and " +
                     std::to_string(b.n) + " samples");
  }
  Graph out;
  out.n = a.n;
  out.k = a.k > b.k ? a.k : b.k;
  out.rows.assign(static_cast<size_t>(a.n), {});
  for (int i = 0; i < a.n; ++i) {
    const auto& ra = a.rows[static_cast<size_t>(i)];
    const auto& rb = b.rows[static_cast<size_t>(i)];
    auto& ro = out.rows[static_cast<size_t>(i)];
    size_t pa = 0, pb = 0;
    while (pa < ra.size() || pb < rb.size()) {
      if (pb == rb.size() || (pa < ra.size() && ra[pa].first < rb[pb].first)) {
        ro.emplace_back(ra[pa].first, ra[pa].second / 2.0);
        ++pa;
      } else if (pa == ra.size() || rb[pb].first < ra[pa].first) {
        ro.emplace_back(rb[pb].first, rb[pb].second / 2.0);
        ++pb;
      } else {
        ro.emplace_back(ra[pa].first, (ra[pa].second + rb[pb].second) / 2.0);
        ++pa;
        ++pb;
      }
    }
  }
  return out;
}

inline Matrix dense(const Graph& g) {
  Matrix m = Matrix::Zero(g.n, g.n);
  for (int i = 0; i < g.n; ++i) {
    for (const auto& [j, w] : g.rows[static_cast<size_t>(i)]) m(i, j) = w;
  }
  return m;
}

// Differentiable adaptive graph of the features in node `f` under a frozen
// plan. Off-support entries are exact constants zero.
inline int joint_graph_node(Tape& t, int f, const NeighborPlan& plan) {
  return t.can_weights(t.pairwise_sq_dists(f), plan);
}

// Plan built from the node's current value: ranking and degenerate decision
// frozen at call time.
inline int joint_graph_node(Tape& t, int f, int k) {
  const NeighborPlan plan = make_neighbor_plan(sq_dist_matrix(t.value(f)), k);
  return joint_graph_node(t, f, plan);
}

// Three-column text serialization: "row col weight" per entry, row-major,
// 17 significant digits.
inline void save_graph(const Graph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_graph: cannot open " + path);
  for (int i = 0; i < g.n; ++i) {
    for (const auto& [j, w] : g.rows[static_cast<size_t>(i)]) {
      out << i << " " << j << " " << format_g17(w) << "\n";
    }
  }
  if (!out.good()) throw std::runtime_error("save_graph: write failed for " + path);
}

inline Graph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_graph: cannot open " + path);
  Graph g;
  std::string line;
  int lineno = 0;
  int max_index = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    int i = 0, j = 0;
    double w = 0.0;
    if (!(ss >> i >> j >> w) || i < 0 || j < 0) {
      throw std::runtime_error("load_graph: " + path + ":" + std::to_string(lineno) +
                               ": expected 'row col weight'");
    }
    if (i > max_index) max_index = i;
    if (j > max_index) max_index = j;
    if (static_cast<size_t>(i) >= g.rows.size()) g.rows.resize(static_cast<size_t>(i) + 1);
    g.rows[static_cast<size_t>(i)].emplace_back(j, w);
  }
  g.n = max_index + 1;
  g.rows.resize(static_cast<size_t>(g.n));
  for (auto& row : g.rows) {
    std::sort(row.begin(), row.end());
    g.k = std::max(g.k, static_cast<int>(row.size()));
  }
  return g;
}

}  // namespace bmvc
