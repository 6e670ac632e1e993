#pragma once

#include "bmvc/matrix.hpp"
#include "bmvc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace bmvc {

inline void check_same_length(const std::vector<int>& a, const std::vector<int>& b, const char* where) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(where) + ": label vectors of length " +
                                std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  if (a.empty()) throw std::invalid_argument(std::string(where) + ": empty label vectors");
}

namespace detail {

// Contingency table between two labelings, sized (max_a+1) x (max_b+1).
inline std::vector<std::vector<long long>> contingency(const std::vector<int>& a,
                                                       const std::vector<int>& b) {
  int ka = 0, kb = 0;
  for (int v : a) {
    if (v < 0) throw std::invalid_argument("labels must be nonnegative");
    ka = std::max(ka, v + 1);
  }
  for (int v : b) {
    if (v < 0) throw std::invalid_argument("labels must be nonnegative");
    kb = std::max(kb, v + 1);
  }
  std::vector<std::vector<long long>> w(static_cast<size_t>(ka),
                                        std::vector<long long>(static_cast<size_t>(kb), 0));
  for (size_t i = 0; i < a.size(); ++i) {
    ++w[static_cast<size_t>(a[i])][static_cast<size_t>(b[i])];
  }
  return w;
}

inline long long pairs2(long long n) { return n * (n - 1) / 2; }

// Min-cost perfect assignment on a square cost matrix (Hungarian algorithm
// with potentials, O(n^3)). Returns the column matched to each row.
inline std::vector<int> hungarian_min_cost(const std::vector<std::vector<long long>>& cost) {
  const int n = static_cast<int>(cost.size());
  const long long inf = std::numeric_limits<long long>::max() / 4;
  std::vector<long long> u(static_cast<size_t>(n + 1), 0), v(static_cast<size_t>(n + 1), 0);
  std::vector<int> match(static_cast<size_t>(n + 1), 0), way(static_cast<size_t>(n + 1), 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<long long> minv(static_cast<size_t>(n + 1), inf);
    std::vector<char> used(static_cast<size_t>(n + 1), 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = match[static_cast<size_t>(j0)];
      long long delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const long long cur = cost[static_cast<size_t>(i0 - 1)][static_cast<size_t>(j - 1)] -
                              u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(match[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      match[static_cast<size_t>(j0)] = match[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(static_cast<size_t>(n), -1);
  for (int j = 1; j <= n; ++j) {
    if (match[static_cast<size_t>(j)] > 0) row_to_col[static_cast<size_t>(match[static_cast<size_t>(j)] - 1)] = j - 1;
  }
  return row_to_col;
}

}  // namespace detail

// Clustering accuracy under the best bijection between predicted clusters
// and true classes: max-weight assignment on the contingency table, padded
// square with zeros.
inline double hungarian_accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  check_same_length(pred, truth, "hungarian_accuracy");
  const auto w = detail::contingency(pred, truth);
  const int kp = static_cast<int>(w.size());
  const int kt = static_cast<int>(w[0].size());
  const int n = std::max(kp, kt);
  long long wmax = 0;
  for (const auto& row : w) {
    for (long long x : row) wmax = std::max(wmax, x);
  }
  std::vector<std::vector<long long>> cost(static_cast<size_t>(n),
                                           std::vector<long long>(static_cast<size_t>(n), wmax));
  for (int i = 0; i < kp; ++i) {
    for (int j = 0; j < kt; ++j) cost[static_cast<size_t>(i)][static_cast<size_t>(j)] = wmax - w[static_cast<size_t>(i)][static_cast<size_t>(j)];
  }
  const std::vector<int> assign = detail::hungarian_min_cost(cost);
  long long hits = 0;
  for (int i = 0; i < kp; ++i) {
    const int j = assign[static_cast<size_t>(i)];
    if (j >= 0 && j < kt) hits += w[static_cast<size_t>(i)][static_cast<size_t>(j)];
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// Mutual information normalized by the arithmetic mean of the entropies;
// natural logs. Two single-cluster partitions count as perfectly dependent.
inline double nmi(const std::vector<int>& pred, const std::vector<int>& truth) {
  check_same_length(pred, truth, "nmi");
  const auto w = detail::contingency(pred, truth);
  const double n = static_cast<double>(pred.size());
  std::vector<long long> rows(w.size(), 0), cols(w[0].size(), 0);
  for (size_t i = 0; i < w.size(); ++i) {
    for (size_t j = 0; j < w[i].size(); ++j) {
      rows[i] += w[i][j];
      cols[j] += w[i][j];
    }
  }
  auto entropy = [&](const std::vector<long long>& counts) {
    double h = 0.0;
    for (long long c : counts) {
      if (c > 0) {
        const double p = static_cast<double>(c) / n;
        h -= p * std::log(p);
      }
    }
    return h;
  };
  const double hp = entropy(rows);
  const double ht = entropy(cols);
  if (hp == 0.0 && ht == 0.0) return 1.0;
  double mi = 0.0;
  for (size_t i = 0; i < w.size(); ++i) {
    for (size_t j = 0; j < w[i].size(); ++j) {
      if (w[i][j] > 0) {
        const double pij = static_cast<double>(w[i][j]) / n;
        mi += pij * std::log(n * static_cast<double>(w[i][j]) /
                             (static_cast<double>(rows[i]) * static_cast<double>(cols[j])));
      }
    }
  }
  const double v = mi / ((hp + ht) / 2.0);
  return std::min(1.0, std::max(0.0, v));
}

// Adjusted Rand index from pair counts, integer arithmetic until the final
// division. Zero adjusted denominator (both partitions trivial) counts as
// perfect agreement.
inline double ari(const std::vector<int>& pred, const std::vector<int>& truth) {
  check_same_length(pred, truth, "ari");
  if (pred.size() < 2) throw std::invalid_argument("ari: need at least 2 samples");
  const auto w = detail::contingency(pred, truth);
  long long index = 0, a = 0, b = 0;
  std::vector<long long> rows(w.size(), 0), cols(w[0].size(), 0);
  for (size_t i = 0; i < w.size(); ++i) {
    for (size_t j = 0; j < w[i].size(); ++j) {
      index += detail::pairs2(w[i][j]);
      rows[i] += w[i][j];
      cols[j] += w[i][j];
    }
  }
  for (long long r : rows) a += detail::pairs2(r);
  for (long long c : cols) b += detail::pairs2(c);
  const long long total = detail::pairs2(static_cast<long long>(pred.size()));
  const __int128 num = 2 * (static_cast<__int128>(index) * total - static_cast<__int128>(a) * b);
  const __int128 den = static_cast<__int128>(a + b) * total - 2 * static_cast<__int128>(a) * b;
  if (den == 0) return 1.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

// F1 over same-cluster pairs: precision against predicted pairs, recall
// against true pairs; 0 when either side has no same-cluster pair.
inline double pairwise_fscore(const std::vector<int>& pred, const std::vector<int>& truth) {
  check_same_length(pred, truth, "pairwise_fscore");
  if (pred.size() < 2) throw std::invalid_argument("pairwise_fscore: need at least 2 samples");
  const auto w = detail::contingency(pred, truth);
  long long sb = 0, sp = 0, st = 0;
  std::vector<long long> rows(w.size(), 0), cols(w[0].size(), 0);
  for (size_t i = 0; i < w.size(); ++i) {
    for (size_t j = 0; j < w[i].size(); ++j) {
      sb += detail::pairs2(w[i][j]);
      rows[i] += w[i][j];
      cols[j] += w[i][j];
    }
  }
  for (long long r : rows) sp += detail::pairs2(r);
  for (long long c : cols) st += detail::pairs2(c);
  if (sp == 0 || st == 0) return 0.0;
  return 2.0 * static_cast<double>(sb) / static_cast<double>(sp + st);
}

// Lloyd iterations from k-means++ seeding; best of `restarts` by
// within-cluster sum of squares, ties to the earliest restart. Empty
// clusters are re-seeded from the point farthest from its center.
// Deterministic per seed.
inline std::vector<int> kmeans(const Matrix& x, int k, int restarts, std::uint64_t seed) {
  const int n = static_cast<int>(x.rows());
  if (k < 2) throw std::invalid_argument("kmeans: k must be >= 2");
  if (n < k) throw std::invalid_argument("kmeans: " + std::to_string(n) + " samples for k=" + std::to_string(k));
  if (restarts < 1) throw std::invalid_argument("kmeans: restarts must be >= 1");
  check_finite(x, "kmeans");

  std::vector<int> best_labels;
  double best_wcss = std::numeric_limits<double>::infinity();

  std::vector<int> labels(static_cast<size_t>(n), 0);
  std::vector<double> d2(static_cast<size_t>(n), 0.0);
  for (int restart = 0; restart < restarts; ++restart) {
    Rng rng(mix_seed(seed, 0x6b6d6e73ull, static_cast<std::uint64_t>(restart)));
    Matrix centers(k, x.cols());
    centers.row(0) = x.row(rng.below(n));
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int cc = 0; cc < c; ++cc) {
          best = std::min(best, (x.row(i) - centers.row(cc)).squaredNorm());
        }
        d2[static_cast<size_t>(i)] = best;
        total += best;
      }
      if (total <= 0.0) {
        centers.row(c) = x.row(rng.below(n));
        continue;
      }
      const double target = rng.uniform() * total;
      double acc = 0.0;
      int pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2[static_cast<size_t>(i)];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
      centers.row(c) = x.row(pick);
    }

    for (int iter = 0; iter < 300; ++iter) {
      for (int i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int c = 0; c < k; ++c) {
          const double d = (x.row(i) - centers.row(c)).squaredNorm();
          if (d < best) {
            best = d;
            arg = c;
          }
        }
        labels[static_cast<size_t>(i)] = arg;
      }
      Matrix sums = Matrix::Zero(k, x.cols());
      std::vector<int> counts(static_cast<size_t>(k), 0);
      for (int i = 0; i < n; ++i) {
        sums.row(labels[static_cast<size_t>(i)]) += x.row(i);
        ++counts[static_cast<size_t>(labels[static_cast<size_t>(i)])];
      }
      Matrix next = centers;
      for (int c = 0; c < k; ++c) {
        if (counts[static_cast<size_t>(c)] > 0) {
          next.row(c) = sums.row(c) / counts[static_cast<size_t>(c)];
        } else {
          int far = 0;
          double fard = -1.0;
          for (int i = 0; i < n; ++i) {
            const double d = (x.row(i) - centers.row(labels[static_cast<size_t>(i)])).squaredNorm();
            if (d > fard) {
              fard = d;
              far = i;
            }
          }
          next.row(c) = x.row(far);
        }
      }
      const double movement = (next - centers).rowwise().norm().maxCoeff();
      centers = next;
      if (movement < 1e-8) break;
    }

    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int c = 0; c < k; ++c) {
        const double d = (x.row(i) - centers.row(c)).squaredNorm();
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      labels[static_cast<size_t>(i)] = arg;
    }
    double wcss = 0.0;
    for (int i = 0; i < n; ++i) {
      wcss += (x.row(i) - centers.row(labels[static_cast<size_t>(i)])).squaredNorm();
    }
    if (wcss < best_wcss) {
      best_wcss = wcss;
      best_labels = labels;
    }
  }
  return best_labels;
}

struct MetricsReport {
  double acc = 0.0;
  double nmi = 0.0;
  double ari = 0.0;
  double fscore = 0.0;
};

inline MetricsReport score_labels(const std::vector<int>& pred, const std::vector<int>& truth) {
  MetricsReport r;
  r.acc = hungarian_accuracy(pred, truth);
  r.nmi = nmi(pred, truth);
  r.ari = ari(pred, truth);
  r.fscore = pairwise_fscore(pred, truth);
  if (!(std::isfinite(r.acc) && std::isfinite(r.nmi) && std::isfinite(r.ari) && std::isfinite(r.fscore))) {
    throw NumericError("metrics: non-finite value");
  }
  return r;
}

// K-means on the embedding, then all four metrics against the truth.
inline MetricsReport evaluate(const Matrix& f, const std::vector<int>& truth, int k, int restarts,
                              std::uint64_t seed) {
  if (static_cast<Eigen::Index>(truth.size()) != f.rows()) {
    throw std::invalid_argument("evaluate: " + std::to_string(truth.size()) + " labels for " +
                                std::to_string(f.rows()) + " rows");
  }
  return score_labels(kmeans(f, k, restarts, seed), truth);
}

}  // namespace bmvc
