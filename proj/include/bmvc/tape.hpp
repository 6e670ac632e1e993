#pragma once

#include "bmvc/matrix.hpp"
#include "bmvc/rng.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace bmvc {

// Frozen k-nearest-neighbor ranking. `neighbors[i]` holds the k nearest
// indices of row i in ascending distance order (self excluded), `kplus1[i]`
// the (k+1)-th nearest, and `degenerate[i]` the uniform-fallback decision
// made when the plan was built. Adaptive weights stay differentiable in the
// distances while the ranking and fallback decision are held fixed, so no
// gradient ever flows through a sort.
struct NeighborPlan {
  int k = 0;
  std::vector<std::vector<int>> neighbors;
  std::vector<int> kplus1;
  std::vector<char> degenerate;

  int rows() const { return static_cast<int>(neighbors.size()); }
};

enum class Op {
  constant,
  leaf,
  affine,
  relu,
  concat_cols,
  slice_rows,
  slice_col,
  weighted_sum,
  cwise_mul,
  cwise_square,
  matmul,
  row_normalize,
  row_softmax,
  scale_rows,
  pairwise_sq_dists,
  qr_orthonormalize,
  cosine_similarity,
  can_weights,
  vcr_pair_loss,
  sum_all,
  mean_all,
  scalar_div,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::constant: return "constant";
    case Op::leaf: return "leaf";
    case Op::affine: return "affine";
    case Op::relu: return "relu";
    case Op::concat_cols: return "concat_cols";
    case Op::slice_rows: return "slice_rows";
    case Op::slice_col: return "slice_col";
    case Op::weighted_sum: return "weighted_sum";
    case Op::cwise_mul: return "cwise_mul";
    case Op::cwise_square: return "cwise_square";
    case Op::matmul: return "matmul";
    case Op::row_normalize: return "row_normalize";
    case Op::row_softmax: return "row_softmax";
    case Op::scale_rows: return "scale_rows";
    case Op::pairwise_sq_dists: return "pairwise_sq_dists";
    case Op::qr_orthonormalize: return "qr_orthonormalize";
    case Op::cosine_similarity: return "cosine_similarity";
    case Op::can_weights: return "can_weights";
    case Op::vcr_pair_loss: return "vcr_pair_loss";
    case Op::sum_all: return "sum_all";
    case Op::mean_all: return "mean_all";
    case Op::scalar_div: return "scalar_div";
  }
  return "?";
}

class Tape;

struct Node {
  Op op;
  Matrix value;
  Matrix grad;
  std::vector<int> parents;
  std::function<void(Tape&, const Node&)> backward;
};

// Reverse-mode tape. Forward evaluation is eager: each op validates shapes,
// computes its value immediately and registers a closure that scatters the
// node's gradient into its parents. Node ids are tape positions, so parents
// always precede children and a reverse id sweep is a valid topological
// order for backpropagation.
class Tape {
 public:
  int size() const { return static_cast<int>(nodes_.size()); }

  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  const Matrix& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  Matrix& grad(int id) { return nodes_[static_cast<size_t>(id)].grad; }
  const Matrix& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }

  // Inputs the loss is never differentiated against (data, fixed graphs).
  int constant(Matrix v) { return push(Op::constant, std::move(v), {}, nullptr); }

  // Differentiable inputs (parameters).
  int leaf(Matrix v) { return push(Op::leaf, std::move(v), {}, nullptr); }

  // X*W + 1*b'. W is (in, out), b a column of length out.
  int affine(int x, int w, int b) {
    const Matrix& xv = value(x);
    const Matrix& wv = value(w);
    const Matrix& bv = value(b);
    if (xv.cols() != wv.rows()) {
      throw ShapeError("affine: input " + shape_str(xv) + " does not match weight " + shape_str(wv));
    }
    if (bv.cols() != 1 || bv.rows() != wv.cols()) {
      throw ShapeError("affine: bias " + shape_str(bv) + " does not match weight " + shape_str(wv));
    }
    Matrix out = xv * wv;
    out.rowwise() += bv.transpose().row(0);
    return push(Op::affine, std::move(out), {x, w, b}, [x, w, b](Tape& t, const Node& n) {
      t.grad(x).noalias() += n.grad * t.value(w).transpose();
      t.grad(w).noalias() += t.value(x).transpose() * n.grad;
      t.grad(b) += n.grad.colwise().sum().transpose();
    });
  }

  int relu(int x) {
    Matrix out = value(x).cwiseMax(0.0);
    return push(Op::relu, std::move(out), {x}, [x](Tape& t, const Node& n) {
      t.grad(x).array() += n.grad.array() * (t.value(x).array() > 0.0).cast<double>();
    });
  }

  int matmul(int a, int b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (av.cols() != bv.rows()) {
      throw ShapeError("matmul: " + shape_str(av) + " * " + shape_str(bv));
    }
    Matrix out = av * bv;
    return push(Op::matmul, std::move(out), {a, b}, [a, b](Tape& t, const Node& n) {
      t.grad(a).noalias() += n.grad * t.value(b).transpose();
      t.grad(b).noalias() += t.value(a).transpose() * n.grad;
    });
  }

  int concat_cols(const std::vector<int>& xs) {
    if (xs.empty()) throw ShapeError("concat_cols: no inputs");
    const Eigen::Index rows = value(xs[0]).rows();
    Eigen::Index cols = 0;
    for (int id : xs) {
      if (value(id).rows() != rows) {
        throw ShapeError("concat_cols: row mismatch " + shape_str(value(xs[0])) + " vs " +
                         shape_str(value(id)));
      }
      cols += value(id).cols();
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (int id : xs) {
      out.middleCols(at, value(id).cols()) = value(id);
      at += value(id).cols();
    }
    return push(Op::concat_cols, std::move(out), xs, [xs](Tape& t, const Node& n) {
      Eigen::Index at = 0;
      for (int id : xs) {
        const Eigen::Index w = t.value(id).cols();
        t.grad(id) += n.grad.middleCols(at, w);
        at += w;
      }
    });
  }

  int slice_rows(int x, int begin, int count) {
    const Matrix& xv = value(x);
    if (begin < 0 || count < 0 || begin + count > xv.rows()) {
      throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " +
                       std::to_string(begin + count) + ") out of " + shape_str(xv));
    }
    Matrix out = xv.middleRows(begin, count);
    return push(Op::slice_rows, std::move(out), {x}, [x, begin, count](Tape& t, const Node& n) {
      t.grad(x).middleRows(begin, count) += n.grad;
    });
  }

  int slice_col(int x, int col) {
    const Matrix& xv = value(x);
    if (col < 0 || col >= xv.cols()) {
      throw ShapeError("slice_col: column " + std::to_string(col) + " out of " + shape_str(xv));
    }
    Matrix out = xv.col(col);
    return push(Op::slice_col, std::move(out), {x}, [x, col](Tape& t, const Node& n) {
      t.grad(x).col(col) += n.grad;
    });
  }

  // sum_i ws[i] * xs[i], identical shapes.
  int weighted_sum(const std::vector<int>& xs, const std::vector<double>& ws) {
    if (xs.empty() || xs.size() != ws.size()) {
      throw ShapeError("weighted_sum: need matching non-empty inputs and weights");
    }
    Matrix out = ws[0] * value(xs[0]);
    for (size_t i = 1; i < xs.size(); ++i) {
      if (value(xs[i]).rows() != out.rows() || value(xs[i]).cols() != out.cols()) {
        throw ShapeError("weighted_sum: shape mismatch " + shape_str(out) + " vs " +
                         shape_str(value(xs[i])));
      }
      out += ws[i] * value(xs[i]);
    }
    return push(Op::weighted_sum, std::move(out), xs, [xs, ws](Tape& t, const Node& n) {
      for (size_t i = 0; i < xs.size(); ++i) t.grad(xs[i]) += ws[i] * n.grad;
    });
  }

  int cwise_mul(int a, int b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
      throw ShapeError("cwise_mul: " + shape_str(av) + " vs " + shape_str(bv));
    }
    Matrix out = av.cwiseProduct(bv);
    return push(Op::cwise_mul, std::move(out), {a, b}, [a, b](Tape& t, const Node& n) {
      t.grad(a) += n.grad.cwiseProduct(t.value(b));
      t.grad(b) += n.grad.cwiseProduct(t.value(a));
    });
  }

  int cwise_square(int x) {
    Matrix out = value(x).cwiseProduct(value(x));
    return push(Op::cwise_square, std::move(out), {x}, [x](Tape& t, const Node& n) {
      t.grad(x) += 2.0 * n.grad.cwiseProduct(t.value(x));
    });
  }

  // Rows scaled to unit Euclidean norm; a 1e-12 floor keeps zero rows finite.
  int row_normalize(int x) {
    const Matrix& xv = value(x);
    Matrix out = xv;
    Eigen::VectorXd norms(xv.rows());
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
      norms(i) = xv.row(i).norm();
      out.row(i) /= norms(i) + 1e-12;
    }
    return push(Op::row_normalize, std::move(out), {x}, [x, norms](Tape& t, const Node& n) {
      const Matrix& xv = t.value(x);
      Matrix& gx = t.grad(x);
      for (Eigen::Index i = 0; i < xv.rows(); ++i) {
        const double s = norms(i) + 1e-12;
        gx.row(i) += n.grad.row(i) / s;
        if (norms(i) > 1e-150) {
          const double dot = n.grad.row(i).dot(xv.row(i));
          gx.row(i) -= xv.row(i) * (dot / (s * s * norms(i)));
        }
      }
    });
  }

  int row_softmax(int x) {
    const Matrix& xv = value(x);
    Matrix out(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
      const double m = xv.row(i).maxCoeff();
      out.row(i) = (xv.row(i).array() - m).exp();
      out.row(i) /= out.row(i).sum();
    }
    return push(Op::row_softmax, std::move(out), {x}, [x](Tape& t, const Node& n) {
      Matrix& gx = t.grad(x);
      for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
        const double dot = n.grad.row(i).dot(n.value.row(i));
        gx.row(i) += (n.grad.row(i).array() - dot).matrix().cwiseProduct(n.value.row(i));
      }
    });
  }

  // Row i of x multiplied by s(i, 0).
  int scale_rows(int x, int s) {
    const Matrix& xv = value(x);
    const Matrix& sv = value(s);
    if (sv.cols() != 1 || sv.rows() != xv.rows()) {
      throw ShapeError("scale_rows: scale " + shape_str(sv) + " does not match " + shape_str(xv));
    }
    Matrix out = sv.col(0).asDiagonal() * xv;
    return push(Op::scale_rows, std::move(out), {x, s}, [x, s](Tape& t, const Node& n) {
      t.grad(x) += t.value(s).col(0).asDiagonal() * n.grad;
      t.grad(s).col(0) += n.grad.cwiseProduct(t.value(x)).rowwise().sum();
    });
  }

  // D(i, j) = squared Euclidean distance between rows i and j of x. Values
  // are clamped at zero and the diagonal is exactly zero.
  int pairwise_sq_dists(int x) {
    const Matrix& xv = value(x);
    Eigen::VectorXd sq = xv.rowwise().squaredNorm();
    Matrix out = -2.0 * (xv * xv.transpose());
    out.colwise() += sq;
    out.rowwise() += sq.transpose();
    out = out.cwiseMax(0.0);
    out.diagonal().setZero();
    return push(Op::pairwise_sq_dists, std::move(out), {x}, [x](Tape& t, const Node& nd) {
      Matrix gbar = nd.grad;
      gbar.diagonal().setZero();
      Matrix s = gbar + gbar.transpose();
      const Matrix& xv = t.value(x);
      Eigen::VectorXd rowsum = s.rowwise().sum();
      t.grad(x).noalias() += 2.0 * (rowsum.asDiagonal() * xv - s * xv);
    });
  }

  // Thin QR with the positive-diagonal-R convention; returns Q with
  // orthonormal columns. Throws RankError when any |R_ii| falls at or below
  // 1e-10 times the largest |R_jj|.
  int qr_orthonormalize(int x) {
    const Matrix& xv = value(x);
    const Eigen::Index n = xv.rows();
    const Eigen::Index k = xv.cols();
    if (n < k) throw ShapeError("qr_orthonormalize: need rows >= cols, got " + shape_str(xv));
    Eigen::MatrixXd a = xv;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, k);
    Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
    for (Eigen::Index i = 0; i < k; ++i) {
      if (r(i, i) < 0.0) {
        r.row(i) = -r.row(i);
        q.col(i) = -q.col(i);
      }
    }
    const double rmax = r.diagonal().cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < k; ++i) {
      if (std::abs(r(i, i)) <= 1e-10 * rmax || rmax == 0.0) {
        throw RankError("qr_orthonormalize: numerically rank-deficient input, column " +
                            std::to_string(i),
                        static_cast<int>(i));
      }
    }
    Matrix out = q;
    Matrix rkeep = r;
    return push(Op::qr_orthonormalize, std::move(out), {x},
                [x, rkeep](Tape& t, const Node& nd) {
                  // A-bar = (Q-bar + Q copyltu(-Q-bar' Q)) R^{-T} with
                  // copyltu(M) = tril(M,-1) + tril(M,-1)' + diag(M).
                  const Matrix& q = nd.value;
                  const Matrix& qbar = nd.grad;
                  Matrix m = -(qbar.transpose() * q);
                  const Eigen::Index k = m.rows();
                  Matrix sym(k, k);
                  for (Eigen::Index i = 0; i < k; ++i) {
                    sym(i, i) = m(i, i);
                    for (Eigen::Index j = 0; j < i; ++j) {
                      sym(i, j) = m(i, j);
                      sym(j, i) = m(i, j);
                    }
                  }
                  Matrix tmat = qbar + q * sym;
                  Eigen::MatrixXd rhs = tmat.transpose();
                  Eigen::MatrixXd rcol = rkeep;
                  Eigen::MatrixXd sol = rcol.triangularView<Eigen::Upper>().solve(rhs);
                  t.grad(x) += sol.transpose();
                });
  }

  // A(i, j) = <c_i, c_j> / (|c_i| |c_j| + 1e-12). The epsilon sits in the
  // denominator product, so the diagonal of a nonzero-row input is slightly
  // below one rather than renormalized to exactly one.
  int cosine_similarity(int x) {
    const Matrix& xv = value(x);
    Eigen::VectorXd norms = xv.rowwise().norm();
    Matrix gram = xv * xv.transpose();
    Matrix denom = norms * norms.transpose();
    denom.array() += 1e-12;
    Matrix out = gram.cwiseQuotient(denom);
    return push(Op::cosine_similarity, std::move(out), {x},
                [x, norms, gram, denom](Tape& t, const Node& nd) {
                  const Matrix& xv = t.value(x);
                  Matrix h = nd.grad.cwiseQuotient(denom);
                  Matrix tm = nd.grad.cwiseProduct(gram).cwiseQuotient(denom.cwiseProduct(denom));
                  Eigen::VectorXd dn = -(tm + tm.transpose()) * norms;
                  Matrix gx = (h + h.transpose()) * xv;
                  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
                    if (norms(i) > 1e-150) gx.row(i) += (dn(i) / norms(i)) * xv.row(i);
                  }
                  t.grad(x) += gx;
                });
  }

  // Adaptive neighbor weights from squared distances under a frozen ranking.
  // Row i gets weight (d_{k+1} - d_j) / (k d_{k+1} - sum_{m<=k} d_m) on its
  // k planned neighbors. A row flagged degenerate in the plan stays at the
  // constant uniform 1/k with zero gradient; a non-flagged row whose
  // denominator collapses under the frozen ranking is a numeric error.
  int can_weights(int d, const NeighborPlan& plan) {
    const Matrix& dv = value(d);
    const Eigen::Index n = dv.rows();
    if (dv.cols() != n) throw ShapeError("can_weights: distances must be square, got " + shape_str(dv));
    if (plan.rows() != n || static_cast<Eigen::Index>(plan.kplus1.size()) != n ||
        static_cast<Eigen::Index>(plan.degenerate.size()) != n) {
      throw ShapeError("can_weights: plan covers " + std::to_string(plan.rows()) + " rows, need " +
                       std::to_string(n));
    }
    if (plan.k < 1) throw ShapeError("can_weights: plan has k < 1");
    const int k = plan.k;
    NeighborPlan p = plan;
    Matrix out = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& nb = p.neighbors[static_cast<size_t>(i)];
      if (static_cast<int>(nb.size()) != k) throw ShapeError("can_weights: ragged plan row");
      if (p.degenerate[static_cast<size_t>(i)]) {
        for (int j : nb) out(i, j) = 1.0 / k;
        continue;
      }
      const double dk1 = dv(i, p.kplus1[static_cast<size_t>(i)]);
      double dsum = 0.0;
      for (int j : nb) dsum += dv(i, j);
      const double den = k * dk1 - dsum;
      if (den <= 1e-12) {
        throw NumericError("can_weights: row " + std::to_string(i) +
                           " became degenerate under a frozen ranking");
      }
      for (int j : nb) out(i, j) = (dk1 - dv(i, j)) / den;
    }
    return push(Op::can_weights, std::move(out), {d},
                [d, p, k](Tape& t, const Node& nd) {
                  const Matrix& dv = t.value(d);
                  Matrix& gd = t.grad(d);
                  for (Eigen::Index i = 0; i < dv.rows(); ++i) {
                    if (p.degenerate[static_cast<size_t>(i)]) continue;
                    const auto& nb = p.neighbors[static_cast<size_t>(i)];
                    const int ik1 = p.kplus1[static_cast<size_t>(i)];
                    const double dk1 = dv(i, ik1);
                    double dsum = 0.0;
                    for (int j : nb) dsum += dv(i, j);
                    const double den = k * dk1 - dsum;
                    double s1 = 0.0;
                    double s2 = 0.0;
                    for (int j : nb) {
                      s1 += nd.grad(i, j);
                      s2 += nd.grad(i, j) * nd.value(i, j);
                    }
                    for (int j : nb) gd(i, j) += (s2 - nd.grad(i, j)) / den;
                    gd(i, ik1) += (s1 - k * s2) / den;
                  }
                });
  }

  // Scalar contrast between a similarity matrix and a fused graph, diagonal
  // excluded from every sum:
  //   sum' (g (1-a))^2 / sum' g  +  sum' ((1-g) a)^2 / sum' (1-g).
  // A term whose mass and numerator are both below 1e-12 contributes exactly
  // zero (a two-sample graph has no negative pairs); a vanishing mass with a
  // non-negligible numerator is an empty-graph error.
  int vcr_pair_loss(int a, int g) {
    const Matrix& av = value(a);
    const Matrix& gv = value(g);
    const Eigen::Index n = av.rows();
    if (av.cols() != n) throw ShapeError("vcr_pair_loss: similarities must be square, got " + shape_str(av));
    if (gv.rows() != n || gv.cols() != n) {
      throw ShapeError("vcr_pair_loss: graph " + shape_str(gv) + " vs similarities " + shape_str(av));
    }
    double r1 = 0.0, r2 = 0.0, s1 = 0.0, s2 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double gij = gv(i, j);
        const double aij = av(i, j);
        const double u = gij * (1.0 - aij);
        const double v = (1.0 - gij) * aij;
        r1 += gij;
        r2 += 1.0 - gij;
        s1 += u * u;
        s2 += v * v;
      }
    }
    bool pos_active = true, neg_active = true;
    if (r1 < 1e-12) {
      if (s1 < 1e-12) {
        pos_active = false;
      } else {
        throw NumericError("vcr_pair_loss: positive-pair mass below 1e-12 with nonzero numerator (empty graph)");
      }
    }
    if (r2 < 1e-12) {
      if (s2 < 1e-12) {
        neg_active = false;
      } else {
        throw NumericError("vcr_pair_loss: negative-pair mass below 1e-12 with nonzero numerator (empty graph)");
      }
    }
    const double term1 = pos_active ? s1 / r1 : 0.0;
    const double term2 = neg_active ? s2 / r2 : 0.0;
    Matrix out(1, 1);
    out(0, 0) = term1 + term2;
    return push(Op::vcr_pair_loss, std::move(out), {a, g},
                [a, g, r1, r2, s1, s2, pos_active, neg_active](Tape& t, const Node& nd) {
                  const double g0 = nd.grad(0, 0);
                  if (g0 == 0.0) return;
                  const Matrix& av = t.value(a);
                  const Matrix& gv = t.value(g);
                  Matrix& ga = t.grad(a);
                  Matrix& gg = t.grad(g);
                  const Eigen::Index n = av.rows();
                  for (Eigen::Index i = 0; i < n; ++i) {
                    for (Eigen::Index j = 0; j < n; ++j) {
                      if (i == j) continue;
                      const double gij = gv(i, j);
                      const double aij = av(i, j);
                      const double u = gij * (1.0 - aij);
                      const double v = (1.0 - gij) * aij;
                      double da = 0.0, dg = 0.0;
                      if (pos_active) {
                        da += -2.0 * u * gij / r1;
                        dg += 2.0 * u * (1.0 - aij) / r1 - s1 / (r1 * r1);
                      }
                      if (neg_active) {
                        da += 2.0 * v * (1.0 - gij) / r2;
                        dg += -2.0 * v * aij / r2 + s2 / (r2 * r2);
                      }
                      ga(i, j) += g0 * da;
                      gg(i, j) += g0 * dg;
                    }
                  }
                });
  }

  int sum_all(int x) {
    Matrix out(1, 1);
    out(0, 0) = value(x).sum();
    return push(Op::sum_all, std::move(out), {x}, [x](Tape& t, const Node& n) {
      t.grad(x).array() += n.grad(0, 0);
    });
  }

  int mean_all(int x) {
    const double count = static_cast<double>(value(x).size());
    if (count == 0.0) throw ShapeError("mean_all: empty input");
    Matrix out(1, 1);
    out(0, 0) = value(x).sum() / count;
    return push(Op::mean_all, std::move(out), {x}, [x, count](Tape& t, const Node& n) {
      t.grad(x).array() += n.grad(0, 0) / count;
    });
  }

  int scalar_div(int x, double denom) {
    if (denom == 0.0) throw NumericError("scalar_div: zero divisor");
    Matrix out = value(x) / denom;
    return push(Op::scalar_div, std::move(out), {x}, [x, denom](Tape& t, const Node& n) {
      t.grad(x) += n.grad / denom;
    });
  }

  // Accumulates d(root)/d(node) into every grad buffer. The root must be a
  // scalar. Grads of all nodes up to the root are reset first, so repeated
  // calls on one tape yield independent gradients.
  void backward(int root) {
    if (root < 0 || root >= size()) throw ShapeError("backward: bad root id");
    Node& r = nodes_[static_cast<size_t>(root)];
    if (r.value.rows() != 1 || r.value.cols() != 1) {
      throw ShapeError("backward: root must be 1x1, got " + shape_str(r.value));
    }
    for (int id = 0; id <= root; ++id) {
      Node& nd = nodes_[static_cast<size_t>(id)];
      nd.grad = Matrix::Zero(nd.value.rows(), nd.value.cols());
    }
    r.grad(0, 0) = 1.0;
    std::vector<char> live(static_cast<size_t>(root) + 1, 0);
    live[static_cast<size_t>(root)] = 1;
    for (int id = root; id >= 0; --id) {
      if (!live[static_cast<size_t>(id)]) continue;
      Node& nd = nodes_[static_cast<size_t>(id)];
      for (int p : nd.parents) live[static_cast<size_t>(p)] = 1;
      if (nd.backward) nd.backward(*this, nd);
    }
  }

 private:
  int push(Op op, Matrix value, std::vector<int> parents,
           std::function<void(Tape&, const Node&)> backward) {
    check_finite(value, op_name(op));
    Node nd;
    nd.op = op;
    nd.value = std::move(value);
    nd.parents = std::move(parents);
    nd.backward = std::move(backward);
    nodes_.push_back(std::move(nd));
    return size() - 1;
  }

  std::vector<Node> nodes_;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  int leaf = -1;
  int row = -1;
  int col = -1;
  double analytic = 0.0;
  double fd = 0.0;
};

// Central finite differences against tape gradients. `build` must construct
// a scalar root from leaves created in the order of `inputs`; it is invoked
// on a fresh tape for every probe, so it has to be deterministic. Relative
// error uses max(1, |fd|) in the denominator. `max_entries_per_leaf` > 0
// subsamples large leaves with the given rng seed.
inline GradCheckResult grad_check(
    const std::function<int(Tape&, const std::vector<int>&)>& build,
    const std::vector<Matrix>& inputs, double step, int max_entries_per_leaf = 0,
    std::uint64_t sample_seed = 0) {
  if (!(step > 0.0) || step > 1e-2) {
    throw std::invalid_argument("grad_check: step must lie in (0, 1e-2]");
  }
  auto eval = [&](const std::vector<Matrix>& vals, std::vector<Matrix>* grads) {
    Tape tape;
    std::vector<int> leaves;
    leaves.reserve(vals.size());
    for (const Matrix& v : vals) leaves.push_back(tape.leaf(v));
    const int root = build(tape, leaves);
    if (tape.value(root).rows() != 1 || tape.value(root).cols() != 1) {
      throw ShapeError("grad_check: build must return a scalar node");
    }
    const double y = tape.value(root)(0, 0);
    if (grads) {
      tape.backward(root);
      grads->clear();
      for (int id : leaves) grads->push_back(tape.grad(id));
    }
    return y;
  };

  std::vector<Matrix> analytic;
  eval(inputs, &analytic);

  Rng rng(mix_seed(sample_seed, 0x67726164u));
  GradCheckResult res;
  std::vector<Matrix> probe = inputs;
  for (size_t l = 0; l < inputs.size(); ++l) {
    const Eigen::Index total = inputs[l].size();
    std::vector<Eigen::Index> picks;
    if (max_entries_per_leaf > 0 && total > max_entries_per_leaf) {
      for (int s = 0; s < max_entries_per_leaf; ++s) {
        picks.push_back(static_cast<Eigen::Index>(rng.below(static_cast<int>(total))));
      }
    } else {
      for (Eigen::Index e = 0; e < total; ++e) picks.push_back(e);
    }
    for (Eigen::Index e : picks) {
      const Eigen::Index i = e / inputs[l].cols();
      const Eigen::Index j = e % inputs[l].cols();
      const double saved = probe[l](i, j);
      probe[l](i, j) = saved + step;
      const double yp = eval(probe, nullptr);
      probe[l](i, j) = saved - step;
      const double ym = eval(probe, nullptr);
      probe[l](i, j) = saved;
      if (!std::isfinite(yp) || !std::isfinite(ym)) {
        throw NumericError("grad_check: non-finite finite-difference probe");
      }
      const double fd = (yp - ym) / (2.0 * step);
      const double an = analytic[l](i, j);
      const double rel = std::abs(an - fd) / std::max(1.0, std::abs(fd));
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.leaf = static_cast<int>(l);
        res.row = static_cast<int>(i);
        res.col = static_cast<int>(j);
        res.analytic = an;
        res.fd = fd;
      }
    }
  }
  return res;
}

}  // namespace bmvc
