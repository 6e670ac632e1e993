#pragma once

#include "bmvc/data.hpp"
#include "bmvc/graph.hpp"
#include "bmvc/loss.hpp"
#include "bmvc/matrix.hpp"
#include "bmvc/model.hpp"
#include "bmvc/parallel.hpp"
#include "bmvc/tape.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace bmvc {

struct TrainConfig {
  double lambda = 10.0;
  double learning_rate = 0.001;
  int epochs = 3000;
  int k_neighbors = 10;
  int n_clusters = 2;
  FusionMode fusion = FusionMode::cat;
  LossMode mode = LossMode::rec_vcr;
  int graph_refresh = 1;
  std::uint64_t seed = 0;
  std::vector<int> hidden = {196, 128};
  int latent = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Invoked after each completed epoch (checkpoint scheduling and the like).
  std::function<void(int, const ModelParams&)> epoch_callback;

  void validate() const {
    if (lambda < 0.0) throw std::invalid_argument("train: lambda must be >= 0");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be > 0");
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (graph_refresh < 1) throw std::invalid_argument("train: graph refresh interval must be >= 1");
    if (k_neighbors < 1) throw std::invalid_argument("train: k_neighbors must be >= 1");
    if (n_clusters < 2) throw std::invalid_argument("train: n_clusters must be >= 2");
    if (mode != LossMode::rec && latent < n_clusters) {
      throw std::invalid_argument(
          "train: latent width must be >= n_clusters when the VCR term is active "
          "(cluster indicators cannot reach full rank otherwise)");
    }
  }
};

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;
  std::vector<double> gnorm_rec;  // per view, L2 norm of encoder grads on the reconstruction path
  std::vector<double> gnorm_vcr;  // per view, L2 norm of lambda * (encoder grads on the VCR path)
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

// Standard Adam with bias correction over the flat parameter list.
inline void adam_step(ModelParams& params, const std::vector<Matrix>& grads, AdamState& state,
                      const TrainConfig& cfg) {
  std::vector<Matrix*> ptrs = param_ptrs(params);
  if (grads.size() != ptrs.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(ptrs.size()) + " parameters");
  }
  if (state.step == 0) {
    state.m.clear();
    state.v.clear();
    for (const Matrix* p : ptrs) {
      state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  for (const Matrix& g : grads) {
    if (!g.allFinite()) throw NumericError("adam_step: non-finite gradient");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (size_t i = 0; i < ptrs.size(); ++i) {
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grads[i];
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grads[i].cwiseProduct(grads[i]);
    const Matrix mhat = m / c1;
    const Matrix vhat = v / c2;
    const Matrix denom = (vhat.array().sqrt() + cfg.adam_eps).matrix();
    *ptrs[i] -= cfg.learning_rate * mhat.cwiseQuotient(denom);
  }
}

namespace detail {

inline std::vector<Matrix> collect_flat_grads(const Tape& t, const BoundParams& bp) {
  std::vector<Matrix> out;
  out.reserve(bp.flat.size());
  for (int id : bp.flat) out.push_back(t.grad(id));
  return out;
}

// L2 norm of each view's encoder gradient block in the current grads.
inline std::vector<double> encoder_grad_norms(const Tape& t, const BoundParams& bp) {
  std::vector<double> out;
  for (const auto& layers : bp.enc) {
    double sq = 0.0;
    for (const auto& [w, b] : layers) {
      sq += t.grad(w).squaredNorm() + t.grad(b).squaredNorm();
    }
    out.push_back(std::sqrt(sq));
  }
  return out;
}

}  // namespace detail

// Per-view encoder gradient norms from the two loss paths, via one backward
// pass per active component on the shared forward tape. Inactive paths give
// zero norms. The VCR entry reports |lambda * grad|, the magnitude actually
// entering the parameter update.
struct GradNormSplit {
  std::vector<double> rec;
  std::vector<double> vcr;
};

inline GradNormSplit per_view_grad_norms(Tape& t, const BoundParams& bp, const LossNodes& loss) {
  GradNormSplit out;
  const size_t m = bp.enc.size();
  out.rec.assign(m, 0.0);
  out.vcr.assign(m, 0.0);
  if (loss.rec_sum >= 0) {
    t.backward(loss.rec_sum);
    out.rec = detail::encoder_grad_norms(t, bp);
  }
  if (loss.vcr_sum >= 0) {
    t.backward(loss.vcr_sum);
    out.vcr = detail::encoder_grad_norms(t, bp);
    for (double& x : out.vcr) x *= loss.breakdown.lambda;
  }
  return out;
}

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

namespace detail {

inline void check_unit_range(const std::vector<Matrix>& views) {
  for (size_t r = 0; r < views.size(); ++r) {
    const double lo = views[r].minCoeff();
    const double hi = views[r].maxCoeff();
    if (lo < -1e-12 || hi > 1.0 + 1e-12) {
      throw std::invalid_argument("train: view " + std::to_string(r + 1) +
                                  " is not scaled to [0,1] (range [" + format_g17(lo) + ", " +
                                  format_g17(hi) + "]); apply minmax_scale first");
    }
  }
}

}  // namespace detail

// Full-batch training. Per epoch: encode every view, fuse, decode (modes
// with reconstruction), build per-view orthonormal indicators and fused
// graphs (modes with VCR), assemble the objective, run one backward pass per
// loss component, combine gradients by linearity, and take one Adam step
// over all parameters jointly.
//
// View graphs are built once from the input features. The joint graph's
// neighbor plan is rebuilt from current F every `graph_refresh` epochs; in
// between, weights stay differentiable under the frozen plan.
//
// A rank-deficient projection head gets re-initialized from a shifted seed
// and the epoch is rebuilt, at most 3 times per epoch. Non-finite values
// abort with the epoch index.
inline TrainResult train(const ViewDataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  dataset.validate();
  const int m = dataset.view_count();
  const int n = dataset.samples();
  if (n < cfg.n_clusters) throw std::invalid_argument("train: fewer samples than clusters");
  detail::check_unit_range(dataset.views);

  ModelConfig mc;
  for (const Matrix& v : dataset.views) mc.view_dims.push_back(static_cast<int>(v.cols()));
  mc.n_clusters = cfg.n_clusters;
  mc.fusion = cfg.fusion;
  mc.hidden = cfg.hidden;
  mc.latent = cfg.latent;

  const bool wants_vcr = cfg.mode != LossMode::rec;
  const bool wants_rec = cfg.mode != LossMode::vcr;
  if (wants_vcr) check_neighbor_count(n, cfg.k_neighbors, "train");

  TrainResult result;
  result.params = init_params(mc, cfg.seed);

  std::vector<Matrix> view_graphs;
  if (wants_vcr) {
    for (const Matrix& v : dataset.views) view_graphs.push_back(dense(can_graph(v, cfg.k_neighbors)));
  }

  AdamState adam;
  NeighborPlan plan;
  bool have_plan = false;
  int reinit_count = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    bool epoch_done = false;
    for (int attempt = 0; !epoch_done; ++attempt) {
      int rank_failed_view = -1;
      try {
        Tape tape;
        BoundParams bp = bind_params(tape, result.params);
        std::vector<int> xs, zs;
        for (const Matrix& v : dataset.views) xs.push_back(tape.constant(v));
        for (int r = 0; r < m; ++r) zs.push_back(encode(tape, bp, xs[static_cast<size_t>(r)], r));
        const int f = fuse_features(tape, mc, bp, zs);

        std::vector<int> xhats, cs, ghats;
        if (wants_rec) {
          for (int r = 0; r < m; ++r) xhats.push_back(decode(tape, bp, f, r));
        }
        if (wants_vcr) {
          if (!have_plan || (epoch - 1) % cfg.graph_refresh == 0) {
            plan = make_neighbor_plan(sq_dist_matrix(tape.value(f)), cfg.k_neighbors);
            have_plan = true;
          }
          const int gbar = joint_graph_node(tape, f, plan);
          for (int r = 0; r < m; ++r) {
            const int gview = tape.constant(view_graphs[static_cast<size_t>(r)]);
            ghats.push_back(tape.weighted_sum({gview, gbar}, {0.5, 0.5}));
          }
          for (int r = 0; r < m; ++r) {
            try {
              cs.push_back(cluster_indicators(tape, bp, zs[static_cast<size_t>(r)], r));
            } catch (const RankError&) {
              rank_failed_view = r;
              throw;
            }
          }
        }

        LossNodes loss = total_loss(tape, xhats, xs, cs, ghats, cfg.lambda, cfg.mode);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = loss.breakdown;
        rec.gnorm_rec.assign(static_cast<size_t>(m), 0.0);
        rec.gnorm_vcr.assign(static_cast<size_t>(m), 0.0);

        std::vector<Matrix> total_grads;
        if (loss.rec_sum >= 0) {
          tape.backward(loss.rec_sum);
          rec.gnorm_rec = detail::encoder_grad_norms(tape, bp);
          total_grads = detail::collect_flat_grads(tape, bp);
        }
        if (loss.vcr_sum >= 0) {
          tape.backward(loss.vcr_sum);
          rec.gnorm_vcr = detail::encoder_grad_norms(tape, bp);
          for (double& x : rec.gnorm_vcr) x *= cfg.lambda;
          std::vector<Matrix> vg = detail::collect_flat_grads(tape, bp);
          if (total_grads.empty()) {
            for (Matrix& g : vg) g *= cfg.lambda;
            total_grads = std::move(vg);
          } else {
            for (size_t i = 0; i < vg.size(); ++i) total_grads[i] += cfg.lambda * vg[i];
          }
        }

        adam_step(result.params, total_grads, adam, cfg);

        rec.seconds = repro_mode()
                          ? 0.0
                          : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.epochs.push_back(std::move(rec));
        epoch_done = true;
      } catch (const RankError& e) {
        if (attempt >= 3) {
          throw RankError("epoch " + std::to_string(epoch) + ": " + e.what() +
                              " (3 re-initializations exhausted)",
                          e.column);
        }
        ++reinit_count;
        Rng rng(mix_seed(cfg.seed, 0x70726f6aull, static_cast<std::uint64_t>(reinit_count)));
        const size_t rv = rank_failed_view >= 0 ? static_cast<size_t>(rank_failed_view) : 0;
        Matrix& w = result.params.proj[rv];
        w = glorot_matrix(rng, static_cast<int>(w.rows()), static_cast<int>(w.cols()));
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    if (cfg.epoch_callback) cfg.epoch_callback(epoch, result.params);
  }
  return result;
}

// Latents and joint representation at the current parameters, no gradients.
struct ForwardSnapshot {
  std::vector<Matrix> z;
  Matrix f;
};

inline ForwardSnapshot forward_snapshot(const ModelParams& params, const std::vector<Matrix>& views) {
  if (static_cast<int>(views.size()) != params.config.views()) {
    throw ShapeError("forward_snapshot: view count mismatch");
  }
  Tape tape;
  BoundParams bp = bind_params(tape, params);
  std::vector<int> zs;
  for (size_t r = 0; r < views.size(); ++r) {
    zs.push_back(encode(tape, bp, tape.constant(views[r]), static_cast<int>(r)));
  }
  const int f = fuse_features(tape, params.config, bp, zs);
  ForwardSnapshot snap;
  for (int z : zs) snap.z.push_back(tape.value(z));
  snap.f = tape.value(f);
  return snap;
}

// Contrastive value per view at the current parameters: the same fused
// graphs and indicators the training objective uses, fresh neighbor plan
// from current F, no gradients.
inline std::vector<double> per_view_vcr_values(const ModelParams& params,
                                               const std::vector<Matrix>& views, int k_neighbors) {
  Tape tape;
  BoundParams bp = bind_params(tape, params);
  const int m = params.config.views();
  std::vector<int> zs;
  for (int r = 0; r < m; ++r) {
    zs.push_back(encode(tape, bp, tape.constant(views[static_cast<size_t>(r)]), r));
  }
  const int f = fuse_features(tape, params.config, bp, zs);
  const int gbar = joint_graph_node(tape, f, k_neighbors);
  std::vector<double> out;
  for (int r = 0; r < m; ++r) {
    const int gview = tape.constant(dense(can_graph(views[static_cast<size_t>(r)], k_neighbors)));
    const int ghat = tape.weighted_sum({gview, gbar}, {0.5, 0.5});
    const int c = cluster_indicators(tape, bp, zs[static_cast<size_t>(r)], r);
    out.push_back(tape.value(vcr_loss(tape, c, ghat))(0, 0));
  }
  return out;
}

// CSV schema: epoch,total,rec_<r>...,vcr_<r>...,gnorm_rec_<r>...,
// gnorm_vcr_<r>...,seconds with 1-based view indices and 17 significant
// digits. `seconds` is wall-clock per epoch, 0 under BMVC_THREADS=0 so
// reruns are byte-identical.
inline void write_history_csv(const TrainHistory& history, int views, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_history_csv: cannot open " + path);
  out << "epoch,total";
  for (int r = 1; r <= views; ++r) out << ",rec_" << r;
  for (int r = 1; r <= views; ++r) out << ",vcr_" << r;
  for (int r = 1; r <= views; ++r) out << ",gnorm_rec_" << r;
  for (int r = 1; r <= views; ++r) out << ",gnorm_vcr_" << r;
  out << ",seconds\n";
  for (const EpochRecord& e : history.epochs) {
    out << e.epoch << "," << format_g17(e.loss.total);
    for (int r = 0; r < views; ++r) out << "," << format_g17(e.loss.rec[static_cast<size_t>(r)]);
    for (int r = 0; r < views; ++r) out << "," << format_g17(e.loss.vcr[static_cast<size_t>(r)]);
    for (int r = 0; r < views; ++r) out << "," << format_g17(e.gnorm_rec[static_cast<size_t>(r)]);
    for (int r = 0; r < views; ++r) out << "," << format_g17(e.gnorm_vcr[static_cast<size_t>(r)]);
    out << "," << format_g17(e.seconds) << "\n";
  }
  if (!out.good()) throw std::runtime_error("write_history_csv: write failed for " + path);
}

}  // namespace bmvc
