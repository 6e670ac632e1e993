#pragma once

#include "bmvc/matrix.hpp"
#include "bmvc/tape.hpp"

#include <string>
#include <vector>

namespace bmvc {

// rec: reconstruction only. vcr: contrastive regularizer only (scaled by
// lambda). rec_vcr: the full objective.
enum class LossMode { rec, vcr, rec_vcr };

inline const char* loss_mode_name(LossMode m) {
  switch (m) {
    case LossMode::rec: return "rec";
    case LossMode::vcr: return "vcr";
    case LossMode::rec_vcr: return "rec+vcr";
  }
  return "?";
}

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "rec") return LossMode::rec;
  if (s == "vcr") return LossMode::vcr;
  if (s == "rec+vcr") return LossMode::rec_vcr;
  throw std::invalid_argument("unknown loss mode '" + s + "' (expected rec|vcr|rec+vcr)");
}

// Per-view loss components of one forward pass. Components outside the
// active mode are zero, so total == sum(rec) + lambda * sum(vcr) holds in
// every mode.
struct LossBreakdown {
  double total = 0.0;
  std::vector<double> rec;
  std::vector<double> vcr;
  double lambda = 0.0;
};

// Node handles of an assembled objective. rec_sum / vcr_sum are -1 when the
// mode excludes the corresponding term.
struct LossNodes {
  int total = -1;
  int rec_sum = -1;
  int vcr_sum = -1;
  std::vector<int> rec_terms;
  std::vector<int> vcr_terms;
  LossBreakdown breakdown;
};

// Mean squared error over all entries.
inline int reconstruction_loss(Tape& t, int xhat, int x) {
  const int diff = t.weighted_sum({xhat, x}, {1.0, -1.0});
  return t.mean_all(t.cwise_square(diff));
}

// Weighted contrast between the cosine similarities of the indicator rows
// and a fused graph.
inline int vcr_loss(Tape& t, int c, int ghat) {
  return t.vcr_pair_loss(t.cosine_similarity(c), ghat);
}

// Assembles the objective for the given mode. xhats/xs feed the
// reconstruction term, cs/ghats the contrastive term; inactive inputs may be
// empty. Sums over views, contrastive part scaled by lambda.
inline LossNodes total_loss(Tape& t, const std::vector<int>& xhats, const std::vector<int>& xs,
                            const std::vector<int>& cs, const std::vector<int>& ghats,
                            double lambda, LossMode mode) {
  if (lambda < 0.0) throw std::invalid_argument("total_loss: lambda must be >= 0");
  LossNodes out;
  out.breakdown.lambda = lambda;
  size_t views = 0;
  if (mode != LossMode::vcr) {
    if (xhats.empty() || xhats.size() != xs.size()) {
      throw ShapeError("total_loss: reconstruction inputs must pair up per view");
    }
    views = xhats.size();
    for (size_t r = 0; r < views; ++r) out.rec_terms.push_back(reconstruction_loss(t, xhats[r], xs[r]));
    out.rec_sum = t.weighted_sum(out.rec_terms, std::vector<double>(views, 1.0));
  }
  if (mode != LossMode::rec) {
    if (cs.empty() || cs.size() != ghats.size()) {
      throw ShapeError("total_loss: contrastive inputs must pair up per view");
    }
    if (views != 0 && cs.size() != views) {
      throw ShapeError("total_loss: view count mismatch between loss terms");
    }
    views = cs.size();
    for (size_t r = 0; r < views; ++r) out.vcr_terms.push_back(vcr_loss(t, cs[r], ghats[r]));
    out.vcr_sum = t.weighted_sum(out.vcr_terms, std::vector<double>(views, 1.0));
  }
  switch (mode) {
    case LossMode::rec: out.total = out.rec_sum; break;
    case LossMode::vcr: out.total = t.weighted_sum({out.vcr_sum}, {lambda}); break;
    case LossMode::rec_vcr: out.total = t.weighted_sum({out.rec_sum, out.vcr_sum}, {1.0, lambda}); break;
  }
  out.breakdown.total = t.value(out.total)(0, 0);
  out.breakdown.rec.assign(views, 0.0);
  out.breakdown.vcr.assign(views, 0.0);
  for (size_t r = 0; r < out.rec_terms.size(); ++r) {
    out.breakdown.rec[r] = t.value(out.rec_terms[r])(0, 0);
  }
  for (size_t r = 0; r < out.vcr_terms.size(); ++r) {
    out.breakdown.vcr[r] = t.value(out.vcr_terms[r])(0, 0);
  }
  return out;
}

}  // namespace bmvc
