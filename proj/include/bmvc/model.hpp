#pragma once

#include "bmvc/matrix.hpp"
#include "bmvc/rng.hpp"
#include "bmvc/tape.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

namespace bmvc {

// cat: concatenate latents, affine back to the latent width.
// asum: plain average of the view latents.
// wsum: per-sample softmax weights from learned per-view score heads.
enum class FusionMode { cat, asum, wsum };

inline const char* fusion_name(FusionMode m) {
  switch (m) {
    case FusionMode::cat: return "cat";
    case FusionMode::asum: return "asum";
    case FusionMode::wsum: return "wsum";
  }
  return "?";
}

inline FusionMode parse_fusion(const std::string& s) {
  if (s == "cat") return FusionMode::cat;
  if (s == "asum") return FusionMode::asum;
  if (s == "wsum") return FusionMode::wsum;
  throw std::invalid_argument("unknown fusion mode '" + s + "' (expected cat|asum|wsum)");
}

struct ModelConfig {
  std::vector<int> view_dims;
  int n_clusters = 2;
  FusionMode fusion = FusionMode::cat;
  std::vector<int> hidden = {196, 128};
  int latent = 64;

  int views() const { return static_cast<int>(view_dims.size()); }

  bool operator==(const ModelConfig& o) const {
    return view_dims == o.view_dims && n_clusters == o.n_clusters && fusion == o.fusion &&
           hidden == o.hidden && latent == o.latent;
  }

  void validate() const {
    if (view_dims.empty()) throw std::invalid_argument("model: need at least one view");
    for (int d : view_dims) {
      if (d < 1) throw std::invalid_argument("model: view dimension must be >= 1");
    }
    if (n_clusters < 2) throw std::invalid_argument("model: n_clusters must be >= 2");
    for (int h : hidden) {
      if (h < 1) throw std::invalid_argument("model: hidden width must be >= 1");
    }
    if (latent < 1) throw std::invalid_argument("model: latent width must be >= 1");
  }

  // Encoder layer sizes for view r: D^r -> hidden... -> latent.
  std::vector<int> encoder_sizes(int r) const {
    std::vector<int> s;
    s.push_back(view_dims[static_cast<size_t>(r)]);
    s.insert(s.end(), hidden.begin(), hidden.end());
    s.push_back(latent);
    return s;
  }

  // Decoder mirrors the encoder: latent -> reversed hidden -> D^r.
  std::vector<int> decoder_sizes(int r) const {
    std::vector<int> s;
    s.push_back(latent);
    s.insert(s.end(), hidden.rbegin(), hidden.rend());
    s.push_back(view_dims[static_cast<size_t>(r)]);
    return s;
  }
};

// One affine layer: W is (in, out), b a column of length out.
struct Dense {
  Matrix W;
  Matrix b;
};

struct ModelParams {
  ModelConfig config;
  std::vector<std::vector<Dense>> encoders;
  std::vector<std::vector<Dense>> decoders;
  std::vector<Dense> fusion;  // cat: one (M*latent, latent) layer; wsum: M score heads (latent, 1); asum: none
  std::vector<Matrix> proj;   // per view, (latent, n_clusters)
};

// Declaration order of every parameter matrix. All flattening (checkpoints,
// Adam state, gradient collection, leaf binding) goes through this one walk.
template <typename P, typename Fn>
inline void for_each_param(P& params, Fn&& fn) {
  for (auto& layers : params.encoders) {
    for (auto& l : layers) {
      fn(l.W);
      fn(l.b);
    }
  }
  for (auto& layers : params.decoders) {
    for (auto& l : layers) {
      fn(l.W);
      fn(l.b);
    }
  }
  for (auto& l : params.fusion) {
    fn(l.W);
    fn(l.b);
  }
  for (auto& w : params.proj) fn(w);
}

inline int param_count(const ModelParams& p) {
  int n = 0;
  for_each_param(p, [&](const Matrix&) { ++n; });
  return n;
}

inline std::vector<Matrix*> param_ptrs(ModelParams& p) {
  std::vector<Matrix*> out;
  for_each_param(p, [&](Matrix& m) { out.push_back(&m); });
  return out;
}

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Matrix glorot_matrix(Rng& rng, int in, int out) {
  const double a = std::sqrt(6.0 / (in + out));
  Matrix w(in, out);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-a, a);
  }
  return w;
}

// Glorot-uniform weights, zero biases, one seeded stream consumed in
// declaration order so parameters are a pure function of (config, seed).
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config = config;
  Rng rng(mix_seed(seed, 0x706172616d73ull));
  auto glorot = [&](int in, int out) { return glorot_matrix(rng, in, out); };
  auto stack = [&](const std::vector<int>& sizes) {
    std::vector<Dense> layers;
    for (size_t l = 0; l + 1 < sizes.size(); ++l) {
      Dense d;
      d.W = glorot(sizes[l], sizes[l + 1]);
      d.b = Matrix::Zero(sizes[l + 1], 1);
      layers.push_back(std::move(d));
    }
    return layers;
  };
  const int m = config.views();
  for (int r = 0; r < m; ++r) p.encoders.push_back(stack(config.encoder_sizes(r)));
  for (int r = 0; r < m; ++r) p.decoders.push_back(stack(config.decoder_sizes(r)));
  if (config.fusion == FusionMode::cat) {
    Dense d;
    d.W = glorot(m * config.latent, config.latent);
    d.b = Matrix::Zero(config.latent, 1);
    p.fusion.push_back(std::move(d));
  } else if (config.fusion == FusionMode::wsum) {
    for (int r = 0; r < m; ++r) {
      Dense d;
      d.W = glorot(config.latent, 1);
      d.b = Matrix::Zero(1, 1);
      p.fusion.push_back(std::move(d));
    }
  }
  for (int r = 0; r < m; ++r) p.proj.push_back(glorot(config.latent, config.n_clusters));
  return p;
}

// Leaf ids for every parameter, both flat (declaration order) and grouped
// for the forward pass.
struct BoundParams {
  std::vector<int> flat;
  std::vector<std::vector<std::pair<int, int>>> enc;
  std::vector<std::vector<std::pair<int, int>>> dec;
  std::vector<std::pair<int, int>> fus;
  std::vector<int> proj;
};

inline BoundParams bind_params(Tape& t, const ModelParams& p) {
  BoundParams b;
  auto leaf = [&](const Matrix& m) {
    const int id = t.leaf(m);
    b.flat.push_back(id);
    return id;
  };
  for (const auto& layers : p.encoders) {
    b.enc.emplace_back();
    for (const auto& l : layers) {
      const int w = leaf(l.W);
      const int bias = leaf(l.b);
      b.enc.back().emplace_back(w, bias);
    }
  }
  for (const auto& layers : p.decoders) {
    b.dec.emplace_back();
    for (const auto& l : layers) {
      const int w = leaf(l.W);
      const int bias = leaf(l.b);
      b.dec.back().emplace_back(w, bias);
    }
  }
  for (const auto& l : p.fusion) {
    const int w = leaf(l.W);
    const int bias = leaf(l.b);
    b.fus.emplace_back(w, bias);
  }
  for (const auto& w : p.proj) b.proj.push_back(leaf(w));
  return b;
}

// ReLU hidden layers, linear final layer.
inline int run_stack(Tape& t, const std::vector<std::pair<int, int>>& layers, int x) {
  int h = x;
  for (size_t l = 0; l < layers.size(); ++l) {
    h = t.affine(h, layers[l].first, layers[l].second);
    if (l + 1 < layers.size()) h = t.relu(h);
  }
  return h;
}

inline int encode(Tape& t, const BoundParams& bp, int x, int r) {
  return run_stack(t, bp.enc[static_cast<size_t>(r)], x);
}

inline int decode(Tape& t, const BoundParams& bp, int f, int r) {
  return run_stack(t, bp.dec[static_cast<size_t>(r)], f);
}

inline int fuse_features(Tape& t, const ModelConfig& cfg, const BoundParams& bp,
                         const std::vector<int>& zs) {
  if (static_cast<int>(zs.size()) != cfg.views()) {
    throw ShapeError("fuse_features: got " + std::to_string(zs.size()) + " latents for " +
                     std::to_string(cfg.views()) + " views");
  }
  const int m = cfg.views();
  switch (cfg.fusion) {
    case FusionMode::cat:
      return t.affine(t.concat_cols(zs), bp.fus[0].first, bp.fus[0].second);
    case FusionMode::asum:
      return t.weighted_sum(zs, std::vector<double>(zs.size(), 1.0 / m));
    case FusionMode::wsum: {
      std::vector<int> scores;
      for (int r = 0; r < m; ++r) {
        scores.push_back(t.affine(zs[static_cast<size_t>(r)], bp.fus[static_cast<size_t>(r)].first,
                                  bp.fus[static_cast<size_t>(r)].second));
      }
      const int weights = t.row_softmax(t.concat_cols(scores));
      std::vector<int> scaled;
      for (int r = 0; r < m; ++r) {
        scaled.push_back(t.scale_rows(zs[static_cast<size_t>(r)], t.slice_col(weights, r)));
      }
      return t.weighted_sum(scaled, std::vector<double>(scaled.size(), 1.0));
    }
  }
  throw std::logic_error("fuse_features: unreachable");
}

// Orthonormal clustering indicators: QR of the projected latent. Propagates
// RankError when the projection collapses.
inline int cluster_indicators(Tape& t, const BoundParams& bp, int z, int r) {
  return t.qr_orthonormalize(t.matmul(z, bp.proj[static_cast<size_t>(r)]));
}

// --- checkpoint serialization -------------------------------------------
// Little-endian binary: magic "BMVC", format version, architecture dims,
// then every parameter value in declaration order.

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated payload");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const ModelParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write("BMVC", 4);
  detail::put_u32(out, kCheckpointVersion);
  const ModelConfig& c = p.config;
  detail::put_u32(out, static_cast<std::uint32_t>(c.views()));
  for (int d : c.view_dims) detail::put_u32(out, static_cast<std::uint32_t>(d));
  detail::put_u32(out, static_cast<std::uint32_t>(c.n_clusters));
  detail::put_u32(out, static_cast<std::uint32_t>(c.fusion));
  detail::put_u32(out, static_cast<std::uint32_t>(c.hidden.size()));
  for (int h : c.hidden) detail::put_u32(out, static_cast<std::uint32_t>(h));
  detail::put_u32(out, static_cast<std::uint32_t>(c.latent));
  for_each_param(p, [&](const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) detail::put_f64(out, m(i, j));
    }
  });
  if (!out.good()) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "BMVC", 4) != 0) {
    throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint (bad magic)");
  }
  const std::uint32_t version = detail::get_u32(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("load_checkpoint: unsupported format version " + std::to_string(version));
  }
  ModelConfig c;
  const std::uint32_t m = detail::get_u32(in);
  c.view_dims.resize(m);
  for (auto& d : c.view_dims) d = static_cast<int>(detail::get_u32(in));
  c.n_clusters = static_cast<int>(detail::get_u32(in));
  const std::uint32_t fu = detail::get_u32(in);
  if (fu > 2) throw std::runtime_error("load_checkpoint: bad fusion tag");
  c.fusion = static_cast<FusionMode>(fu);
  c.hidden.resize(detail::get_u32(in));
  for (auto& h : c.hidden) h = static_cast<int>(detail::get_u32(in));
  c.latent = static_cast<int>(detail::get_u32(in));
  ModelParams p = init_params(c, 0);
  for_each_param(p, [&](Matrix& mat) {
    for (Eigen::Index i = 0; i < mat.rows(); ++i) {
      for (Eigen::Index j = 0; j < mat.cols(); ++j) mat(i, j) = detail::get_f64(in);
    }
  });
  char extra;
  if (in.read(&extra, 1)) throw std::runtime_error("load_checkpoint: trailing bytes in " + path);
  return p;
}

}  // namespace bmvc
