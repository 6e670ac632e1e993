#include "bmvc/model.hpp"

#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

using namespace bmvc;

namespace {

ModelConfig small_config(FusionMode fusion = FusionMode::cat) {
  ModelConfig c;
  c.view_dims = {5, 9};
  c.n_clusters = 3;
  c.fusion = fusion;
  c.hidden = {12, 7};
  c.latent = 6;
  return c;
}

std::vector<const Matrix*> collect(const ModelParams& p) {
  std::vector<const Matrix*> out;
  for_each_param(p, [&](const Matrix& m) { out.push_back(&m); });
  return out;
}

bool bitwise_equal(const ModelParams& a, const ModelParams& b) {
  const auto pa = collect(a);
  const auto pb = collect(b);
  if (pa.size() != pb.size()) return false;
  for (size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->rows() != pb[i]->rows() || pa[i]->cols() != pb[i]->cols()) return false;
    if ((*pa[i] - *pb[i]).cwiseAbs().maxCoeff() != 0.0) return false;
  }
  return true;
}

Matrix random_input(Rng& rng, int n, int d) {
  Matrix x(n, d);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.uniform(0.0, 1.0);
  }
  return x;
}

}  // namespace

TEST_CASE("initialization is a pure function of config and seed") {
  const ModelConfig c = small_config();
  const ModelParams a = init_params(c, 7);
  const ModelParams b = init_params(c, 7);
  const ModelParams other = init_params(c, 8);
  CHECK(bitwise_equal(a, b));
  CHECK_FALSE(bitwise_equal(a, other));
}

TEST_CASE("parameter shapes follow the architecture") {
  const ModelConfig c = small_config();
  const ModelParams p = init_params(c, 1);

  REQUIRE(p.encoders.size() == 2);
  REQUIRE(p.decoders.size() == 2);
  for (int r = 0; r < 2; ++r) {
    const auto enc_sizes = c.encoder_sizes(r);
    const auto dec_sizes = c.decoder_sizes(r);
    const auto& enc = p.encoders[static_cast<size_t>(r)];
    const auto& dec = p.decoders[static_cast<size_t>(r)];
    REQUIRE(enc.size() + 1 == enc_sizes.size());
    REQUIRE(dec.size() + 1 == dec_sizes.size());
    for (size_t l = 0; l < enc.size(); ++l) {
      CHECK(enc[l].W.rows() == enc_sizes[l]);
      CHECK(enc[l].W.cols() == enc_sizes[l + 1]);
      CHECK(enc[l].b.rows() == enc_sizes[l + 1]);
      CHECK(enc[l].b.cols() == 1);
      CHECK(enc[l].b.cwiseAbs().maxCoeff() == 0.0);
    }
    for (size_t l = 0; l < dec.size(); ++l) {
      CHECK(dec[l].W.rows() == dec_sizes[l]);
      CHECK(dec[l].W.cols() == dec_sizes[l + 1]);
    }
  }

  REQUIRE(p.fusion.size() == 1);
  CHECK(p.fusion[0].W.rows() == 2 * c.latent);
  CHECK(p.fusion[0].W.cols() == c.latent);

  REQUIRE(p.proj.size() == 2);
  for (const Matrix& w : p.proj) {
    CHECK(w.rows() == c.latent);
    CHECK(w.cols() == c.n_clusters);
  }

  CHECK(init_params(small_config(FusionMode::asum), 1).fusion.empty());
  const ModelParams ws = init_params(small_config(FusionMode::wsum), 1);
  REQUIRE(ws.fusion.size() == 2);
  for (const Dense& d : ws.fusion) {
    CHECK(d.W.rows() == c.latent);
    CHECK(d.W.cols() == 1);
  }

  CHECK(param_count(p) == static_cast<int>(collect(p).size()));
  ModelParams mut = p;
  CHECK(param_ptrs(mut).size() == collect(p).size());
}

TEST_CASE("weight entries respect the glorot bound") {
  Rng rng(mix_seed(21, 1));
  const int in = 40, out = 30;
  const Matrix w = glorot_matrix(rng, in, out);
  const double a = std::sqrt(6.0 / (in + out));
  CHECK(w.maxCoeff() <= a);
  CHECK(w.minCoeff() >= -a);
  // A 1200-entry draw should sprawl across the interval, not hug zero.
  CHECK(w.maxCoeff() > 0.8 * a);
  CHECK(w.minCoeff() < -0.8 * a);
  CHECK(std::abs(w.mean()) < 0.1 * a);
}

TEST_CASE("forward pass shapes and fusion identities") {
  Rng rng(mix_seed(21, 2));
  const int n = 11;

  for (FusionMode fusion : {FusionMode::cat, FusionMode::asum, FusionMode::wsum}) {
    const ModelConfig c = small_config(fusion);
    const ModelParams p = init_params(c, 3);
    Tape t;
    const BoundParams bp = bind_params(t, p);
    std::vector<int> zs;
    for (int r = 0; r < c.views(); ++r) {
      const int x = t.constant(random_input(rng, n, c.view_dims[static_cast<size_t>(r)]));
      const int z = encode(t, bp, x, r);
      CHECK(t.value(z).rows() == n);
      CHECK(t.value(z).cols() == c.latent);
      zs.push_back(z);
    }
    const int f = fuse_features(t, c, bp, zs);
    CHECK(t.value(f).rows() == n);
    CHECK(t.value(f).cols() == c.latent);
    for (int r = 0; r < c.views(); ++r) {
      const int xhat = decode(t, bp, f, r);
      CHECK(t.value(xhat).rows() == n);
      CHECK(t.value(xhat).cols() == c.view_dims[static_cast<size_t>(r)]);
    }
    if (fusion == FusionMode::asum) {
      const Matrix want = 0.5 * (t.value(zs[0]) + t.value(zs[1]));
      CHECK((t.value(f) - want).cwiseAbs().maxCoeff() < 1e-15);
    }
  }

  SECTION("single-view average and softmax fusion pass the latent through") {
    for (FusionMode fusion : {FusionMode::asum, FusionMode::wsum}) {
      ModelConfig c = small_config(fusion);
      c.view_dims = {5};
      const ModelParams p = init_params(c, 4);
      Tape t;
      const BoundParams bp = bind_params(t, p);
      const int z = encode(t, bp, t.constant(random_input(rng, n, 5)), 0);
      const int f = fuse_features(t, c, bp, {z});
      CHECK((t.value(f) - t.value(z)).cwiseAbs().maxCoeff() < 1e-15);
    }
  }

  SECTION("latent count must match the view count") {
    const ModelConfig c = small_config();
    const ModelParams p = init_params(c, 5);
    Tape t;
    const BoundParams bp = bind_params(t, p);
    const int z = encode(t, bp, t.constant(random_input(rng, n, 5)), 0);
    CHECK_THROWS_AS(fuse_features(t, c, bp, {z}), ShapeError);
  }
}

TEST_CASE("the whole forward pass is row-equivariant") {
  Rng rng(mix_seed(21, 3));
  const int n = 9;
  for (FusionMode fusion : {FusionMode::cat, FusionMode::asum, FusionMode::wsum}) {
    const ModelConfig c = small_config(fusion);
    const ModelParams p = init_params(c, 6);
    std::vector<Matrix> views;
    for (int d : c.view_dims) views.push_back(random_input(rng, n, d));

    std::vector<int> perm(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = (i * 5 + 2) % n;

    auto fused = [&](bool permuted) {
      Tape t;
      const BoundParams bp = bind_params(t, p);
      std::vector<int> zs;
      for (int r = 0; r < c.views(); ++r) {
        Matrix x = views[static_cast<size_t>(r)];
        if (permuted) {
          Matrix px(n, x.cols());
          for (int i = 0; i < n; ++i) px.row(i) = x.row(perm[static_cast<size_t>(i)]);
          x = px;
        }
        zs.push_back(encode(t, bp, t.constant(x), r));
      }
      return t.value(fuse_features(t, c, bp, zs));
    };

    const Matrix base = fused(false);
    const Matrix moved = fused(true);
    for (int i = 0; i < n; ++i) {
      CHECK((moved.row(i) - base.row(perm[static_cast<size_t>(i)])).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("cluster indicators are orthonormal") {
  Rng rng(mix_seed(21, 4));
  const ModelConfig c = small_config();
  const ModelParams p = init_params(c, 9);
  Tape t;
  const BoundParams bp = bind_params(t, p);
  const int z = encode(t, bp, t.constant(random_input(rng, 14, 5)), 0);
  const int q = cluster_indicators(t, bp, z, 0);
  const Matrix qv = t.value(q);
  CHECK(qv.rows() == 14);
  CHECK(qv.cols() == c.n_clusters);
  const Matrix gram = qv.transpose() * qv;
  CHECK((gram - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("config validation rejects malformed architectures") {
  ModelConfig c = small_config();
  c.view_dims = {};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config();
  c.view_dims = {5, 0};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config();
  c.n_clusters = 1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config();
  c.hidden = {12, 0};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config();
  c.latent = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  CHECK(parse_fusion("cat") == FusionMode::cat);
  CHECK(parse_fusion("asum") == FusionMode::asum);
  CHECK(parse_fusion("wsum") == FusionMode::wsum);
  CHECK_THROWS_AS(parse_fusion("sum"), std::invalid_argument);
  CHECK(std::string(fusion_name(FusionMode::wsum)) == "wsum");
}

TEST_CASE("checkpoints round-trip bitwise") {
  const auto dir = std::filesystem::temp_directory_path();
  const std::string path = (dir / "bmvc_ckpt_roundtrip.bin").string();

  for (FusionMode fusion : {FusionMode::cat, FusionMode::asum, FusionMode::wsum}) {
    const ModelParams p = init_params(small_config(fusion), 42);
    save_checkpoint(p, path);
    const ModelParams back = load_checkpoint(path);
    CHECK(back.config == p.config);
    CHECK(bitwise_equal(back, p));
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loading rejects corrupted files") {
  const auto dir = std::filesystem::temp_directory_path();
  const std::string path = (dir / "bmvc_ckpt_corrupt.bin").string();
  const ModelParams p = init_params(small_config(), 1);

  SECTION("bad magic") {
    save_checkpoint(p, path);
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("NOPE", 4);
    f.close();
    CHECK_THROWS_WITH(load_checkpoint(path), Catch::Matchers::ContainsSubstring("magic"));
  }

  SECTION("unsupported version") {
    save_checkpoint(p, path);
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const char bad[4] = {9, 0, 0, 0};
    f.write(bad, 4);
    f.close();
    CHECK_THROWS_WITH(load_checkpoint(path), Catch::Matchers::ContainsSubstring("version"));
  }

  SECTION("truncated payload") {
    save_checkpoint(p, path);
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 9);
    CHECK_THROWS_WITH(load_checkpoint(path), Catch::Matchers::ContainsSubstring("truncated"));
  }

  SECTION("trailing bytes") {
    save_checkpoint(p, path);
    std::ofstream f(path, std::ios::app | std::ios::binary);
    f.write("x", 1);
    f.close();
    CHECK_THROWS_WITH(load_checkpoint(path), Catch::Matchers::ContainsSubstring("trailing"));
  }

  std::filesystem::remove(path);
}
