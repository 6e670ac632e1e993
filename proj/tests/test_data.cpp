#include "bmvc/data.hpp"

#include "bmvc/eval.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace bmvc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / tag) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
  void write(const std::string& name, const std::string& body) const {
    std::ofstream out(path / name);
    out << body;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SynthSpec two_view_spec(std::uint64_t seed) {
  SynthSpec spec;
  spec.n_samples = 30;
  spec.n_clusters = 3;
  spec.views = {{4, 2.0, 0.5}, {2, 1.0, 1.0}};
  spec.seed = seed;
  return spec;
}

bool views_bitwise_equal(const ViewDataset& a, const ViewDataset& b) {
  if (a.views.size() != b.views.size() || a.labels != b.labels) return false;
  for (size_t r = 0; r < a.views.size(); ++r) {
    if (a.views[r].rows() != b.views[r].rows() || a.views[r].cols() != b.views[r].cols()) return false;
    if ((a.views[r] - b.views[r]).cwiseAbs().maxCoeff() != 0.0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("datasets survive a save/load round-trip bitwise") {
  const ViewDataset ds = synth_generate(two_view_spec(5));
  TempDir a("bmvc_data_rt_a");
  TempDir b("bmvc_data_rt_b");

  save_dataset(ds, a.str());
  const ViewDataset back = load_dataset(a.str());
  CHECK(views_bitwise_equal(back, ds));
  CHECK(back.names == ds.names);

  save_dataset(ds, b.str());
  for (const std::string& name : {std::string("views.txt"), std::string("view1.csv"),
                                  std::string("view2.csv"), std::string("labels.csv")}) {
    CHECK(slurp(a.path / name) == slurp(b.path / name));
  }
}

TEST_CASE("loader diagnostics name the file and line") {
  TempDir dir("bmvc_data_diag");

  SECTION("missing index") {
    CHECK_THROWS_WITH(load_dataset(dir.str()), Catch::Matchers::ContainsSubstring("views.txt"));
  }

  SECTION("empty index") {
    dir.write("views.txt", "\n\n");
    CHECK_THROWS_WITH(load_dataset(dir.str()), Catch::Matchers::ContainsSubstring("no view files"));
  }

  SECTION("listed view file missing") {
    dir.write("views.txt", "gone.csv\n");
    CHECK_THROWS_WITH(load_dataset(dir.str()), Catch::Matchers::ContainsSubstring("gone.csv"));
  }

  SECTION("ragged row") {
    dir.write("views.txt", "v.csv\n");
    dir.write("v.csv", "1,2\n3\n");
    CHECK_THROWS_WITH(load_dataset(dir.str()),
                      Catch::Matchers::ContainsSubstring("v.csv:2") &&
                          Catch::Matchers::ContainsSubstring("ragged"));
  }

  SECTION("non-numeric cell") {
    dir.write("views.txt", "v.csv\n");
    dir.write("v.csv", "1,2\n3,oops\n");
    CHECK_THROWS_WITH(load_dataset(dir.str()),
                      Catch::Matchers::ContainsSubstring("v.csv:2") &&
                          Catch::Matchers::ContainsSubstring("non-numeric"));
  }

  SECTION("row counts differ across views") {
    dir.write("views.txt", "a.csv\nb.csv\n");
    dir.write("a.csv", "1\n2\n");
    dir.write("b.csv", "1\n2\n3\n");
    CHECK_THROWS_WITH(load_dataset(dir.str()),
                      Catch::Matchers::ContainsSubstring("row-count mismatch"));
  }

  SECTION("fractional label") {
    dir.write("views.txt", "v.csv\n");
    dir.write("v.csv", "1\n2\n");
    dir.write("labels.csv", "0\n1.5\n");
    CHECK_THROWS_WITH(load_dataset(dir.str()),
                      Catch::Matchers::ContainsSubstring("labels.csv:2") &&
                          Catch::Matchers::ContainsSubstring("nonnegative integers"));
  }

  SECTION("label count mismatch") {
    dir.write("views.txt", "v.csv\n");
    dir.write("v.csv", "1\n2\n");
    dir.write("labels.csv", "0\n");
    CHECK_THROWS_WITH(load_dataset(dir.str()),
                      Catch::Matchers::ContainsSubstring("1 labels for 2 samples"));
  }

  SECTION("blank lines and trailing newlines are tolerated") {
    dir.write("views.txt", "v.csv\n\n");
    dir.write("v.csv", "1,2\n\n3,4\n");
    const ViewDataset ds = load_dataset(dir.str());
    CHECK(ds.samples() == 2);
    CHECK(ds.views[0](1, 1) == 4.0);
    CHECK_FALSE(ds.has_labels());
  }
}

TEST_CASE("min-max scaling maps each column onto the unit range") {
  ViewDataset ds;
  Matrix v(3, 3);
  v << 1.0, 5.0, 2.0,
       3.0, 5.0, 2.0,
       2.0, 5.0, 6.0;
  ds.views.push_back(v);
  ds.names.push_back("v.csv");

  const ViewDataset scaled = minmax_scale(ds);
  const Matrix& s = scaled.views[0];
  CHECK(s(0, 0) == 0.0);
  CHECK(s(1, 0) == 1.0);
  CHECK(s(2, 0) == 0.5);
  // Constant column collapses to zero rather than dividing by zero.
  CHECK(s.col(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(s(2, 2) == 1.0);
  CHECK(s.minCoeff() >= 0.0);
  CHECK(s.maxCoeff() <= 1.0);

  const ViewDataset twice = minmax_scale(scaled);
  CHECK(views_bitwise_equal(twice, scaled));
}

TEST_CASE("the synthetic generator is deterministic per seed") {
  const ViewDataset a = synth_generate(two_view_spec(9));
  const ViewDataset b = synth_generate(two_view_spec(9));
  const ViewDataset c = synth_generate(two_view_spec(10));
  CHECK(views_bitwise_equal(a, b));
  CHECK_FALSE(views_bitwise_equal(a, c));
  CHECK(a.has_labels());
  CHECK(a.samples() == 30);
  CHECK(a.view_count() == 2);
  CHECK(a.views[0].cols() == 4);
  CHECK(a.views[1].cols() == 2);
  for (const Matrix& v : a.views) {
    CHECK(v.minCoeff() >= 0.0);
    CHECK(v.maxCoeff() <= 1.0);
  }
  for (int l : a.labels) {
    CHECK(l >= 0);
    CHECK(l < 3);
  }
}

TEST_CASE("generated cluster sizes stay near balance") {
  const int n = 300, k = 3;
  const double tol = 2.0 * std::sqrt(static_cast<double>(n));
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SynthSpec spec;
    spec.n_samples = n;
    spec.n_clusters = k;
    spec.views = {{2, 1.0, 1.0}};
    spec.seed = seed;
    const ViewDataset ds = synth_generate(spec);
    std::vector<int> counts(static_cast<size_t>(k), 0);
    for (int l : ds.labels) ++counts[static_cast<size_t>(l)];
    for (int c : counts) {
      CHECK(std::abs(static_cast<double>(c) - static_cast<double>(n) / k) <= tol);
    }
  }
}

TEST_CASE("separation controls how discriminative a view is") {
  // One crisp view, one muddy view, same labels: raw k-means should place
  // the crisp view first on accuracy for every seed.
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SynthSpec spec;
    spec.n_samples = 300;
    spec.n_clusters = 3;
    spec.views = {{5, 4.0, 1.0}, {5, 0.5, 1.0}};
    spec.seed = seed;
    const ViewDataset ds = synth_generate(spec);
    const double strong = evaluate(ds.views[0], ds.labels, 3, 5, seed).acc;
    const double weak = evaluate(ds.views[1], ds.labels, 3, 5, seed).acc;
    CHECK(strong > weak);
  }
}

TEST_CASE("zero separation yields chance-level structure") {
  SynthSpec spec;
  spec.n_samples = 300;
  spec.n_clusters = 3;
  spec.views = {{5, 0.0, 1.0}};
  spec.seed = 4;
  const ViewDataset ds = synth_generate(spec);
  const double acc = evaluate(ds.views[0], ds.labels, 3, 5, 4).acc;
  CHECK(acc < 1.0 / 3.0 + 0.15);
}

TEST_CASE("generator and dataset validation") {
  SynthSpec spec = two_view_spec(1);
  spec.n_clusters = 1;
  CHECK_THROWS_AS(synth_generate(spec), std::invalid_argument);
  spec = two_view_spec(1);
  spec.n_samples = 5;
  CHECK_THROWS_AS(synth_generate(spec), std::invalid_argument);
  spec = two_view_spec(1);
  spec.views.clear();
  CHECK_THROWS_AS(synth_generate(spec), std::invalid_argument);
  spec = two_view_spec(1);
  spec.views[0].dim = 0;
  CHECK_THROWS_AS(synth_generate(spec), std::invalid_argument);
  spec = two_view_spec(1);
  spec.views[0].separation = -1.0;
  CHECK_THROWS_AS(synth_generate(spec), std::invalid_argument);
  spec = two_view_spec(1);
  spec.views[0].noise_sigma = 0.0;
  CHECK_THROWS_AS(synth_generate(spec), std::invalid_argument);

  ViewDataset ds;
  CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
  ds.views.push_back(Matrix::Zero(3, 2));
  ds.views.push_back(Matrix::Zero(4, 2));
  CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
  ds.views[1] = Matrix::Zero(3, 2);
  CHECK_NOTHROW(ds.validate());
  ds.labels = {0, 1};
  CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
  ds.labels = {0, 1, 0};
  CHECK_NOTHROW(ds.validate());
}
