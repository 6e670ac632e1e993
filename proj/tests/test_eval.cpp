#include "bmvc/eval.hpp"

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

using namespace bmvc;

namespace {

std::vector<int> random_labels(Rng& rng, int n, int k) {
  std::vector<int> out(static_cast<size_t>(n));
  for (int& v : out) v = rng.below(k);
  return out;
}

// Accuracy by trying every bijection between cluster ids. Feasible for the
// small label ranges used here.
double brute_force_accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  int kp = 0, kt = 0;
  for (int v : pred) kp = std::max(kp, v + 1);
  for (int v : truth) kt = std::max(kt, v + 1);
  const int n = std::max(kp, kt);
  std::vector<std::vector<long long>> w(static_cast<size_t>(kp),
                                        std::vector<long long>(static_cast<size_t>(kt), 0));
  for (size_t i = 0; i < pred.size(); ++i) ++w[static_cast<size_t>(pred[i])][static_cast<size_t>(truth[i])];
  std::vector<int> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  long long best = 0;
  do {
    long long hits = 0;
    for (int i = 0; i < kp; ++i) {
      const int j = perm[static_cast<size_t>(i)];
      if (j < kt) hits += w[static_cast<size_t>(i)][static_cast<size_t>(j)];
    }
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(pred.size());
}

struct PairCounts {
  long long both = 0;        // same cluster in pred and truth
  long long pred_only = 0;   // same in pred, split in truth
  long long truth_only = 0;  // split in pred, same in truth
  long long neither = 0;
};

PairCounts count_pairs(const std::vector<int>& pred, const std::vector<int>& truth) {
  PairCounts c;
  for (size_t i = 0; i < pred.size(); ++i) {
    for (size_t j = i + 1; j < pred.size(); ++j) {
      const bool sp = pred[i] == pred[j];
      const bool st = truth[i] == truth[j];
      if (sp && st) ++c.both;
      else if (sp) ++c.pred_only;
      else if (st) ++c.truth_only;
      else ++c.neither;
    }
  }
  return c;
}

double ari_pair_oracle(const std::vector<int>& pred, const std::vector<int>& truth) {
  const PairCounts c = count_pairs(pred, truth);
  const double num = 2.0 * (static_cast<double>(c.both) * static_cast<double>(c.neither) -
                            static_cast<double>(c.pred_only) * static_cast<double>(c.truth_only));
  const double den = static_cast<double>(c.both + c.pred_only) * static_cast<double>(c.pred_only + c.neither) +
                     static_cast<double>(c.both + c.truth_only) * static_cast<double>(c.truth_only + c.neither);
  if (den == 0.0) return 1.0;
  return num / den;
}

double fscore_pair_oracle(const std::vector<int>& pred, const std::vector<int>& truth) {
  const PairCounts c = count_pairs(pred, truth);
  if (c.both + c.pred_only == 0 || c.both + c.truth_only == 0) return 0.0;
  return 2.0 * static_cast<double>(c.both) /
         static_cast<double>(2 * c.both + c.pred_only + c.truth_only);
}

}  // namespace

TEST_CASE("metric hand values") {
  SECTION("accuracy 0.75 when one sample cannot be matched") {
    const std::vector<int> pred = {0, 0, 1, 2};
    const std::vector<int> truth = {1, 1, 0, 0};
    CHECK(hungarian_accuracy(pred, truth) == Catch::Approx(0.75).margin(1e-15));
  }

  SECTION("independent splits score ARI -0.5, NMI 0, fscore 0") {
    const std::vector<int> pred = {0, 0, 1, 1};
    const std::vector<int> truth = {0, 1, 0, 1};
    CHECK(ari(pred, truth) == Catch::Approx(-0.5).margin(1e-15));
    CHECK(nmi(pred, truth) == Catch::Approx(0.0).margin(1e-15));
    CHECK(pairwise_fscore(pred, truth) == Catch::Approx(0.0).margin(1e-15));
    CHECK(hungarian_accuracy(pred, truth) == Catch::Approx(0.5).margin(1e-15));
  }

  SECTION("a pure relabeling is perfect on every metric") {
    const std::vector<int> truth = {0, 1, 2, 0, 1, 2, 2, 1};
    std::vector<int> pred;
    for (int v : truth) pred.push_back((v + 1) % 3);
    const MetricsReport r = score_labels(pred, truth);
    CHECK(r.acc == 1.0);
    CHECK(r.nmi == 1.0);
    CHECK(r.ari == 1.0);
    CHECK(r.fscore == 1.0);
  }

  SECTION("partially merged clusters give a mid-range NMI") {
    const std::vector<int> pred = {0, 0, 1, 1};
    const std::vector<int> truth = {0, 0, 0, 1};
    CHECK(nmi(pred, truth) == Catch::Approx(0.34371).margin(1e-4));
  }

  SECTION("twin trivial partitions count as dependent") {
    const std::vector<int> ones = {0, 0, 0};
    CHECK(nmi(ones, ones) == 1.0);
    CHECK(ari(ones, ones) == 1.0);
    CHECK(pairwise_fscore(ones, ones) == 1.0);
  }
}

TEST_CASE("hungarian accuracy equals exhaustive bijection search") {
  Rng rng(mix_seed(41, 1));
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 8 + rng.below(17);
    const int kp = 2 + rng.below(4);
    const int kt = 2 + rng.below(4);
    const std::vector<int> pred = random_labels(rng, n, kp);
    const std::vector<int> truth = random_labels(rng, n, kt);
    CHECK(hungarian_accuracy(pred, truth) ==
          Catch::Approx(brute_force_accuracy(pred, truth)).margin(1e-12));
  }
}

TEST_CASE("ARI and fscore match pair-counting oracles") {
  Rng rng(mix_seed(41, 2));
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 6 + rng.below(20);
    const std::vector<int> pred = random_labels(rng, n, 2 + rng.below(4));
    const std::vector<int> truth = random_labels(rng, n, 2 + rng.below(4));
    CHECK(ari(pred, truth) == Catch::Approx(ari_pair_oracle(pred, truth)).margin(1e-12));
    CHECK(pairwise_fscore(pred, truth) ==
          Catch::Approx(fscore_pair_oracle(pred, truth)).margin(1e-12));
  }
}

TEST_CASE("metrics are symmetric and relabeling-invariant") {
  Rng rng(mix_seed(41, 3));
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 10 + rng.below(15);
    const std::vector<int> pred = random_labels(rng, n, 3);
    const std::vector<int> truth = random_labels(rng, n, 4);

    CHECK(hungarian_accuracy(pred, truth) == Catch::Approx(hungarian_accuracy(truth, pred)).margin(1e-12));
    CHECK(nmi(pred, truth) == Catch::Approx(nmi(truth, pred)).margin(1e-12));
    CHECK(ari(pred, truth) == Catch::Approx(ari(truth, pred)).margin(1e-12));
    CHECK(pairwise_fscore(pred, truth) == Catch::Approx(pairwise_fscore(truth, pred)).margin(1e-12));

    const int shuffle[4] = {2, 0, 3, 1};
    std::vector<int> relabeled;
    for (int v : pred) relabeled.push_back(shuffle[v]);
    const MetricsReport a = score_labels(pred, truth);
    const MetricsReport b = score_labels(relabeled, truth);
    CHECK(a.acc == Catch::Approx(b.acc).margin(1e-12));
    CHECK(a.nmi == Catch::Approx(b.nmi).margin(1e-12));
    CHECK(a.ari == Catch::Approx(b.ari).margin(1e-12));
    CHECK(a.fscore == Catch::Approx(b.fscore).margin(1e-12));
  }
}

TEST_CASE("accuracy is at least chance when predictions use fewer clusters") {
  Rng rng(mix_seed(41, 4));
  for (int trial = 0; trial < 50; ++trial) {
    const int kt = 2 + rng.below(4);
    const int kp = 1 + rng.below(kt);
    const int n = 12 + rng.below(20);
    std::vector<int> truth(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) truth[static_cast<size_t>(i)] = i % kt;  // every class occupied
    const std::vector<int> pred = random_labels(rng, n, kp);
    CHECK(hungarian_accuracy(pred, truth) >= 1.0 / kt - 1e-12);
  }
}

TEST_CASE("label validation") {
  const std::vector<int> good = {0, 1};
  const std::vector<int> bad = {0, -1};
  const std::vector<int> empty;
  CHECK_THROWS_AS(hungarian_accuracy(good, bad), std::invalid_argument);
  CHECK_THROWS_AS(nmi(good, {0}), std::invalid_argument);
  CHECK_THROWS_AS(ari(empty, empty), std::invalid_argument);
  CHECK_THROWS_AS(ari({0}, {0}), std::invalid_argument);
  CHECK_THROWS_AS(pairwise_fscore({0}, {0}), std::invalid_argument);
}

TEST_CASE("kmeans separates well-separated blobs") {
  Rng rng(mix_seed(41, 5));
  const int per = 8;
  Matrix x(3 * per, 2);
  std::vector<int> truth(static_cast<size_t>(3 * per));
  const double cx[3] = {0.0, 10.0, 0.0};
  const double cy[3] = {0.0, 0.0, 10.0};
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < per; ++i) {
      const int row = c * per + i;
      x(row, 0) = cx[c] + 0.1 * rng.gaussian();
      x(row, 1) = cy[c] + 0.1 * rng.gaussian();
      truth[static_cast<size_t>(row)] = c;
    }
  }
  const std::vector<int> labels = kmeans(x, 3, 5, 9);
  CHECK(hungarian_accuracy(labels, truth) == 1.0);

  SECTION("same seed, same labels") {
    CHECK(kmeans(x, 3, 5, 9) == labels);
  }

  SECTION("evaluate wires kmeans into the metrics") {
    const MetricsReport r = evaluate(x, truth, 3, 5, 9);
    CHECK(r.acc == 1.0);
    CHECK(r.nmi == 1.0);
    CHECK(r.ari == 1.0);
    CHECK(r.fscore == 1.0);
    CHECK_THROWS_AS(evaluate(x, {0, 1}, 3, 5, 9), std::invalid_argument);
  }
}

TEST_CASE("kmeans copes with coincident points and rejects bad arguments") {
  const Matrix same = Matrix::Constant(6, 3, 0.5);
  const std::vector<int> labels = kmeans(same, 2, 3, 1);
  REQUIRE(labels.size() == 6);
  for (int v : labels) {
    CHECK(v >= 0);
    CHECK(v < 2);
  }

  Matrix x = Matrix::Zero(5, 2);
  CHECK_THROWS_AS(kmeans(x, 1, 3, 1), std::invalid_argument);
  CHECK_THROWS_AS(kmeans(x, 6, 3, 1), std::invalid_argument);
  CHECK_THROWS_AS(kmeans(x, 2, 0, 1), std::invalid_argument);
  x(0, 0) = std::nan("");
  CHECK_THROWS_AS(kmeans(x, 2, 3, 1), NumericError);
}

TEST_CASE("evaluate recovers a one-hot embedding exactly") {
  const int n = 12, k = 3;
  Matrix f = Matrix::Zero(n, k);
  std::vector<int> truth(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    truth[static_cast<size_t>(i)] = i % k;
    f(i, i % k) = 1.0;
  }
  const MetricsReport r = evaluate(f, truth, k, 4, 2);
  CHECK(r.acc == 1.0);
  CHECK(r.nmi == 1.0);
  CHECK(r.ari == 1.0);
  CHECK(r.fscore == 1.0);
}
