#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "owdfa/cluster.hpp"
#include "owdfa/error.hpp"
#include "owdfa/metrics.hpp"
#include "oracles.hpp"

using namespace owdfa;

using namespace owdfa::testing;

// --------------------------------------------------------------------------- hungarian

TEST_CASE("hungarian trivial cases") {
  RowMatrix<double> id = RowMatrix<double>::Identity(4, 4) * 5 + RowMatrix<double>::Constant(4, 4, 1);
  CHECK(hungarian(id) == std::vector<Index>{0, 1, 2, 3});
  RowMatrix<double> perm = RowMatrix<double>::Zero(3, 3);
  perm(0, 2) = perm(1, 0) = perm(2, 1) = 1;
  CHECK(hungarian(perm) == std::vector<Index>{2, 0, 1});
}

TEST_CASE("hungarian matches permutation search") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> count(0, 50);
  for (int t = 0; t < 200; ++t) {
    const Index n = 1 + t % 6;
    RowMatrix<double> w(n, n);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = count(rng);
    const auto a = hungarian(w);
    std::vector<Index> cols = a;
    std::sort(cols.begin(), cols.end());
    std::vector<Index> expect(static_cast<std::size_t>(n));
    std::iota(expect.begin(), expect.end(), Index{0});
    REQUIRE(cols == expect);
    CHECK(matched(w, a) == brute_force_best(w));
  }
}

TEST_CASE("hungarian pads rectangular matrices") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> count(0, 20);
  for (int t = 0; t < 50; ++t) {
    const Index r = 1 + t % 5, c = 1 + (t / 5) % 5;
    RowMatrix<double> w(r, c);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = count(rng);
    const Index n = std::max(r, c);
    RowMatrix<double> sq = RowMatrix<double>::Zero(n, n);
    sq.topLeftCorner(r, c) = w;
    CHECK(matched(w, hungarian(w)) == brute_force_best(sq));
  }
}

// --------------------------------------------------------------------------- accuracy

TEST_CASE("clustering_accuracy") {
  const std::vector<int> truth{0, 0, 1, 1, 2, 2, 2, 3, 3, 3};
  const std::vector<bool> novel{false, false, false, false, true, true, true, true, true, true};
  SUBCASE("identical") {
    const auto r = clustering_accuracy(truth, truth, novel);
    CHECK(*r.known == 1.0);
    CHECK(*r.novel == 1.0);
    CHECK(*r.all == 1.0);
  }
  SUBCASE("relabeled") {
    std::vector<int> pred;
    for (int y : truth) pred.push_back((y + 2) % 4);
    const auto r = clustering_accuracy(pred, truth, novel);
    CHECK(*r.all == 1.0);
    CHECK(r.mapping[2] == 0);
  }
  SUBCASE("one swapped sample in a novel class") {
    // values from enumerating all 24 relabelings
    const std::vector<int> pred{1, 1, 0, 0, 3, 3, 3, 2, 2, 3};
    const auto r = clustering_accuracy(pred, truth, novel);
    CHECK(*r.all == doctest::Approx(0.9));
    CHECK(*r.known == 1.0);
    CHECK(*r.novel == doctest::Approx(5.0 / 6.0));
  }
  SUBCASE("empty subset is absent") {
    const std::vector<bool> none(truth.size(), false);
    const auto r = clustering_accuracy(truth, truth, none);
    CHECK_FALSE(r.novel.has_value());
    CHECK(r.known.has_value());
  }
  SUBCASE("more clusters than classes") {
    const std::vector<int> pred{0, 5, 1, 1, 2, 2, 2, 3, 3, 3};
    const auto r = clustering_accuracy(pred, truth, novel);
    CHECK(*r.all == doctest::Approx(0.9));
  }
}

TEST_CASE("clustering_accuracy is invariant to relabeling predictions") {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 30; ++t) {
    const auto truth = random_labels(60, 5, rng);
    // mostly-correct predictions so the optimal mapping is unique and subset
    // accuracies are comparable too
    std::vector<int> pred = truth;
    std::uniform_int_distribution<int> flip(0, 9);
    for (int& p : pred)
      if (flip(rng) == 0) p = (p + 1) % 5;
    std::vector<bool> novel;
    for (int y : truth) novel.push_back(y >= 3);
    std::vector<int> relabel{0, 1, 2, 3, 4};
    std::shuffle(relabel.begin(), relabel.end(), rng);
    std::vector<int> moved;
    for (int p : pred) moved.push_back(relabel[static_cast<std::size_t>(p)]);
    const auto a = clustering_accuracy(pred, truth, novel), b = clustering_accuracy(moved, truth, novel);
    CHECK(*a.all == *b.all);
    CHECK(*a.known == *b.known);
    CHECK(*a.novel == *b.novel);
    // the joint mapping is at least as good as taking predictions literally
    double literal = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) literal += pred[i] == truth[i];
    CHECK(*a.all >= literal / 60.0);
  }
}

// --------------------------------------------------------------------------- nmi / ari

TEST_CASE("nmi and ari on the hand contingency [[2,1],[0,3]]") {
  const std::vector<int> pred{0, 0, 0, 1, 1, 1}, truth{0, 0, 1, 1, 1, 1};
  CHECK(nmi(pred, truth) == doctest::Approx(0.47870397138567994).epsilon(1e-12));
  CHECK(ari(pred, truth) == doctest::Approx(0.32432432432432434).epsilon(1e-12));
}

TEST_CASE("nmi and ari trivial cases") {
  const std::vector<int> y{0, 0, 1, 1, 2, 2};
  CHECK(nmi(y, y) == doctest::Approx(1.0));
  CHECK(ari(y, y) == doctest::Approx(1.0));
  const std::vector<int> one(6, 0), balanced{0, 0, 0, 1, 1, 1};
  CHECK(ari(one, balanced) == doctest::Approx(0.0));
  CHECK(nmi(one, balanced) == doctest::Approx(0.0));
  CHECK(nmi(one, one) == 1.0);
  CHECK(ari(one, one) == 1.0);
  const std::vector<int> empty;
  CHECK_THROWS_AS(nmi(empty, empty), ShapeError);
}

TEST_CASE("nmi and ari agree with independent counting on random partitions") {
  std::mt19937_64 rng(321);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 10 + static_cast<std::size_t>(t);
    const auto a = random_labels(n, 2 + t % 5, rng);
    const auto b = random_labels(n, 2 + (t / 5) % 4, rng);
    CHECK(std::abs(nmi(a, b) - nmi_by_counts(a, b)) < 1e-10);
    CHECK(std::abs(ari(a, b) - ari_by_pairs(a, b)) < 1e-10);
    CHECK(std::abs(nmi(a, b) - nmi(b, a)) < 1e-12);
    CHECK(std::abs(ari(a, b) - ari(b, a)) < 1e-12);
    CHECK(nmi(a, b) >= 0.0);
    CHECK(nmi(a, b) <= 1.0);
    CHECK(ari(a, b) >= -1.0);
    CHECK(ari(a, b) <= 1.0);
  }
}

TEST_CASE("nmi of independent labelings is near zero") {
  std::mt19937_64 rng(9);
  const auto a = random_labels(20000, 4, rng), b = random_labels(20000, 4, rng);
  CHECK(nmi(a, b) < 0.05);
  CHECK(std::abs(ari(a, b)) < 0.05);
}

// --------------------------------------------------------------------------- auc

TEST_CASE("auc") {
  const std::vector<double> s{0.9, 0.8, 0.4, 0.3};
  CHECK(auc(s, {true, false, true, false}) == doctest::Approx(0.75));
  CHECK(auc(s, {true, true, false, false}) == 1.0);
  CHECK(auc(s, {false, false, true, true}) == 0.0);
  CHECK(auc(std::vector<double>{0.5, 0.5}, {true, false}) == 0.5);
  CHECK_THROWS_AS(auc(s, {true, true, true, true}), ShapeError);

  std::mt19937_64 rng(44);
  std::uniform_int_distribution<int> coarse(0, 9);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> sc;
    std::vector<bool> pos;
    for (int i = 0; i < 20; ++i) {
      sc.push_back(coarse(rng) / 10.0);  // plenty of ties
      pos.push_back(i % 3 == 0);
    }
    const double a = auc(sc, pos);
    CHECK(std::abs(a - auc_by_pairs(sc, pos)) < 1e-12);
    std::vector<double> tr;
    for (double v : sc) tr.push_back(std::exp(3 * v) - 7);
    CHECK(auc(tr, pos) == a);
  }
}

TEST_CASE("auc_real_fake sums probability over real heads") {
  RowMatrix<double> p(4, 3);
  p << 0.5, 0.4, 0.1,   //
      0.1, 0.1, 0.8,    //
      0.3, 0.3, 0.4,    //
      0.05, 0.05, 0.9;
  const std::vector<Index> heads{0, 1};
  CHECK(auc_real_fake(p, heads, {true, false, true, false}) == 1.0);
  CHECK_THROWS_AS(auc_real_fake(p, {}, {true, false, true, false}), ShapeError);
}

// --------------------------------------------------------------------------- k-means

TEST_CASE("kmeans_pp_init") {
  Rng rng(3);
  RowMatrix<double> pts(2, 1);
  pts << 0, 10;
  for (int t = 0; t < 20; ++t) {
    const auto c = kmeans_pp_init(pts, 2, rng);
    CHECK(std::min(c(0, 0), c(1, 0)) == 0.0);
    CHECK(std::max(c(0, 0), c(1, 0)) == 10.0);
  }
  RowMatrix<double> five(5, 2);
  five << 0, 0, 1, 0, 0, 1, 5, 5, -3, 2;
  const auto all = kmeans_pp_init(five, 5, rng);
  for (Index i = 0; i < 5; ++i) {
    bool found = false;
    for (Index j = 0; j < 5; ++j) found |= all.row(j) == five.row(i);
    CHECK(found);
  }
  // k = 1 picks uniformly
  std::map<std::pair<double, double>, int> first;
  for (int t = 0; t < 5000; ++t) {
    const auto c = kmeans_pp_init(five, 1, rng);
    ++first[{c(0, 0), c(0, 1)}];
  }
  CHECK(first.size() == 5);
  for (auto [pt, hits] : first) CHECK(std::abs(hits - 1000) < 120);
  CHECK_THROWS_AS(kmeans_pp_init(five, 6, rng), ShapeError);
}

TEST_CASE("semisup_kmeans on two blobs") {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> noise(0, 0.3);
  RowMatrix<double> labeled(20, 2), unlabeled(60, 2);
  std::vector<int> labels(20, 0);
  for (Index i = 0; i < 20; ++i) labeled.row(i) << noise(gen), noise(gen);
  std::vector<int> blob(60);
  for (Index i = 0; i < 60; ++i) {
    blob[static_cast<std::size_t>(i)] = i % 2;
    const double cx = i % 2 ? 10.0 : 0.0;
    unlabeled.row(i) << cx + noise(gen), noise(gen);
  }
  Rng rng(11);
  const ClusterState st = semisup_kmeans(labeled, labels, unlabeled, 1, {2, 1e-4, 100}, rng);
  CHECK(st.converged);
  const auto u = st.unlabeled_assignments();
  for (std::size_t i = 0; i < u.size(); ++i) CHECK(u[i] == blob[i]);
  for (Index i = 0; i < 20; ++i) CHECK(st.assignments[static_cast<std::size_t>(i)] == 0);
  for (std::size_t t = 1; t < st.objective.size(); ++t) CHECK(st.objective[t] <= st.objective[t - 1] + 1e-9);
}

TEST_CASE("semisup_kmeans contracts") {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> noise(0, 1);
  RowMatrix<double> labeled(30, 4), unlabeled(200, 4);
  std::vector<int> labels;
  for (Index i = 0; i < 30; ++i) {
    labels.push_back(static_cast<int>(i % 3));
    for (Index j = 0; j < 4; ++j) labeled(i, j) = noise(gen) + 3.0 * static_cast<double>(i % 3 == j);
  }
  for (Index i = 0; i < 200; ++i)
    for (Index j = 0; j < 4; ++j) unlabeled(i, j) = noise(gen) + 3.0 * static_cast<double>(i % 5 == j);

  SUBCASE("no unlabeled data gives labeled means") {
    Rng rng(1);
    const auto st = semisup_kmeans(labeled, labels, RowMatrix<double>(0, 4), 3, {3, 1e-4, 100}, rng);
    CHECK(st.iterations == 1);
    CHECK(st.converged);
    RowMatrix<double> mean0 = RowMatrix<double>::Zero(1, 4);
    for (Index i = 0; i < 30; i += 3) mean0 += labeled.row(i);
    CHECK((st.centroids.row(0) - mean0 / 10.0).norm() < 1e-12);
  }
  SUBCASE("fixity, monotone objective, determinism") {
    Rng r1(42), r2(42);
    int steps = 0, fixed = 0;
    const auto a = semisup_kmeans(labeled, labels, unlabeled, 3, {5, 1e-4, 100}, r1, [&](const ClusterState& s) {
      ++steps;
      bool ok = true;
      for (Index i = 0; i < 30; ++i) ok = ok && s.assignments[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(i)];
      fixed += ok;
    });
    CHECK(steps == static_cast<int>(a.objective.size()));
    CHECK(fixed == steps);
    const auto b = semisup_kmeans(labeled, labels, unlabeled, 3, {5, 1e-4, 100}, r2);
    CHECK(a.assignments == b.assignments);
    CHECK(a.converged);
    for (Index i = 0; i < 30; ++i) CHECK(a.assignments[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(i)]);
    for (std::size_t t = 1; t < a.objective.size(); ++t) CHECK(a.objective[t] <= a.objective[t - 1] + 1e-9);
    CHECK(a.unlabeled_assignments().size() == 200);
  }
  SUBCASE("errors") {
    Rng rng(1);
    CHECK_THROWS_AS(semisup_kmeans(labeled, labels, unlabeled, 3, {2, 1e-4, 100}, rng), ConfigError);
    std::vector<int> missing(30, 0);
    CHECK_THROWS_AS(semisup_kmeans(labeled, missing, unlabeled, 3, {3, 1e-4, 100}, rng), ShapeError);
  }
}

TEST_CASE("semisup_kmeans reseeds an emptied cluster") {
  // new centroid placed on a duplicate of a known mean loses all its members
  RowMatrix<double> labeled(2, 1), unlabeled(5, 1);
  labeled << 0, 0;
  unlabeled << 0, 0, 0, 0, 9;
  const std::vector<int> labels{0, 0};
  Rng rng(2);
  const auto st = semisup_kmeans(labeled, labels, unlabeled, 1, {3, 1e-4, 100}, rng);
  for (std::size_t t = 1; t < st.objective.size(); ++t) CHECK(st.objective[t] <= st.objective[t - 1] + 1e-9);
  CHECK(st.objective.back() == 0.0);
}
