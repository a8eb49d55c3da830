#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "owdfa/gradcheck.hpp"
#include "owdfa/objective.hpp"
#include "owdfa/pairing.hpp"
#include "owdfa/pseudo.hpp"
#include "test_util.hpp"

using namespace owdfa;
using owdfa::testing::random_tensor;

namespace {

RowMatrix<double> rows(std::initializer_list<std::initializer_list<double>> values) {
  RowMatrix<double> m(static_cast<Index>(values.size()), static_cast<Index>(values.begin()->size()));
  Index i = 0;
  for (const auto& r : values) {
    Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

Var<double> probs_const(Graph<double>& g, const RowMatrix<double>& p) {
  Tensor<double> t({p.rows(), p.cols()});
  t.matrix() = p;
  return g.constant(std::move(t));
}

RowMatrix<double> random_probs(Index n, Index c, std::mt19937_64& rng) {
  RowMatrix<double> p = random_tensor({n, c}, rng, 0.05, 1.0).matrix();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

}  // namespace

// --------------------------------------------------------------------------- similarities

TEST_CASE("global_similarity") {
  auto s = global_similarity(rows({{3, 4}, {4, 3}, {1, 0}, {0, 1}, {3, 4}}));
  CHECK(s(0, 1) == doctest::Approx(0.96).epsilon(1e-15));
  CHECK(s(2, 3) == doctest::Approx(0.0));
  CHECK(s(0, 4) == doctest::Approx(1.0).epsilon(1e-15));
  try {
    global_similarity(rows({{1, 1}, {0, 0}}));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("sample 1") != std::string::npos);
  }
}

TEST_CASE("similarity table invariants") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const RowMatrix<double> local = random_tensor({8, 4 * 9}, rng, 0.0, 1.0).matrix();
    const RowMatrix<double> global = random_tensor({8, 6}, rng).matrix();
    const SimilarityTables t = similarity_tables(global, local, 3);
    CHECK((t.global - t.global.transpose()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((t.global.diagonal().array() - 1.0).abs().maxCoeff() < 1e-6);
    CHECK(t.global.cwiseAbs().maxCoeff() <= 1.0 + 1e-6);
    CHECK(t.local.cwiseAbs().maxCoeff() <= 1.0 + 1e-6);
    CHECK((t.weights.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("spatial_weights") {
  // d = 1, q = 2; channel-major layout puts the four patches in order
  auto w = spatial_weights(rows({{1, 1, 2, 0}, {3, 3, 3, 3}}), 2);
  CHECK(w(0, 0) == 0.25);
  CHECK(w(0, 1) == 0.25);
  CHECK(w(0, 2) == 0.5);
  CHECK(w(0, 3) == 0.0);
  for (Index k = 0; k < 4; ++k) CHECK(w(1, k) == 0.25);

  std::mt19937_64 rng(2);
  const RowMatrix<double> local = random_tensor({3, 5 * 9}, rng).matrix();
  const RowMatrix<double> scaled = 7.5 * local;
  CHECK((spatial_weights(local, 3) - spatial_weights(scaled, 3)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(spatial_weights(RowMatrix<double>::Zero(2, 9), 3), NumericError);
  CHECK_THROWS_AS(spatial_weights(local, 2), ShapeError);
}

TEST_CASE("local_similarity") {
  std::mt19937_64 rng(6);
  SUBCASE("identical samples") {
    RowMatrix<double> local = random_tensor({2, 4 * 9}, rng, 0.1, 1.0).matrix();
    local.row(1) = local.row(0);
    const auto w = spatial_weights(local, 3);
    const auto s = local_similarity(local, 3, w);
    CHECK(s(0, 0) == doctest::Approx(1.0));
    CHECK(s(0, 1) == doctest::Approx(1.0));
  }
  SUBCASE("q = 1 reduces to global") {
    const RowMatrix<double> g = random_tensor({5, 7}, rng).matrix();
    const auto s = local_similarity(g, 1, spatial_weights(g, 1));
    CHECK((s - global_similarity(g)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("difference confined to a zero-weighted patch") {
    // d = 2, q = 2: columns are (c0: k0..k3, c1: k0..k3)
    RowMatrix<double> local = rows({{1, 2, 3, 0, 1, 1, 1, 0}, {1, 2, 3, 5, 1, 1, 1, 4}});
    const auto w = spatial_weights(local, 2);
    CHECK(w(0, 3) == 0.0);
    std::size_t zeros = 0;
    const auto s = local_similarity(local, 2, w, &zeros);
    CHECK(s(0, 1) == doctest::Approx(1.0));
    CHECK(s(1, 0) < 1.0);  // row 1 weights the differing patch
    CHECK(zeros > 0);
  }
}

// --------------------------------------------------------------------------- pair selection

TEST_CASE("top1 ties break on the lowest index") {
  auto top = top1_partners(rows({{1, 0.5, 0.5}, {0.2, 1, 0.2}, {0.9, 0.9, 1}}));
  CHECK(top == std::vector<Index>{1, 0, 0});
}

TEST_CASE("select_pairs voting") {
  Rng rng(1);
  const std::vector<int> labels{-1, -1, -1};
  SUBCASE("agreeing top-1 gives a partner") {
    const auto sg = rows({{1, 0.9, 0.1}, {0.9, 1, 0.2}, {0.1, 0.2, 1}});
    const auto sl = rows({{1, 0.8, 0.3}, {0.7, 1, 0.6}, {0.4, 0.5, 1}});
    const auto a = select_pairs(labels, sg, sl, rng);
    CHECK(a.pairs[0].partner == 1);
    CHECK(a.pairs[0].vote_agreed);
    CHECK(a.pairs[0].kind == PartnerKind::voted_unlabeled);
    CHECK(a.pairs[2].partner == 1);
  }
  SUBCASE("disagreeing top-1 gives none") {
    const auto sg = rows({{1, 0.9, 0.1}, {0.9, 1, 0.2}, {0.1, 0.2, 1}});
    const auto sl = rows({{1, 0.3, 0.8}, {0.7, 1, 0.6}, {0.4, 0.5, 1}});
    const auto a = select_pairs(labels, sg, sl, rng);
    CHECK(a.pairs[0].partner == -1);
    CHECK_FALSE(a.pairs[0].vote_agreed);
    CHECK(a.pairs[0].global_top1 == 1);
    CHECK(a.pairs[0].local_top1 == 2);
  }
}

TEST_CASE("labeled partners are uniform same-class batchmates") {
  const std::vector<int> labels{0, 1, 0, 0, 2, -1};
  const RowMatrix<double> s = RowMatrix<double>::Identity(6, 6);
  Rng rng(77);
  std::map<Index, int> seen;
  for (int t = 0; t < 3000; ++t) {
    const auto a = select_pairs(labels, s, s, rng);
    const Pair& p0 = a.pairs[0];
    REQUIRE(p0.kind == PartnerKind::labeled_same_class);
    CHECK(labels[static_cast<std::size_t>(p0.partner)] == 0);
    CHECK(p0.partner != 0);
    ++seen[p0.partner];
    CHECK(a.pairs[1].partner == -1);  // class 1 alone in the batch
    CHECK(a.pairs[4].partner == -1);
  }
  REQUIRE(seen.size() == 2);
  CHECK(std::abs(seen[2] - 1500) < 150);
}

TEST_CASE("select_pairs is invariant to positive feature scaling") {
  std::mt19937_64 rng(21);
  const std::vector<int> labels{0, 0, 1, 1, -1, -1, -1, -1, -1, -1};
  for (int trial = 0; trial < 10; ++trial) {
    const RowMatrix<double> global = random_tensor({10, 8}, rng).matrix();
    const RowMatrix<double> local = random_tensor({10, 8 * 9}, rng, 0.0, 1.0).matrix();
    const auto t1 = similarity_tables(global, local, 3);
    const auto t2 = similarity_tables(3.7 * global, 3.7 * local, 3);
    Rng r1(5), r2(5);
    const auto a = select_pairs(labels, t1.global, t1.local, r1);
    const auto b = select_pairs(labels, t2.global, t2.local, r2);
    for (std::size_t i = 0; i < labels.size(); ++i) CHECK(a.pairs[i].partner == b.pairs[i].partner);
  }
}

// --------------------------------------------------------------------------- pairing losses

TEST_CASE("loss_gr") {
  Graph<double> g;
  const std::vector<Index> partners{1, 0, 0};
  auto same = probs_const(g, rows({{1, 0}, {1, 0}, {1, 0}}));
  CHECK(loss_gr(same, std::span<const Index>(partners)).value().item() == doctest::Approx(0.0).epsilon(1e-7));
  auto ortho = probs_const(g, rows({{1, 0}, {0, 1}, {1, 0}}));
  const std::vector<Index> cross{1, 0, 1};
  CHECK(loss_gr(ortho, std::span<const Index>(cross)).value().item() ==
        doctest::Approx(-std::log(kLogEps)));
  auto half = probs_const(g, rows({{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}}));
  CHECK(loss_gr(half, std::span<const Index>(partners)).value().item() ==
        doctest::Approx(0.6931471605599454).epsilon(1e-12));
}

TEST_CASE("loss_glv") {
  Graph<double> g;
  SUBCASE("no partner anywhere") {
    PairAssignment a;
    a.pairs.resize(3);
    const std::vector<int> labels{0, -1, -1};
    auto p = probs_const(g, rows({{0.5, 0.5}, {0.2, 0.8}, {0.9, 0.1}}));
    CHECK(loss_glv(p, a, labels).value().item() == 0.0);
  }
  SUBCASE("single labeled pair with identical one-hots") {
    PairAssignment a;
    a.pairs = {{1, PartnerKind::labeled_same_class}, {0, PartnerKind::labeled_same_class}};
    const std::vector<int> labels{1, 1};
    auto p = probs_const(g, rows({{0, 1}, {0, 1}}));
    CHECK(loss_glv(p, a, labels).value().item() == doctest::Approx(0.0).epsilon(1e-7));
  }
  SUBCASE("2 labeled + 2 unlabeled hand value") {
    PairAssignment a;
    a.pairs = {{1, PartnerKind::labeled_same_class},
               {0, PartnerKind::labeled_same_class},
               {3, PartnerKind::voted_unlabeled, true},
               {}};
    const std::vector<int> labels{0, 0, -1, -1};
    auto p = probs_const(g, rows({{0.7, 0.2, 0.1}, {0.6, 0.3, 0.1}, {0.1, 0.8, 0.1}, {0.2, 0.7, 0.1}}));
    // independent evaluation of the weighted sum (1/n labeled terms + 1/m agreed terms)
    CHECK(loss_glv(p, a, labels).value().item() == doctest::Approx(0.9771662300359114).epsilon(1e-12));
  }
}

TEST_CASE("vote filtering never increases the pairing loss") {
  std::mt19937_64 rng(8);
  const std::vector<int> labels{0, 0, 1, 1, -1, -1, -1, -1};
  for (int trial = 0; trial < 20; ++trial) {
    const RowMatrix<double> global = random_tensor({8, 6}, rng).matrix();
    const RowMatrix<double> local = random_tensor({8, 6 * 9}, rng, 0.0, 1.0).matrix();
    const auto t = similarity_tables(global, local, 3);
    Rng r(static_cast<std::uint64_t>(trial));
    const PairAssignment voted = select_pairs(labels, t.global, t.local, r);
    PairAssignment unfiltered = voted;
    for (std::size_t i = 4; i < 8; ++i) unfiltered.pairs[i].partner = unfiltered.pairs[i].global_top1;
    Graph<double> g;
    auto p = probs_const(g, random_probs(8, 4, rng));
    CHECK(loss_glv(p, voted, labels).value().item() <= loss_glv(p, unfiltered, labels).value().item());
  }
}

TEST_CASE("pairing gradient reaches both members of a pair") {
  std::mt19937_64 rng(10);
  Tensor<double> logits = random_tensor({4, 3}, rng);
  PairAssignment a;
  a.pairs = {{}, {}, {3, PartnerKind::voted_unlabeled, true}, {}};
  const std::vector<int> labels{0, 1, -1, -1};
  Graph<double> g;
  g.backward(loss_glv(softmax(g.parameter(logits)), a, labels));
  const auto grad = Tensor<double>({4, 3}, *logits.grad()).matrix();
  CHECK(grad.row(2).norm() > 0.0);
  CHECK(grad.row(3).norm() > 0.0);
  CHECK(grad.row(0).norm() == 0.0);
}

TEST_CASE("grad_check of pairing losses") {
  std::mt19937_64 rng(400);
  const std::vector<int> labels{0, 0, -1, -1};
  double worst_gr = 0, worst_glv = 0;
  for (int point = 0; point < 10; ++point) {
    const RowMatrix<double> global = random_tensor({4, 5}, rng).matrix();
    const RowMatrix<double> local = random_tensor({4, 5 * 9}, rng, 0.0, 1.0).matrix();
    const auto t = similarity_tables(global, local, 3);
    Rng r(static_cast<std::uint64_t>(point));
    const PairAssignment assign = select_pairs(labels, t.global, t.local, r);
    const std::vector<Index> top = top1_partners(t.global);
    Tensor<double> logits = random_tensor({4, 6}, rng, -2, 2);
    worst_gr = std::max(worst_gr, grad_check([&](Graph<double>&, const std::vector<Var<double>>& v) {
                          return loss_gr(softmax(v[0]), std::span<const Index>(top));
                        }, {logits}));
    worst_glv = std::max(worst_glv, grad_check([&](Graph<double>&, const std::vector<Var<double>>& v) {
                           return loss_glv(softmax(v[0]), assign, labels);
                         }, {logits}));
  }
  CHECK(worst_gr < 1e-4);
  CHECK(worst_glv < 1e-4);
}

// --------------------------------------------------------------------------- pseudo-labels

TEST_CASE("gumbel_softmax") {
  Rng rng(2718);
  SUBCASE("degenerate distribution") {
    Vec<double> p(3);
    p << 1 - 2 * kLogEps, kLogEps, kLogEps;
    int hits = 0;
    for (int i = 0; i < 10000; ++i) {
      Index c;
      gumbel_softmax(p, 1.0, rng).maxCoeff(&c);
      hits += c == 0;
    }
    CHECK(hits > 9990);
  }
  SUBCASE("argmax frequencies follow p") {
    Vec<double> p(3);
    p << 0.5, 0.3, 0.2;
    Vec<double> freq = Vec<double>::Zero(3);
    for (int i = 0; i < 10000; ++i) {
      const Vec<double> y = gumbel_softmax(p, 1.0, rng);
      CHECK(std::abs(y.sum() - 1.0) < 1e-9);
      Index c;
      y.maxCoeff(&c);
      freq[c] += 1e-4;
    }
    CHECK((freq - p).cwiseAbs().maxCoeff() < 0.02);
  }
  SUBCASE("temperature must be positive") {
    CHECK_THROWS_AS(gumbel_softmax(Vec<double>::Constant(2, 0.5), 0.0, rng), NumericError);
  }
}

TEST_CASE("confidence_weight") {
  Vec<double> onehot = Vec<double>::Unit(4, 2);
  CHECK(confidence_weight(onehot, onehot) == 1.0);
  Rng rng(4);
  const Vec<double> uniform = Vec<double>::Constant(5, 0.2);
  for (int i = 0; i < 20; ++i) CHECK(soft_pseudo_label(uniform, 1.0, rng).lambda == 0.2);
  Vec<double> p(2), y(2);
  p << 0.6, 0.4;
  y << 0.1, 0.9;
  CHECK(confidence_weight(p, y) == 0.4);
}

TEST_CASE("loss_csp") {
  Graph<double> g;
  SUBCASE("one-hot target equal to prediction") {
    PseudoLabel pl{Vec<double>::Unit(3, 1), 1.0, 1};
    auto p = probs_const(g, rows({{0, 1, 0}}));
    CHECK(loss_csp(p, std::span<const PseudoLabel>(&pl, 1)).value().item() ==
          doctest::Approx(0.0).epsilon(1e-7));
  }
  SUBCASE("zero confidence") {
    std::vector<PseudoLabel> pls(2, PseudoLabel{Vec<double>::Constant(2, 0.5), 0.0, 0});
    auto p = probs_const(g, rows({{0.3, 0.7}, {0.9, 0.1}}));
    CHECK(loss_csp(p, std::span<const PseudoLabel>(pls)).value().item() == 0.0);
  }
  SUBCASE("hand value") {
    Vec<double> target(2);
    target << 0.7, 0.3;
    PseudoLabel pl{target, 0.5, 0};
    auto p = probs_const(g, rows({{0.5, 0.5}}));
    CHECK(loss_csp(p, std::span<const PseudoLabel>(&pl, 1)).value().item() ==
          doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-7));
  }
}

TEST_CASE("loss_csp treats the pseudo-label as a constant") {
  std::mt19937_64 rng(17);
  Tensor<double> logits = random_tensor({3, 4}, rng);
  std::vector<PseudoLabel> pls;
  Rng r(9);
  {
    Graph<double> g;
    auto p = softmax(g.constant(logits)).value().matrix();
    for (Index i = 0; i < 3; ++i) pls.push_back(soft_pseudo_label(p.row(i).transpose(), 1.0, r));
  }
  Graph<double> g;
  auto probs = softmax(g.parameter(logits));
  g.backward(loss_csp(probs, std::span<const PseudoLabel>(pls)));
  // d/dz of -lambda * sum_c y_c log softmax(z)_c with y fixed = -lambda (y - p) / m
  const auto P = probs.value().matrix();
  const auto grad = Tensor<double>({3, 4}, *logits.grad()).matrix();
  for (Index i = 0; i < 3; ++i) {
    const Vec<double> expected = -pls[static_cast<std::size_t>(i)].lambda *
                                 (pls[static_cast<std::size_t>(i)].target - P.row(i).transpose()) / 3.0;
    CHECK((grad.row(i).transpose() - expected).cwiseAbs().maxCoeff() < 1e-7);
  }
}

TEST_CASE("loss_csp is nonnegative and grad-checks") {
  std::mt19937_64 rng(55);
  double worst = 0;
  for (int point = 0; point < 10; ++point) {
    Tensor<double> logits = random_tensor({5, 4}, rng, -2, 2);
    std::vector<PseudoLabel> pls;
    Rng r(static_cast<std::uint64_t>(point));
    const RowMatrix<double> p = random_probs(5, 4, rng);
    for (Index i = 0; i < 5; ++i) pls.push_back(soft_pseudo_label(p.row(i).transpose(), 1.0, r));
    auto f = [&](Graph<double>&, const std::vector<Var<double>>& v) {
      return loss_csp(softmax(v[0]), std::span<const PseudoLabel>(pls));
    };
    Graph<double> g;
    CHECK(f(g, {g.constant(logits)}).value().item() >= 0.0);
    worst = std::max(worst, grad_check(f, {logits}));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("hard_pseudo_baseline") {
  const auto probs = rows({{0.96, 0.04}, {0.5, 0.5}, {0.3, 0.7}});
  const auto hard = hard_pseudo_baseline(probs, 0.95);
  CHECK(hard[0].lambda == 1.0);
  CHECK(hard[0].target[0] == 1.0);
  CHECK(hard[1].lambda == 0.0);
  CHECK(hard[2].lambda == 0.0);
  for (const auto& pl : hard_pseudo_baseline(probs, 0.0)) CHECK(pl.lambda == 1.0);
  CHECK(hard_pseudo_baseline(probs, 0.0)[2].hard_class == 1);
}

// --------------------------------------------------------------------------- objective

TEST_CASE("loss_ce") {
  Graph<double> g;
  const std::vector<int> y01{0, 1};
  CHECK(loss_ce(probs_const(g, rows({{1, 0}, {0, 1}})), y01).value().item() ==
        doctest::Approx(0.0).epsilon(1e-7));
  const std::vector<int> any{3, 7, 0};
  auto uniform = probs_const(g, RowMatrix<double>::Constant(3, 10, 0.1));
  CHECK(loss_ce(uniform, any).value().item() == doctest::Approx(std::log(10.0)).epsilon(1e-7));
  CHECK(loss_ce(probs_const(g, rows({{0.5, 0.5}, {0.75, 0.25}})), y01).value().item() ==
        doctest::Approx(1.0397207708399179).epsilon(1e-7));
  const std::vector<int> bad{0, 2};
  CHECK_THROWS_AS(loss_ce(probs_const(g, rows({{1, 0}, {0, 1}})), bad), ShapeError);
}

TEST_CASE("loss_ce_logits agrees with the probability form") {
  std::mt19937_64 rng(41);
  const std::vector<int> y{2, 0, 4, 1};
  for (int t = 0; t < 20; ++t) {
    Graph<double> g;
    const Var<double> z = g.constant(random_tensor({4, 5}, rng, -3.0, 3.0));
    CHECK(loss_ce_logits(z, y).value().item() ==
          doctest::Approx(loss_ce(softmax(z), y).value().item()).epsilon(1e-6));
  }
  Graph<double> g;
  const std::vector<int> bad{0, 5};
  CHECK_THROWS_AS(loss_ce_logits(g.constant(Tensor<double>({2, 5})), bad), ShapeError);
}

TEST_CASE("loss_ce_logits keeps a gradient on a saturated wrong row") {
  Tensor<float> z({1, 3}, {0.0f, 200.0f, 0.0f});
  z.set_requires_grad(true);
  const std::vector<int> y{0};
  {
    Graph<float> g;
    g.backward(loss_ce(softmax(g.parameter(z)), y));
    CHECK(std::abs(z.grad()->coeff(0)) < 1e-6f);  // the probability form has underflowed
  }
  z.clear_grad();
  Graph<float> g;
  g.backward(loss_ce_logits(g.parameter(z), y));
  CHECK(z.grad()->coeff(0) == doctest::Approx(-1.0));
  CHECK(z.grad()->coeff(1) == doctest::Approx(1.0));
}

TEST_CASE("regularizer") {
  Graph<double> g;
  const Vec<double> uniform10 = uniform_prior(10);
  // matching prior leaves only the log epsilon, about C * 1e-8
  CHECK(std::abs(regularizer(probs_const(g, RowMatrix<double>::Constant(4, 10, 0.1)), uniform10)
                     .value()
                     .item()) < 1e-6);
  RowMatrix<double> onehot = RowMatrix<double>::Zero(3, 10);
  onehot.col(4).setOnes();
  CHECK(regularizer(probs_const(g, onehot), uniform10).value().item() ==
        doctest::Approx(std::log(10.0)).epsilon(1e-7));
  CHECK(regularizer(probs_const(g, rows({{0.9, 0.1}, {0.5, 0.5}})), uniform_prior(2)).value().item() ==
        doctest::Approx(0.08228287850505178).epsilon(1e-7));

  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t)
    CHECK(regularizer(probs_const(g, random_probs(6, 4, rng)), uniform_prior(4)).value().item() >= 0.0);

  const Index counts[] = {10, 1, 1};
  const Vec<double> prior = count_prior(counts);
  CHECK(prior[0] == doctest::Approx(10.0 / 12.0));
  const Index empty[] = {3, 0};
  CHECK_THROWS_AS(count_prior(empty), ConfigError);
}

TEST_CASE("total_loss") {
  LossWeights w;
  const LossComponents<double> c{1.0, 0.5, 0.2, 0.1};
  LossWeights zero = w;
  zero.eta1 = zero.eta2 = zero.eta3 = 0;
  CHECK(total_loss(c, zero) == 1.0);
  CHECK(total_loss(LossComponents<double>{}, w) == 0.0);
  CHECK(total_loss(c, w) == doctest::Approx(1.7));

  // monotone in each component with nonnegative weights
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 2);
  for (int t = 0; t < 50; ++t) {
    LossComponents<double> a{u(rng), u(rng), u(rng), u(rng)};
    LossWeights ww{u(rng), u(rng), u(rng), PairingMode::glv, PseudoMode::csp};
    const double base = total_loss(a, ww);
    for (double* field : {&a.ce, &a.pairing, &a.pseudo, &a.prior}) {
      *field += 0.3;
      CHECK(total_loss(a, ww) >= base);
      *field -= 0.3;
    }
  }

  LossWeights bad;
  bad.eta2 = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("grad_check of cross-entropy, prior term and the combined objective") {
  std::mt19937_64 rng(90);
  const std::vector<int> labels{0, 2, 1, -1, -1, -1};
  const std::vector<int> labeled{0, 2, 1};
  const Vec<double> prior = uniform_prior(5);
  double worst_ce = 0, worst_r = 0, worst_total = 0;
  for (int point = 0; point < 10; ++point) {
    Tensor<double> logits = random_tensor({6, 5}, rng, -2, 2);
    const RowMatrix<double> global = random_tensor({6, 4}, rng).matrix();
    const RowMatrix<double> local = random_tensor({6, 4 * 9}, rng, 0.0, 1.0).matrix();
    const auto t = similarity_tables(global, local, 3);
    Rng r(static_cast<std::uint64_t>(point));
    const PairAssignment assign = select_pairs(labels, t.global, t.local, r);
    std::vector<PseudoLabel> pls;
    const RowMatrix<double> pu = random_probs(3, 5, rng);
    for (Index i = 0; i < 3; ++i) pls.push_back(soft_pseudo_label(pu.row(i).transpose(), 1.0, r));

    worst_ce = std::max(worst_ce, grad_check([&](Graph<double>&, const std::vector<Var<double>>& v) {
                          return loss_ce(softmax(slice(v[0], 0, 0, 3)), labeled);
                        }, {logits}));
    worst_ce = std::max(worst_ce, grad_check([&](Graph<double>&, const std::vector<Var<double>>& v) {
                          return loss_ce_logits(slice(v[0], 0, 0, 3), labeled);
                        }, {logits}));
    worst_r = std::max(worst_r, grad_check([&](Graph<double>&, const std::vector<Var<double>>& v) {
                         return regularizer(softmax(v[0]), prior);
                       }, {logits}));
    worst_total = std::max(worst_total, grad_check([&](Graph<double>&, const std::vector<Var<double>>& v) {
                             auto p = softmax(v[0]);
                             LossComponents<Var<double>> c{
                                 loss_ce(slice(p, 0, 0, 3), labeled), loss_glv(p, assign, labels),
                                 loss_csp(slice(p, 0, 3, 6), std::span<const PseudoLabel>(pls)),
                                 regularizer(p, prior)};
                             return total_loss(c, LossWeights{});
                           }, {logits}));
    // as assembled by the trainer: CE from logits, the other terms from probabilities
    worst_total = std::max(worst_total, grad_check([&](Graph<double>&, const std::vector<Var<double>>& v) {
                             auto p = softmax(v[0]);
                             LossComponents<Var<double>> c{
                                 loss_ce_logits(slice(v[0], 0, 0, 3), labeled), loss_glv(p, assign, labels),
                                 loss_csp(slice(p, 0, 3, 6), std::span<const PseudoLabel>(pls)),
                                 regularizer(p, prior)};
                             return total_loss(c, LossWeights{});
                           }, {logits}));
  }
  CHECK(worst_ce < 1e-4);
  CHECK(worst_r < 1e-4);
  CHECK(worst_total < 1e-4);
}
