#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "owdfa/adam.hpp"
#include "owdfa/autodiff.hpp"
#include "owdfa/gradcheck.hpp"
#include "grad_cases.hpp"
#include "test_util.hpp"

using namespace owdfa;
using namespace owdfa::testing;

TEST_CASE("relu and softmax forward") {
  Graph<double> g;
  auto r = relu(g.constant(Tensor<double>({3}, {-1, 0, 2})));
  CHECK(r.value()[0] == 0.0);
  CHECK(r.value()[1] == 0.0);
  CHECK(r.value()[2] == 2.0);

  auto s = softmax(g.constant(Tensor<double>({3}, {0, 0, 0})));
  for (Index i = 0; i < 3; ++i) CHECK(s.value()[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("conv2d same padding on ones") {
  Graph<double> g;
  auto x = g.constant(Tensor<double>::constant({1, 1, 3, 3}, 1.0));
  auto w = g.constant(Tensor<double>::constant({1, 1, 3, 3}, 1.0));
  auto b = g.constant(Tensor<double>({1}));
  auto y = conv2d(x, w, b);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  // window sums: corners see 4 cells, edges 6, center 9
  const double expected[9] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
  for (Index i = 0; i < 9; ++i) CHECK(y.value()[i] == expected[i]);
}

TEST_CASE("shape errors name the op and shapes") {
  Graph<double> g;
  auto a = g.constant(Tensor<double>({2, 3}));
  auto b = g.constant(Tensor<double>({3, 2}));
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[3, 2]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  auto fm = g.constant(Tensor<double>({1, 2, 12, 12}));
  CHECK_THROWS_AS(adaptive_avg_pool2d(fm, 5), ShapeError);
  CHECK_NOTHROW(adaptive_avg_pool2d(fm, 3));
}

TEST_CASE("non-finite output is an error") {
  Graph<double> g;
  auto x = g.constant(Tensor<double>({2}, {-1.0, 1.0}));
  CHECK_THROWS_AS(log(x), NumericError);
  auto big = g.constant(Tensor<double>({1}, {1e6}));
  CHECK_THROWS_AS(exp(big), NumericError);
}

TEST_CASE("backward basics") {
  SUBCASE("sum gives ones") {
    Tensor<double> x = Tensor<double>::constant({2, 3}, 0.7);
    Graph<double> g;
    g.backward(sum(g.parameter(x)));
    REQUIRE(x.grad());
    CHECK(x.grad()->isOnes());
  }
  SUBCASE("sum of squares gives 2x") {
    Tensor<double> x({3}, {1, 2, 3});
    Graph<double> g;
    auto v = g.parameter(x);
    g.backward(sum(v * v));
    CHECK(*x.grad() == Vec<double>((Vec<double>(3) << 2, 4, 6).finished()));
  }
}

TEST_CASE("backward misuse is rejected") {
  Tensor<double> x = Tensor<double>::constant({2}, 1.0);
  SUBCASE("non-scalar loss") {
    Graph<double> g;
    CHECK_THROWS_AS(g.backward(g.parameter(x) * g.parameter(x)), GraphError);
  }
  SUBCASE("detached loss") {
    Graph<double> g;
    CHECK_THROWS_AS(g.backward(sum(g.constant(x))), GraphError);
  }
  SUBCASE("loss from another graph") {
    Graph<double> g1, g2;
    auto loss = sum(g1.parameter(x));
    CHECK_THROWS_AS(g2.backward(loss), GraphError);
  }
  SUBCASE("second backward on the same graph") {
    Graph<double> g;
    auto loss = sum(g.parameter(x));
    g.backward(loss);
    x.clear_grad();
    CHECK_THROWS_AS(g.backward(loss), GraphError);
  }
  SUBCASE("gradient not reset between passes") {
    {
      Graph<double> g;
      g.backward(sum(g.parameter(x)));
    }
    Graph<double> g;
    auto loss = sum(g.parameter(x));
    CHECK_THROWS_AS(g.backward(loss), GraphError);
    x.clear_grad();
    Graph<double> g2;
    CHECK_NOTHROW(g2.backward(sum(g2.parameter(x))));
  }
}

TEST_CASE("backward is linear in the loss") {
  std::mt19937_64 rng(11);
  Tensor<double> x = random_tensor({4, 5}, rng);
  Tensor<double> w = random_tensor({5, 3}, rng);
  auto f = [&](Graph<double>& g) { return sum(softmax(matmul(g.parameter(x), g.parameter(w)))); };
  auto h = [&](Graph<double>& g) { return sum(relu(matmul(g.parameter(x), g.parameter(w)))); };

  Vec<double> gf, gh, gsum;
  {
    Graph<double> g;
    g.backward(f(g));
    gf = *x.grad();
    x.clear_grad();
    w.clear_grad();
  }
  {
    Graph<double> g;
    g.backward(h(g));
    gh = *x.grad();
    x.clear_grad();
    w.clear_grad();
  }
  {
    Graph<double> g;
    g.backward(f(g) + h(g));
    gsum = *x.grad();
  }
  CHECK((gsum - (gf + gh)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("softmax rows are distributions") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Graph<double> g;
    auto p = softmax(g.constant(random_tensor({6, 9}, rng, -20, 20)));
    const auto P = p.value().matrix();
    CHECK(P.minCoeff() >= 0.0);
    CHECK((P.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("avg_pool2d then upsample preserves block means") {
  std::mt19937_64 rng(5);
  Graph<double> g;
  auto x = g.constant(random_tensor({2, 3, 12, 12}, rng));
  for (Index k : {1, 2, 3, 4, 6, 12}) {
    auto pooled = avg_pool2d(x, k);
    auto again = avg_pool2d(upsample_repeat(pooled, k), k);
    // k*k repeated additions round, so equality holds to a few ulps
    CHECK((again.value().data() - pooled.value().data()).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("structural ops") {
  Graph<double> g;
  auto a = g.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  auto b = g.constant(Tensor<double>({1, 2}, {5, 6}));
  std::vector<Var<double>> parts{a, b};
  auto c = concat<double>(parts, 0);
  CHECK(c.shape() == Shape{3, 2});
  CHECK(c.value()[4] == 5.0);
  auto s = slice(c, 1, 1, 2);
  CHECK(s.shape() == Shape{3, 1});
  CHECK(s.value()[2] == 6.0);
  std::vector<Index> rows{2, 0, 2};
  auto t = take_rows(c, std::span<const Index>(rows));
  CHECK(t.value()[0] == 5.0);
  CHECK(t.value()[2] == 1.0);
  CHECK_THROWS_AS(reshape(a, {3}), ShapeError);
  auto n = l2_norm(g.constant(Tensor<double>({2, 2}, {3, 4, 0, 0})), 1);
  CHECK(n.value()[0] == 5.0);
  CHECK(n.value()[1] == 0.0);
}

TEST_CASE("grad_check on every primitive") {
  std::mt19937_64 rng(2024);
  for (const GradCase& c : primitive_grad_cases()) {
    double worst = 0.0;
    for (int point = 0; point < 10; ++point) {
      std::vector<Tensor<double>> inputs;
      for (const Shape& s : c.shapes) inputs.push_back(random_tensor(s, rng, c.lo, 1.0));
      worst = std::max(worst, grad_check(c.f, inputs));
    }
    INFO(c.name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("grad_check of an exact quadratic") {
  std::mt19937_64 rng(1);
  auto f = [](Graph<double>&, const std::vector<Var<double>>& v) { return sum(v[0] * v[0]); };
  CHECK(grad_check(f, {random_tensor({10}, rng)}) < 1e-8);
  auto vec = [](Graph<double>&, const std::vector<Var<double>>& v) { return v[0] * v[0]; };
  CHECK_THROWS_AS(grad_check(vec, {random_tensor({3}, rng)}), GraphError);
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves params unchanged") {
    Tensor<float> p({3}, {1.f, -2.f, 3.f});
    const Vec<float> before = p.data();
    AdamState<float> st;
    Tensor<float>* params[] = {&p};
    for (int i = 0; i < 5; ++i) {
      p.set_grad(Vec<float>::Zero(3));
      adam_step<float>(params, st);
    }
    CHECK(p.data() == before);
    CHECK(st.step == 5);
  }
  SUBCASE("first bias-corrected step") {
    Tensor<double> p({1}, {1.0});
    p.set_grad(Vec<double>::Ones(1));
    AdamState<double> st;
    st.lr = 0.1;
    Tensor<double>* params[] = {&p};
    adam_step<double>(params, st);
    // m_hat = v_hat = 1, step = lr / (1 + eps)
    CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(st.step == 1);
  }
  SUBCASE("deterministic") {
    auto run = [] {
      std::mt19937_64 rng(77);
      Tensor<double> p = random_tensor({8}, rng);
      AdamState<double> st;
      Tensor<double>* params[] = {&p};
      for (int i = 0; i < 20; ++i) {
        p.set_grad(random_tensor({8}, rng).data());
        adam_step<double>(params, st);
      }
      return p.data();
    };
    CHECK(run() == run());
  }
  SUBCASE("shape mismatch") {
    Tensor<double> p({2}), q({3});
    AdamState<double> st;
    Tensor<double>* one[] = {&p};
    adam_step<double>(one, st);
    Tensor<double>* other[] = {&q};
    CHECK_THROWS_AS(adam_step<double>(other, st), ShapeError);
    st.lr = 0.0;
    CHECK_THROWS_AS(adam_step<double>(one, st), NumericError);
  }
}
