#pragma once

#include <span>
#include <vector>

#include "owdfa/autodiff.hpp"
#include "owdfa/gradcheck.hpp"

namespace owdfa::testing {

struct GradCase {
  const char* name;
  std::vector<Shape> shapes;
  GradCheckFn f;
  double lo = -1.0;  // inputs uniform in [lo, 1]
};

// One scalar function per tensor primitive.
inline std::vector<GradCase> primitive_grad_cases() {
  using V = std::vector<Var<double>>;
  return {
    {"add", {{3, 4}, {3, 4}}, [](Graph<double>&, const V& v) { return sum(softmax(v[0] + v[1])); }},
    {"sub", {{3, 4}, {3, 4}}, [](Graph<double>&, const V& v) { return sum(exp(v[0] - v[1])); }},
    {"mul", {{3, 4}, {3, 4}}, [](Graph<double>&, const V& v) { return sum(v[0] * v[1]); }},
    {"div", {{3, 4}, {3, 4}}, [](Graph<double>&, const V& v) { return sum(div(v[0], v[1])); }, 0.5},
    {"scale", {{5}}, [](Graph<double>&, const V& v) { return sum(exp(scale(v[0], 1.7))); }},
    {"add_scalar", {{5}}, [](Graph<double>&, const V& v) { return sum(log(add_scalar(v[0], 2.0))); }},
    {"exp", {{2, 3}}, [](Graph<double>&, const V& v) { return sum(exp(v[0])); }},
    {"log", {{2, 3}}, [](Graph<double>&, const V& v) { return sum(log(v[0])); }, 0.2},
    {"relu", {{4, 4}}, [](Graph<double>&, const V& v) { return sum(relu(v[0]) * v[0]); }},
    {"sum_axis", {{2, 3, 4}}, [](Graph<double>&, const V& v) { return sum(exp(sum(v[0], 1))); }},
    {"mean", {{2, 3, 4}}, [](Graph<double>&, const V& v) { return mean(exp(mean(v[0], 2))); }},
    {"matmul", {{3, 4}, {4, 2}}, [](Graph<double>&, const V& v) { return sum(exp(matmul(v[0], v[1]))); }},
    {"add_bias", {{3, 4}, {4}}, [](Graph<double>&, const V& v) { return sum(exp(add_bias(v[0], v[1]))); }},
    {"conv2d", {{2, 2, 5, 5}, {3, 2, 3, 3}, {3}},
     [](Graph<double>&, const V& v) { return sum(exp(scale(conv2d(v[0], v[1], v[2]), 0.3))); }},
    {"avg_pool2d", {{2, 2, 4, 4}}, [](Graph<double>&, const V& v) { return sum(exp(avg_pool2d(v[0], 2))); }},
    {"adaptive_avg_pool2d", {{1, 2, 6, 6}},
     [](Graph<double>&, const V& v) { return sum(exp(adaptive_avg_pool2d(v[0], 3))); }},
    {"upsample_repeat", {{1, 2, 2, 2}},
     [](Graph<double>&, const V& v) { return sum(exp(upsample_repeat(v[0], 2))); }},
    {"softmax", {{3, 5}, {3, 5}}, [](Graph<double>&, const V& v) { return sum(softmax(v[0]) * v[1]); }},
    {"log_softmax", {{3, 5}, {3, 5}}, [](Graph<double>&, const V& v) { return sum(log_softmax(v[0]) * v[1]); }},
    {"l2_norm", {{3, 4}}, [](Graph<double>&, const V& v) { return sum(l2_norm(v[0], 1)); }},
    {"concat", {{2, 3}, {1, 3}},
     [](Graph<double>&, const V& v) { return sum(exp(concat<double>(std::span<const Var<double>>(v), 0))); }},
    {"slice", {{4, 3}}, [](Graph<double>&, const V& v) { return sum(exp(slice(v[0], 0, 1, 3))); }},
    {"take_rows", {{4, 3}},
     [](Graph<double>&, const V& v) {
       const std::vector<Index> rows{3, 1, 3};
       return sum(exp(take_rows(v[0], std::span<const Index>(rows))));
     }},
    {"reshape", {{2, 6}}, [](Graph<double>&, const V& v) { return sum(softmax(reshape(v[0], {3, 4}))); }},
  };
}

}  // namespace owdfa::testing
